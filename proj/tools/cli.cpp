#include "cli.hpp"

#include <csba/geometry.hpp>
#include <csba/pipeline.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

namespace csba::cli {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path);
  return in;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

bool has_suffix(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

struct SolveFlags {
  std::string input;
  std::string output;
  std::string gt;
  bool depth_from_gt = false;
  bool filter = false;
  bool xm2 = false;
  double lambda = 0.0;
  std::uint64_t seed = 0;
  int max_rank = 10;
  double grad_tol = 1e-8;
  std::string init = "identity";
  std::string trace;
  bool verbose_certificate = false;
};

struct Loaded {
  ViewGraph graph;
  std::optional<GroundTruth> truth;
  GraphDiagnostics diag;
};

Loaded load_input(const SolveFlags& f) {
  Loaded out;
  if (has_suffix(f.input, ".json")) {
    auto in = open_in(f.input);
    out.graph = read_graph_json(in, &out.diag);
  } else {
    if (!f.depth_from_gt) throw Error("BAL input needs --depth-from-gt");
    const BalData bal = read_bal_file(f.input);
    const DepthMap depths = depths_from_ground_truth(bal.graph, bal.ground_truth, &out.diag);
    out.graph = lift_to_3d(bal.graph, depths, nullptr, &out.diag);
    out.truth = bal.ground_truth;
  }
  if (!f.gt.empty()) {
    auto in = open_in(f.gt);
    out.truth = read_ground_truth_json(in);
  }
  return out;
}

json config_echo(const SolveFlags& f) {
  return {{"input", f.input},       {"output", f.output},       {"gt", f.gt},
          {"depth_from_gt", f.depth_from_gt}, {"filter", f.filter}, {"xm2", f.xm2},
          {"lambda", f.lambda},     {"seed", f.seed},           {"max_rank", f.max_rank},
          {"grad_tol", f.grad_tol}, {"init", f.init},           {"trace", f.trace},
          {"verbose_certificate", f.verbose_certificate}};
}

// Closed-form registration of the two frames' shared points, compared with
// the solver's relative pose.
json two_frame_check(const ViewGraph& g, const Solution& sol) {
  std::map<int, const Edge*> first;
  for (const Edge& e : g.edges()) {
    if (e.frame == 0) first[e.landmark] = &e;
  }
  std::vector<Vector3> src, dst;
  std::vector<double> w;
  for (const Edge& e : g.edges()) {
    const auto it = first.find(e.landmark);
    if (e.frame != 1 || it == first.end()) continue;
    src.push_back(e.point);
    dst.push_back(it->second->point);
    w.push_back(e.weight * it->second->weight / (e.weight + it->second->weight));
  }
  const Similarity s = align_similarity(src, dst, w);
  return {{"rotation_error_rad", rotation_angle(sol.rotations[1], s.rotation)},
          {"scale_relative_error", std::abs(sol.scales[1] - s.scale) / s.scale},
          {"translation_error", (sol.translations[1] - s.translation).norm()}};
}

int cmd_solve(const SolveFlags& f) {
  const auto t_parse = std::chrono::steady_clock::now();
  const Loaded data = load_input(f);
  const double parse_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_parse).count();

  PipelineConfig config;
  config.enable_filter = f.filter;
  config.enable_xm2 = f.xm2;
  config.lambda_reg = f.lambda;
  config.solver.max_rank = f.max_rank;
  config.solver.seed = f.seed;
  config.solver.trust_region.gradient_tolerance = f.grad_tol;
  if (f.init == "random") {
    config.solver.random_start = true;
  } else if (f.init == "adversarial") {
    config.solver.start = adversarial_two_frame_start(build_data_matrix(data.graph).q());
  }
  std::ofstream trace_out;
  if (!f.trace.empty()) {
    trace_out = open_out(f.trace);
    config.solver.trace = [&trace_out](const TraceRecord& r) { write_trace_line(trace_out, r); };
  }
  config.validate();

  const SolveReport rep = solve(data.graph, config);
  const Solution& sol = rep.solution;
  const Certificate& c = sol.certificate;

  fs::create_directories(f.output);
  {
    auto out = open_out(fs::path(f.output) / "solution.json");
    write_solution_json(out, sol, f.verbose_certificate);
  }
  export_ply(sol, (fs::path(f.output) / "solution.ply").string());

  json report;
  report["schema_version"] = kSchemaVersion;
  report["config"] = config_echo(f);
  report["status"] = c.certified ? "certified" : "uncertified";
  report["graph"] = {{"frames", rep.graph.num_frames()},
                     {"landmarks", rep.graph.num_landmarks()},
                     {"edges", rep.graph.num_edges()},
                     {"input_edges", data.graph.num_edges()},
                     {"duplicates_dropped", data.diag.duplicates_dropped},
                     {"landmarks_removed", data.diag.landmarks_removed},
                     {"negative_depth_dropped", data.diag.negative_depth_dropped}};
  report["solution"] = {{"objective", sol.objective},
                        {"flip_count", sol.flip_count},
                        {"final_rank", rep.staircase.factor.rank()},
                        {"rank_trajectory", rep.staircase.rank_trajectory},
                        {"iterations", rep.staircase.iterations},
                        {"escapes", rep.staircase.escapes.size()},
                        {"converged", rep.staircase.converged}};
  json cert = {{"certified", c.certified},       {"min_eig", c.min_eigenvalue},
               {"eigen_residual", c.eigen_residual}, {"kkt_residual", c.kkt_residual},
               {"rho_hat", c.rho_hat},           {"rho_lower", c.rho_lower},
               {"eta", c.eta},                   {"eta_rigorous", c.eta_rigorous},
               {"q_norm", c.q_norm}};
  if (f.verbose_certificate) {
    cert["y"] = std::vector<double>(c.y.data(), c.y.data() + c.y.size());
    cert["rho_dual"] = c.rho_dual;
    cert["trace_x"] = c.trace_x;
  }
  report["certificate"] = cert;
  if (f.filter) {
    report["filter"] = {{"pairs_checked", rep.filter.pairs_checked},
                        {"edges_flagged", rep.filter.edges_flagged},
                        {"edges_removed", rep.filter.edges_removed},
                        {"edges_restored", rep.filter.edges_restored}};
  }
  if (rep.first_solution) {
    report["xm2"] = {{"dropped", rep.xm2_dropped},
                     {"first_objective", rep.first_solution->objective},
                     {"first_eta", rep.first_solution->certificate.eta},
                     {"first_certified", rep.first_solution->certificate.certified}};
  }
  const double solver_seconds = rep.timings.solve;
  report["timings"] = {{"parse", parse_seconds},     {"filter", rep.timings.filter},
                       {"build_q", rep.timings.build_q}, {"solve", solver_seconds},
                       {"recover", rep.timings.recover}};
  if (data.truth && data.truth->num_frames() == sol.num_frames() && sol.num_frames() >= 3) {
    Metrics m = compute_metrics(sol.as_poses(), *data.truth);
    m.flip_count = sol.flip_count;
    m.eta = c.eta;
    m.min_eig = c.min_eigenvalue;
    m.solver_seconds = solver_seconds;
    std::ostringstream ms;
    write_metrics_json(ms, m);
    report["metrics"] = json::parse(ms.str());
  }
  if (sol.num_frames() == 2) report["closed_form_check"] = two_frame_check(rep.graph, sol);
  {
    auto out = open_out(fs::path(f.output) / "report.json");
    out << report.dump(2) << '\n';
  }

  std::cout << (c.certified ? "certified" : "uncertified") << ": objective " << sol.objective
            << ", eta " << c.eta << ", min eig " << c.min_eigenvalue << ", rank "
            << rep.staircase.factor.rank() << ", " << solver_seconds << " s\n";
  if (sol.flip_count > 0) std::cout << "reflections projected: " << sol.flip_count << '\n';
  return c.certified ? kExitOk : kExitUncertified;
}

int cmd_synth(const SynthOptions& o, const std::string& output) {
  const SynthScene scene = synth_scene(o);
  fs::create_directories(output);
  {
    auto out = open_out(fs::path(output) / "scene.json");
    write_graph_json(out, scene.graph);
  }
  {
    auto out = open_out(fs::path(output) / "gt.json");
    write_ground_truth_json(out, scene.ground_truth);
  }
  std::cout << "wrote " << scene.graph.num_edges() << " observations of " << o.num_landmarks
            << " landmarks in " << o.num_frames << " frames to " << output << '\n';
  return kExitOk;
}

int cmd_eval(const std::string& solution, const std::string& gt, const std::string& output) {
  auto sin = open_in(solution);
  auto gin = open_in(gt);
  const GroundTruth est = read_ground_truth_json(sin);
  const GroundTruth truth = read_ground_truth_json(gin);
  const Metrics m = compute_metrics(est, truth);
  if (output.empty()) {
    write_metrics_json(std::cout, m);
  } else {
    auto out = open_out(output);
    write_metrics_json(out, m);
    std::cout << "ATE-T " << m.ate_t << ", ATE-R " << m.ate_r_deg << " deg, RPE-T " << m.rpe_t
              << ", RPE-R " << m.rpe_r_deg << " deg\n";
  }
  return kExitOk;
}

}  // namespace

void export_ply(const Solution& sol, const std::string& path) {
  auto out = open_out(path);
  out << "ply\nformat ascii 1.0\n"
      << "element vertex " << sol.points.size() + sol.translations.size() << '\n'
      << "property double x\nproperty double y\nproperty double z\n"
      << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
      << "end_header\n";
  out << std::setprecision(9);
  for (const Vector3& p : sol.points) out << p.x() << ' ' << p.y() << ' ' << p.z() << " 255 255 255\n";
  for (const Vector3& t : sol.translations) out << t.x() << ' ' << t.y() << ' ' << t.z() << " 255 0 0\n";
  if (!out) throw Error("cannot write " + path);
}

int run(const std::vector<std::string>& args) {
  CLI::App app{"Certifiable scaled bundle adjustment"};
  app.require_subcommand(1);

  SolveFlags sf;
  CLI::App* solve_cmd = app.add_subcommand("solve", "Solve a lifted view graph");
  solve_cmd->add_option("--input", sf.input, "Native JSON graph or BAL file")->required();
  solve_cmd->add_option("--output", sf.output, "Output directory")->required();
  solve_cmd->add_option("--gt", sf.gt, "Ground-truth JSON for metrics");
  solve_cmd->add_flag("--depth-from-gt", sf.depth_from_gt, "Lift BAL keypoints with ground-truth depth");
  solve_cmd->add_flag("--filter", sf.filter, "Two-view outlier filter");
  solve_cmd->add_flag("--xm2", sf.xm2, "Drop the largest residuals and solve again");
  solve_cmd->add_option("--lambda", sf.lambda, "Scale regularization weight")->check(CLI::NonNegativeNumber);
  solve_cmd->add_option("--seed", sf.seed, "Seed for random initialization");
  solve_cmd->add_option("--max-rank", sf.max_rank, "Staircase rank cap")->check(CLI::PositiveNumber);
  solve_cmd->add_option("--grad-tol", sf.grad_tol, "Gradient tolerance relative to ||Q||")
      ->check(CLI::PositiveNumber);
  solve_cmd->add_option("--init", sf.init, "Start point")
      ->check(CLI::IsMember({"identity", "random", "adversarial"}));
  solve_cmd->add_option("--trace", sf.trace, "JSON-lines solver log");
  solve_cmd->add_flag("--verbose-certificate", sf.verbose_certificate, "Include dual multipliers");

  SynthOptions so;
  std::string synth_out;
  CLI::App* synth_cmd = app.add_subcommand("synth", "Generate a random scene");
  synth_cmd->add_option("--frames", so.num_frames, "Number of frames");
  synth_cmd->add_option("--landmarks", so.num_landmarks, "Number of landmarks");
  synth_cmd->add_option("--visibility", so.visibility, "Observation probability");
  synth_cmd->add_option("--eps", so.noise_eps, "Depth noise level");
  synth_cmd->add_option("--seed", so.seed, "Random seed");
  synth_cmd->add_option("--camera-distance", so.camera_distance, "Camera sphere radius");
  synth_cmd->add_option("--scale-spread", so.scale_spread, "Scale spread factor");
  synth_cmd->add_option("--output", synth_out, "Output directory")->required();

  std::string eval_sol, eval_gt, eval_out;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Trajectory metrics against ground truth");
  eval_cmd->add_option("--solution", eval_sol, "Solution JSON")->required();
  eval_cmd->add_option("--gt", eval_gt, "Ground-truth JSON")->required();
  eval_cmd->add_option("--output", eval_out, "Metrics JSON (stdout if omitted)");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  if (!rev.empty()) rev.pop_back();  // program name
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e) == 0 ? kExitOk : kExitError;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitError;
  }

  try {
    if (solve_cmd->parsed()) return cmd_solve(sf);
    if (synth_cmd->parsed()) return cmd_synth(so, synth_out);
    if (eval_cmd->parsed()) return cmd_eval(eval_sol, eval_gt, eval_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
  return kExitError;
}

}  // namespace csba::cli
