#include <csba/pipeline.hpp>

#include <csba/geometry.hpp>

#include <Eigen/SVD>

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

namespace csba {

namespace {

using json = nlohmann::json;
constexpr int kRefitRounds = 5;
constexpr double kRadToDeg = 180.0 / 3.14159265358979323846;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

class UnionFind {
 public:
  explicit UnionFind(int n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }
  int find(int a) {
    while (parent_[a] != a) a = parent_[a] = parent_[parent_[a]];
    return a;
  }
  bool unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent_[a] = b;
    return true;
  }

 private:
  std::vector<int> parent_;
};

// Keeps the edges flagged in `keep` and adds back removed edges, cheapest
// `score` first, whenever they join two components. Returns the number of
// restored edges.
int restore_connectivity(const ViewGraph& graph, std::vector<bool>& keep,
                         const std::vector<double>& score) {
  const int nf = graph.num_frames();
  UnionFind uf(nf + graph.num_landmarks());
  int components = nf + graph.num_landmarks();
  const auto& edges = graph.edges();
  for (std::size_t e = 0; e < edges.size(); ++e) {
    if (keep[e] && uf.unite(edges[e].frame, nf + edges[e].landmark)) --components;
  }
  if (components == 1) return 0;
  std::vector<std::size_t> removed;
  for (std::size_t e = 0; e < edges.size(); ++e) {
    if (!keep[e]) removed.push_back(e);
  }
  std::stable_sort(removed.begin(), removed.end(),
                   [&](std::size_t a, std::size_t b) { return score[a] < score[b]; });
  int restored = 0;
  for (std::size_t e : removed) {
    if (components == 1) break;
    if (uf.unite(edges[e].frame, nf + edges[e].landmark)) {
      keep[e] = true;
      --components;
      ++restored;
    }
  }
  return restored;
}

// Least-squares fit on the points whose pairwise distance ratios agree best
// with the median ratio (the better half). A single far outlier has enough
// leverage to pull a plain fit through itself; it cannot move the median.
Similarity robust_start(const std::vector<Vector3>& src, const std::vector<Vector3>& dst,
                        const std::vector<double>& w) {
  const std::size_t k = src.size();
  Matrix log_ratio = Matrix::Zero(k, k);
  std::vector<double> all;
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = a + 1; b < k; ++b) {
      const double ds = (src[a] - src[b]).norm(), dt = (dst[a] - dst[b]).norm();
      const double v = ds > 0 && dt > 0 ? std::log(dt / ds) : 0.0;
      log_ratio(a, b) = log_ratio(b, a) = v;
      all.push_back(v);
    }
  }
  const double center = median(all);
  std::vector<double> dev(k);
  for (std::size_t a = 0; a < k; ++a) {
    std::vector<double> d;
    for (std::size_t b = 0; b < k; ++b) {
      if (b != a) d.push_back(std::abs(log_ratio(a, b) - center));
    }
    dev[a] = median(d);
  }
  const double cut = median(dev);
  std::vector<Vector3> in_src, in_dst;
  std::vector<double> in_w;
  for (std::size_t a = 0; a < k; ++a) {
    if (dev[a] > cut) continue;
    in_src.push_back(src[a]);
    in_dst.push_back(dst[a]);
    in_w.push_back(w[a]);
  }
  return align_similarity(in_src, in_dst, in_w);
}

}  // namespace

Similarity align_similarity(const std::vector<Vector3>& source, const std::vector<Vector3>& target,
                            const std::vector<double>& weights) {
  const std::size_t k = source.size();
  if (target.size() != k || (!weights.empty() && weights.size() != k)) {
    throw Error("alignment inputs differ in length");
  }
  if (k < 3) throw Error("alignment degenerate");
  double wsum = 0.0;
  Vector3 ms = Vector3::Zero(), mt = Vector3::Zero();
  for (std::size_t j = 0; j < k; ++j) {
    const double w = weights.empty() ? 1.0 : weights[j];
    if (!(w > 0.0)) throw Error("alignment weights must be positive");
    wsum += w;
    ms += w * source[j];
    mt += w * target[j];
  }
  ms /= wsum;
  mt /= wsum;
  Matrix3 cov = Matrix3::Zero(), src_cov = Matrix3::Zero();
  for (std::size_t j = 0; j < k; ++j) {
    const double w = (weights.empty() ? 1.0 : weights[j]) / wsum;
    const Vector3 ds = source[j] - ms;
    cov += w * (target[j] - mt) * ds.transpose();
    src_cov += w * ds * ds.transpose();
  }
  const double var = src_cov.trace();
  Eigen::SelfAdjointEigenSolver<Matrix3> spread(src_cov);
  // Needs at least two independent directions.
  if (!(var > 0.0) || !(spread.eigenvalues()(1) > 1e-12 * var)) {
    throw Error("alignment degenerate");
  }
  Eigen::JacobiSVD<Matrix3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vector3 s(1.0, 1.0, 1.0);
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0) s(2) = -1.0;
  Similarity out;
  out.rotation = svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
  out.scale = svd.singularValues().dot(s) / var;
  out.translation = mt - out.scale * out.rotation * ms;
  return out;
}

void PipelineConfig::validate() const {
  if (!(filter_multiplier > 0.0)) throw Error("filter multiplier must be positive");
  if (!(xm2_drop_fraction >= 0.0 && xm2_drop_fraction < 1.0)) {
    throw Error("drop fraction must lie in [0, 1)");
  }
  if (!(lambda_reg >= 0.0)) throw Error("regularization weight must be non-negative");
  solver.trust_region.validate();
}

// ---------------------------------------------------------------------------

ViewGraph two_view_filter(const ViewGraph& graph, double multiplier, FilterReport* report) {
  if (!(multiplier > 0.0)) throw Error("filter multiplier must be positive");
  require_connected(graph);
  const int nf = graph.num_frames();
  const auto& edges = graph.edges();
  // Edge index per (frame, landmark).
  std::vector<std::vector<int>> by_frame(nf);
  std::vector<std::map<int, int>> lookup(nf);
  for (std::size_t e = 0; e < edges.size(); ++e) {
    by_frame[edges[e].frame].push_back(static_cast<int>(e));
    lookup[edges[e].frame][edges[e].landmark] = static_cast<int>(e);
  }

  FilterReport rep;
  std::vector<int> pairs(edges.size(), 0), flags(edges.size(), 0);
  std::vector<double> score(edges.size(), 0.0);
  for (int i = 0; i < nf; ++i) {
    for (int j = i + 1; j < nf; ++j) {
      std::vector<std::pair<int, int>> shared;
      for (int ei : by_frame[i]) {
        const auto it = lookup[j].find(edges[ei].landmark);
        if (it != lookup[j].end()) shared.emplace_back(ei, it->second);
      }
      if (shared.size() < 4) continue;
      std::vector<Vector3> src, dst;
      std::vector<double> w;
      for (const auto& [ei, ej] : shared) {
        src.push_back(edges[ej].point);
        dst.push_back(edges[ei].point);
        w.push_back(edges[ei].weight * edges[ej].weight / (edges[ei].weight + edges[ej].weight));
      }
      Similarity sim;
      try {
        sim = robust_start(src, dst, w);
      } catch (const Error&) {
        continue;  // degenerate pair geometry carries no evidence
      }
      ++rep.pairs_checked;
      std::vector<double> res(shared.size());
      std::vector<bool> flagged;
      // Gross outliers drag the least-squares fit; refit on the unflagged
      // points until the flags settle.
      for (int round = 0; round < kRefitRounds; ++round) {
        for (std::size_t q = 0; q < shared.size(); ++q) res[q] = (sim.apply(src[q]) - dst[q]).norm();
        std::vector<bool> next = median_outliers(res, multiplier);
        if (next == flagged) break;
        flagged = std::move(next);
        std::vector<Vector3> in_src, in_dst;
        std::vector<double> in_w;
        for (std::size_t q = 0; q < shared.size(); ++q) {
          if (flagged[q]) continue;
          in_src.push_back(src[q]);
          in_dst.push_back(dst[q]);
          in_w.push_back(w[q]);
        }
        try {
          sim = align_similarity(in_src, in_dst, in_w);
        } catch (const Error&) {
          break;
        }
      }
      const double med = median(res);
      for (std::size_t q = 0; q < shared.size(); ++q) {
        const auto [ei, ej] = shared[q];
        ++pairs[ei];
        ++pairs[ej];
        if (med <= 1e-12) continue;
        const double ratio = res[q] / med;
        score[ei] = std::max(score[ei], ratio);
        score[ej] = std::max(score[ej], ratio);
        if (flagged[q]) {
          ++flags[ei];
          ++flags[ej];
        }
      }
    }
  }

  std::vector<bool> keep(edges.size(), true);
  for (std::size_t e = 0; e < edges.size(); ++e) {
    if (flags[e] > 0) ++rep.edges_flagged;
    if (2 * flags[e] > pairs[e]) keep[e] = false;
  }
  rep.edges_restored = restore_connectivity(graph, keep, score);
  rep.edges_removed = static_cast<int>(std::count(keep.begin(), keep.end(), false));
  if (report) *report = rep;
  return graph.subgraph(keep);
}

std::vector<bool> median_outliers(const std::vector<double>& residuals, double multiplier) {
  std::vector<bool> out(residuals.size(), false);
  if (residuals.empty()) return out;
  const double med = median(residuals);
  if (med <= 1e-12) return out;
  for (std::size_t q = 0; q < residuals.size(); ++q) out[q] = residuals[q] > multiplier * med;
  return out;
}

int drop_count(std::size_t num_edges, double fraction) {
  return static_cast<int>(std::floor(fraction * static_cast<double>(num_edges)));
}

ViewGraph prune_by_residual(const ViewGraph& graph, const std::vector<double>& residuals,
                            double fraction, int* dropped) {
  if (residuals.size() != graph.num_edges()) throw Error("one residual per edge required");
  const int target = drop_count(graph.num_edges(), fraction);
  std::vector<std::size_t> order(graph.num_edges());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return residuals[a] > residuals[b]; });
  std::vector<bool> keep(graph.num_edges(), true);
  for (int q = 0; q < target; ++q) keep[order[q]] = false;
  restore_connectivity(graph, keep, residuals);
  if (dropped) *dropped = static_cast<int>(std::count(keep.begin(), keep.end(), false));
  return graph.subgraph(keep);
}

// ---------------------------------------------------------------------------

namespace {

// Build Q, run the staircase and recover one solution.
Solution solve_once(const ViewGraph& graph, const PipelineConfig& config, StaircaseResult* out,
                    Timings* timings) {
  auto t0 = std::chrono::steady_clock::now();
  require_connected(graph);
  const DataMatrix data = build_data_matrix(graph, config.data);
  timings->build_q += seconds_since(t0);

  t0 = std::chrono::steady_clock::now();
  const Cost cost(data.q(), config.lambda_reg);
  StaircaseResult result = staircase(cost, config.solver);
  timings->solve += seconds_since(t0);

  t0 = std::chrono::steady_clock::now();
  Solution sol = recover_solution(graph, data, cost, result);
  timings->recover += seconds_since(t0);
  if (out) *out = std::move(result);
  return sol;
}

}  // namespace

SolveReport solve(const ViewGraph& graph, const PipelineConfig& config) {
  config.validate();
  SolveReport rep;
  rep.graph = graph;
  if (config.enable_filter) {
    const auto t0 = std::chrono::steady_clock::now();
    rep.graph = two_view_filter(graph, config.filter_multiplier, &rep.filter);
    rep.timings.filter = seconds_since(t0);
  }
  rep.solution = solve_once(rep.graph, config, &rep.staircase, &rep.timings);
  if (config.enable_xm2) {
    const std::vector<double> res = edge_residuals(rep.graph, rep.solution);
    rep.first_solution = std::move(rep.solution);
    rep.graph = prune_by_residual(rep.graph, res, config.xm2_drop_fraction, &rep.xm2_dropped);
    rep.solution = solve_once(rep.graph, config, &rep.staircase, &rep.timings);
  }
  return rep;
}

SolveReport xm_squared(const ViewGraph& graph, const PipelineConfig& config) {
  PipelineConfig c = config;
  c.enable_xm2 = true;
  return solve(graph, c);
}

Solution solve_regularized(const ViewGraph& graph, double lambda_reg,
                           const StaircaseOptions& options) {
  PipelineConfig c;
  c.lambda_reg = lambda_reg;
  c.solver = options;
  return solve(graph, c).solution;
}

// ---------------------------------------------------------------------------

Metrics compute_metrics(const GroundTruth& est, const GroundTruth& truth) {
  const int n = est.num_frames();
  if (n != truth.num_frames()) throw Error("frame count mismatch");
  if (n < 3) throw Error("metrics need at least 3 frames");
  Metrics m;
  m.alignment = align_similarity(est.translations, truth.translations);
  const Similarity& a = m.alignment;

  std::vector<Matrix3> rot(n);
  std::vector<Vector3> pos(n);
  for (int i = 0; i < n; ++i) {
    rot[i] = a.rotation * est.rotations[i];
    pos[i] = a.apply(est.translations[i]);
    m.ate_t_per_frame.push_back((pos[i] - truth.translations[i]).norm());
    m.ate_r_deg_per_frame.push_back(rotation_angle(rot[i], truth.rotations[i]) * kRadToDeg);
  }
  std::vector<double> rpe_t, rpe_r;
  for (int i = 0; i + 1 < n; ++i) {
    const int j = i + 1;
    const Matrix3 rel_est = rot[i].transpose() * rot[j];
    const Matrix3 rel_gt = truth.rotations[i].transpose() * truth.rotations[j];
    const Vector3 tr_est = rot[i].transpose() * (pos[j] - pos[i]);
    const Vector3 tr_gt = truth.rotations[i].transpose() * (truth.translations[j] - truth.translations[i]);
    rpe_t.push_back((tr_est - tr_gt).norm());
    rpe_r.push_back(rotation_angle(rel_est, rel_gt) * kRadToDeg);
  }
  m.ate_t = median(m.ate_t_per_frame);
  m.ate_r_deg = median(m.ate_r_deg_per_frame);
  m.rpe_t = median(rpe_t);
  m.rpe_r_deg = median(rpe_r);
  return m;
}

void write_metrics_json(std::ostream& out, const Metrics& m) {
  json rot = json::array();
  for (int r = 0; r < 3; ++r) {
    rot.push_back({m.alignment.rotation(r, 0), m.alignment.rotation(r, 1), m.alignment.rotation(r, 2)});
  }
  const Vector3& t = m.alignment.translation;
  const json doc = {{"ate_t", m.ate_t},
                    {"ate_r_deg", m.ate_r_deg},
                    {"rpe_t", m.rpe_t},
                    {"rpe_r_deg", m.rpe_r_deg},
                    {"alignment",
                     {{"scale", m.alignment.scale}, {"rotation", rot}, {"translation", {t.x(), t.y(), t.z()}}}},
                    {"flip_count", m.flip_count},
                    {"eta", m.eta},
                    {"min_eig", m.min_eig},
                    {"solver_seconds", m.solver_seconds}};
  out << doc.dump(2) << '\n';
}

void write_solution_json(std::ostream& out, const Solution& sol, bool with_dual) {
  std::ostringstream poses;
  write_ground_truth_json(poses, sol.as_poses());
  json doc = json::parse(poses.str());
  const Certificate& c = sol.certificate;
  doc["objective"] = sol.objective;
  doc["flip_count"] = sol.flip_count;
  json cert = {{"min_eigenvalue", c.min_eigenvalue}, {"kkt_residual", c.kkt_residual},
               {"rho_hat", c.rho_hat},               {"rho_dual", c.rho_dual},
               {"rho_lower", c.rho_lower},           {"eta", c.eta},
               {"eta_rigorous", c.eta_rigorous},     {"certified", c.certified}};
  if (with_dual) cert["y"] = std::vector<double>(c.y.data(), c.y.data() + c.y.size());
  doc["certificate"] = std::move(cert);
  out << doc.dump(1) << '\n';
}

}  // namespace csba
