#include <csba/viewgraph.hpp>

#include <csba/geometry.hpp>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace csba {

namespace {

void validate_edge(const Edge& e, int num_frames, int num_landmarks) {
  if (e.frame < 0 || e.frame >= num_frames || e.landmark < 0 ||
      e.landmark >= num_landmarks) {
    throw Error("edge index out of range (frame " + std::to_string(e.frame) +
                ", landmark " + std::to_string(e.landmark) + ")");
  }
  if (!(e.weight > 0.0) || !std::isfinite(e.weight)) {
    throw Error("edge weight must be positive and finite");
  }
  if (!e.point.allFinite()) throw Error("edge point is not finite");
  if (!(e.point.z() > 0.0)) throw Error("non-positive depth on edge");
}

/// Union-find over frames [0, N) followed by landmarks [N, N+M).
class DisjointSets {
 public:
  explicit DisjointSets(int n) : parent_(static_cast<std::size_t>(n)) {
    std::iota(parent_.begin(), parent_.end(), 0);
  }
  int find(int x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  bool unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent_[b] = a;
    return true;
  }

 private:
  std::vector<int> parent_;
};

}  // namespace

ViewGraph::ViewGraph(int num_frames, int num_landmarks, std::vector<Edge> edges)
    : num_frames_(num_frames), num_landmarks_(num_landmarks), edges_(std::move(edges)) {
  if (num_frames_ <= 0) throw Error("view graph needs at least one frame");
  if (num_landmarks_ <= 0) throw Error("view graph needs at least one landmark");
  if (edges_.empty()) throw Error("view graph has no edges");
  std::vector<char> frame_seen(static_cast<std::size_t>(num_frames_), 0);
  std::vector<char> landmark_seen(static_cast<std::size_t>(num_landmarks_), 0);
  std::set<ObservationKey> keys;
  for (const Edge& e : edges_) {
    validate_edge(e, num_frames_, num_landmarks_);
    if (!keys.emplace(e.frame, e.landmark).second) {
      throw Error("duplicate observation (frame " + std::to_string(e.frame) +
                  ", landmark " + std::to_string(e.landmark) + ")");
    }
    frame_seen[e.frame] = 1;
    landmark_seen[e.landmark] = 1;
  }
  for (int i = 0; i < num_frames_; ++i) {
    if (!frame_seen[i]) throw Error("frame " + std::to_string(i) + " has no observations");
  }
  for (int k = 0; k < num_landmarks_; ++k) {
    if (!landmark_seen[k]) {
      throw Error("landmark " + std::to_string(k) + " has no observations");
    }
  }
}

ViewGraph ViewGraph::sanitize(int num_frames, int num_landmarks,
                              std::vector<Edge> edges, GraphDiagnostics* diag,
                              std::vector<int>* landmark_map) {
  if (num_frames <= 0 || num_landmarks <= 0) throw Error("empty view graph");
  std::set<ObservationKey> keys;
  std::vector<Edge> kept;
  kept.reserve(edges.size());
  int duplicates = 0;
  for (Edge& e : edges) {
    validate_edge(e, num_frames, num_landmarks);
    if (!keys.emplace(e.frame, e.landmark).second) {
      ++duplicates;
      continue;
    }
    kept.push_back(std::move(e));
  }
  std::vector<int> remap(static_cast<std::size_t>(num_landmarks), -1);
  for (const Edge& e : kept) remap[e.landmark] = 0;
  int next = 0;
  for (int& r : remap) {
    if (r == 0) r = next++;
  }
  for (Edge& e : kept) e.landmark = remap[e.landmark];
  if (diag) {
    diag->duplicates_dropped += duplicates;
    diag->landmarks_removed += num_landmarks - next;
  }
  if (landmark_map) *landmark_map = remap;
  return ViewGraph(num_frames, next, std::move(kept));
}

ViewGraph ViewGraph::subgraph(const std::vector<bool>& keep) const {
  if (keep.size() != edges_.size()) throw Error("edge mask size mismatch");
  std::vector<Edge> kept;
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    if (keep[e]) kept.push_back(edges_[e]);
  }
  return ViewGraph(num_frames_, num_landmarks_, std::move(kept));
}

bool ViewGraph::operator==(const ViewGraph& other) const {
  if (num_frames_ != other.num_frames_ || num_landmarks_ != other.num_landmarks_ ||
      edges_.size() != other.edges_.size()) {
    return false;
  }
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    const Edge& a = edges_[e];
    const Edge& b = other.edges_[e];
    if (a.frame != b.frame || a.landmark != b.landmark || a.point != b.point ||
        a.weight != b.weight) {
      return false;
    }
  }
  return true;
}

void GroundTruth::validate() const {
  const std::size_t n = rotations.size();
  if (n == 0) throw Error("ground truth has no frames");
  if (translations.size() != n || scales.size() != n) {
    throw Error("ground truth frame arrays differ in length");
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double tol = i == 0 ? 1e-12 : 1e-9;
    const Matrix3& r = rotations[i];
    if ((r.transpose() * r - Matrix3::Identity()).norm() > tol ||
        std::abs(r.determinant() - 1.0) > tol) {
      throw Error("ground truth rotation " + std::to_string(i) + " is not in SO(3)");
    }
    if (!(scales[i] > 0.0)) throw Error("ground truth scale must be positive");
  }
}

void GroundTruth::anchor_first_frame() {
  if (rotations.empty()) return;
  // world' = a * G * (world - t0), with G = R0^T and a = 1 / s0.
  const Matrix3 g = rotations[0].transpose();
  const Vector3 t0 = translations[0];
  const double a = 1.0 / scales[0];
  for (std::size_t i = 0; i < rotations.size(); ++i) {
    rotations[i] = project_to_rotation(g * rotations[i]);
    translations[i] = a * g * (translations[i] - t0);
    scales[i] *= a;
  }
  for (Vector3& p : points) p = a * g * (p - t0);
  rotations[0] = Matrix3::Identity();
  translations[0] = Vector3::Zero();
  scales[0] = 1.0;
}

Vector3 camera_frame_point(const GroundTruth& gt, int frame, int landmark) {
  return gt.rotations[frame].transpose() *
         (gt.points[landmark] - gt.translations[frame]) / gt.scales[frame];
}

// ---------------------------------------------------------------------------
// BAL

BalData parse_bal(std::istream& in, const BalOptions& options) {
  std::string line;
  auto next_nonempty = [&](std::string& out) {
    while (std::getline(in, out)) {
      if (out.find_first_not_of(" \t\r") != std::string::npos) return true;
    }
    return false;
  };

  long long num_cameras = 0, num_points = 0, num_obs = 0;
  {
    if (!next_nonempty(line)) throw Error("malformed header: empty input");
    std::istringstream header(line);
    std::string extra;
    if (!(header >> num_cameras >> num_points >> num_obs) || (header >> extra) ||
        num_cameras <= 0 || num_points <= 0 || num_obs <= 0) {
      throw Error("malformed header: expected \"N M K\" with positive counts");
    }
  }

  BalData data;
  data.graph.num_frames = static_cast<int>(num_cameras);
  data.graph.num_landmarks = static_cast<int>(num_points);
  data.graph.observations.reserve(static_cast<std::size_t>(num_obs));
  std::vector<Vector2> raw(static_cast<std::size_t>(num_obs));

  for (long long k = 0; k < num_obs; ++k) {
    if (!next_nonempty(line)) throw Error("observation count mismatch");
    std::istringstream row(line);
    std::vector<std::string> tokens;
    for (std::string tok; row >> tok;) tokens.push_back(tok);
    long long cam = 0, pt = 0;
    std::size_t used = 0;
    bool ok = tokens.size() == 4;
    if (ok) {
      try {
        cam = std::stoll(tokens[0], &used);
        ok = used == tokens[0].size();
        pt = std::stoll(tokens[1], &used);
        ok = ok && used == tokens[1].size();
      } catch (const std::exception&) {
        ok = false;
      }
    }
    if (!ok) throw Error("observation count mismatch");
    if (cam < 0 || cam >= num_cameras || pt < 0 || pt >= num_points) {
      throw Error("index out of range in observation " + std::to_string(k));
    }
    double x = 0, y = 0;
    try {
      x = std::stod(tokens[2]);
      y = std::stod(tokens[3]);
    } catch (const std::exception&) {
      throw Error("malformed observation " + std::to_string(k));
    }
    if (!std::isfinite(x) || !std::isfinite(y)) throw Error("non-finite observation");
    raw[static_cast<std::size_t>(k)] = Vector2(x, y);
    data.graph.observations.push_back({static_cast<int>(cam), static_cast<int>(pt), Vector2::Zero()});
  }

  std::vector<double> params;
  params.reserve(static_cast<std::size_t>(9 * num_cameras + 3 * num_points));
  for (std::string tok; in >> tok;) {
    double v = 0;
    try {
      std::size_t used = 0;
      v = std::stod(tok, &used);
      if (used != tok.size()) throw Error("");
    } catch (const std::exception&) {
      throw Error("malformed parameter value \"" + tok + "\"");
    }
    if (!std::isfinite(v)) throw Error("non-finite parameter value");
    params.push_back(v);
  }
  if (static_cast<long long>(params.size()) != 9 * num_cameras + 3 * num_points) {
    throw Error("parameter count mismatch: expected " +
                std::to_string(9 * num_cameras + 3 * num_points) + " values, found " +
                std::to_string(params.size()));
  }

  // World-to-camera poses as stored in the file.
  std::vector<Matrix3> r_wc(static_cast<std::size_t>(num_cameras));
  std::vector<Vector3> t_wc(static_cast<std::size_t>(num_cameras));
  std::vector<double> focal(static_cast<std::size_t>(num_cameras));
  for (long long i = 0; i < num_cameras; ++i) {
    const double* c = params.data() + 9 * i;
    r_wc[i] = rotation_from_axis_angle(Vector3(c[0], c[1], c[2]));
    t_wc[i] = Vector3(c[3], c[4], c[5]);
    focal[i] = c[6];
  }
  GroundTruth& gt = data.ground_truth;
  gt.points.resize(static_cast<std::size_t>(num_points));
  for (long long k = 0; k < num_points; ++k) {
    const double* p = params.data() + 9 * num_cameras + 3 * k;
    gt.points[k] = Vector3(p[0], p[1], p[2]);
  }

  bool flip = false;
  if (options.flip_to_positive_depth) {
    // Decide the viewing direction by majority vote over the observations.
    long long negative = 0;
    for (const auto& o : data.graph.observations) {
      if ((r_wc[o.frame] * gt.points[o.landmark] + t_wc[o.frame]).z() < 0) ++negative;
    }
    flip = 2 * negative > num_obs;
  }
  const Matrix3 f = flip ? Vector3(1, -1, -1).asDiagonal().toDenseMatrix() : Matrix3::Identity();

  gt.rotations.resize(static_cast<std::size_t>(num_cameras));
  gt.translations.resize(static_cast<std::size_t>(num_cameras));
  gt.scales.assign(static_cast<std::size_t>(num_cameras), 1.0);
  for (long long i = 0; i < num_cameras; ++i) {
    gt.rotations[i] = (f * r_wc[i]).transpose();
    gt.translations[i] = -r_wc[i].transpose() * t_wc[i];
  }
  for (std::size_t k = 0; k < raw.size(); ++k) {
    auto& o = data.graph.observations[k];
    Vector2 u = raw[k];
    const double fl = focal[o.frame];
    if (options.normalize_by_focal && fl != 0.0) u /= fl;
    if (flip) u.y() = -u.y();
    o.u = u;
  }
  gt.anchor_first_frame();
  return data;
}

BalData read_bal_file(const std::string& path, const BalOptions& options) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  return parse_bal(in, options);
}

// ---------------------------------------------------------------------------
// Lifting

ViewGraph lift_to_3d(const ViewGraph2D& graph, const DepthMap& depths,
                     const WeightMap* weights, GraphDiagnostics* diag) {
  std::vector<Edge> edges;
  edges.reserve(graph.observations.size());
  for (const Observation2D& o : graph.observations) {
    const ObservationKey key{o.frame, o.landmark};
    const auto it = depths.find(key);
    if (it == depths.end()) {
      throw Error("missing depth for observation (frame " + std::to_string(o.frame) +
                  ", landmark " + std::to_string(o.landmark) + ")");
    }
    const double d = it->second;
    if (!(d > 0.0)) throw Error("non-positive depth");
    if (!o.u.allFinite()) throw Error("non-finite keypoint");
    Edge e;
    e.frame = o.frame;
    e.landmark = o.landmark;
    e.point = d * Vector3(o.u.x(), o.u.y(), 1.0);
    if (weights) {
      const auto w = weights->find(key);
      if (w != weights->end()) e.weight = w->second;
    }
    edges.push_back(e);
  }
  return ViewGraph::sanitize(graph.num_frames, graph.num_landmarks, std::move(edges), diag);
}

DepthMap depths_from_ground_truth(const ViewGraph2D& graph, const GroundTruth& gt,
                                  GraphDiagnostics* diag) {
  if (gt.num_frames() != graph.num_frames ||
      static_cast<int>(gt.points.size()) != graph.num_landmarks) {
    throw Error("ground truth does not match the graph dimensions");
  }
  DepthMap depths;
  for (const Observation2D& o : graph.observations) {
    const double z = camera_frame_point(gt, o.frame, o.landmark).z();
    if (z > 0.0) {
      depths.emplace(ObservationKey{o.frame, o.landmark}, z);
    } else if (diag) {
      ++diag->negative_depth_dropped;
    }
  }
  return depths;
}

// ---------------------------------------------------------------------------
// Connectivity

int connected_components(int num_frames, int num_landmarks, const std::vector<Edge>& edges) {
  const int n = num_frames + num_landmarks;
  DisjointSets sets(n);
  int components = n;
  for (const Edge& e : edges) {
    if (sets.unite(e.frame, num_frames + e.landmark)) --components;
  }
  return components;
}

int connected_components(const ViewGraph& graph) {
  return connected_components(graph.num_frames(), graph.num_landmarks(), graph.edges());
}

void require_connected(const ViewGraph& graph) {
  const int c = connected_components(graph);
  if (c != 1) {
    throw Error("view graph is disconnected (" + std::to_string(c) + " components)");
  }
}

// ---------------------------------------------------------------------------
// Synthetic scenes

SynthScene synth_scene(const SynthOptions& o) {
  if (o.num_frames < 1) throw Error("synth: need at least one frame");
  if (o.num_landmarks < 1) throw Error("synth: need at least one landmark");
  if (!(o.visibility > 0.0 && o.visibility <= 1.0)) throw Error("synth: visibility must be in (0, 1]");
  if (!(o.noise_eps >= 0.0)) throw Error("synth: noise_eps must be non-negative");
  if (!(o.scale_spread >= 1.0)) throw Error("synth: scale_spread must be >= 1");

  std::mt19937_64 rng(o.seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const int n = o.num_frames;
  const int m = o.num_landmarks;
  GroundTruth gt;
  gt.points.resize(static_cast<std::size_t>(m));
  for (Vector3& p : gt.points) p = Vector3(unit(rng), unit(rng), unit(rng));

  const double log_spread = std::log(o.scale_spread);
  for (int i = 0; i < n; ++i) {
    Vector3 dir(gauss(rng), gauss(rng), gauss(rng));
    dir.normalize();
    const Vector3 center = o.camera_distance * dir;
    // Camera z axis points at the origin; roll is random.
    const Vector3 z = -dir;
    Vector3 helper(gauss(rng), gauss(rng), gauss(rng));
    Vector3 x = (helper - helper.dot(z) * z).normalized();
    const Vector3 y = z.cross(x);
    Matrix3 r;
    r.col(0) = x;
    r.col(1) = y;
    r.col(2) = z;
    gt.rotations.push_back(r);
    gt.translations.push_back(center);
    gt.scales.push_back(std::exp(log_spread * unit(rng)));
  }
  gt.anchor_first_frame();

  std::vector<std::vector<char>> visible(static_cast<std::size_t>(n),
                                         std::vector<char>(static_cast<std::size_t>(m), 0));
  std::vector<Edge> edges;
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < m; ++k) {
      if (u01(rng) < o.visibility) visible[i][k] = 1;
    }
  }
  std::uniform_int_distribution<int> pick_frame(0, n - 1);
  std::uniform_int_distribution<int> pick_landmark(0, m - 1);
  // Every landmark and frame must be observed at least once.
  for (int k = 0; k < m; ++k) {
    bool any = false;
    for (int i = 0; i < n && !any; ++i) any = visible[i][k];
    if (!any) visible[pick_frame(rng)][k] = 1;
  }
  for (int i = 0; i < n; ++i) {
    if (std::find(visible[i].begin(), visible[i].end(), 1) == visible[i].end()) {
      visible[i][pick_landmark(rng)] = 1;
    }
  }
  // Join components: attach any node outside frame 0's component to a
  // random node of the opposite type inside it.
  for (;;) {
    DisjointSets sets(n + m);
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < m; ++k) {
        if (visible[i][k]) sets.unite(i, n + k);
      }
    }
    const int root = sets.find(0);
    int node = 0;
    while (node < n + m && sets.find(node) == root) ++node;
    if (node == n + m) break;
    if (node < n) {
      int k = pick_landmark(rng);
      while (sets.find(n + k) != root) k = pick_landmark(rng);
      visible[node][k] = 1;
    } else {
      int i = pick_frame(rng);
      while (sets.find(i) != root) i = pick_frame(rng);
      visible[i][node - n] = 1;
    }
  }

  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < m; ++k) {
      if (!visible[i][k]) continue;
      Edge e;
      e.frame = i;
      e.landmark = k;
      e.point = camera_frame_point(gt, i, k);
      if (o.noise_eps > 0.0) e.point *= std::pow(1.0 + o.noise_eps, unit(rng));
      edges.push_back(e);
    }
  }
  return {ViewGraph(n, m, std::move(edges)), std::move(gt)};
}

// ---------------------------------------------------------------------------
// JSON

namespace {

using nlohmann::json;

json vec_json(const Vector3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vector3 json_vec(const json& j) {
  if (!j.is_array() || j.size() != 3) throw Error("expected a 3-vector");
  return Vector3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

}  // namespace

void write_graph_json(std::ostream& out, const ViewGraph& graph) {
  json edges = json::array();
  for (const Edge& e : graph.edges()) {
    edges.push_back({{"frame", e.frame},
                     {"landmark", e.landmark},
                     {"point", vec_json(e.point)},
                     {"weight", e.weight}});
  }
  const json doc = {{"num_frames", graph.num_frames()},
                    {"num_landmarks", graph.num_landmarks()},
                    {"edges", std::move(edges)}};
  out << doc.dump(1) << '\n';
}

ViewGraph read_graph_json(std::istream& in, GraphDiagnostics* diag) {
  json doc;
  try {
    in >> doc;
    const int n = doc.at("num_frames").get<int>();
    const int m = doc.at("num_landmarks").get<int>();
    std::vector<Edge> edges;
    for (const json& je : doc.at("edges")) {
      Edge e;
      e.frame = je.at("frame").get<int>();
      e.landmark = je.at("landmark").get<int>();
      e.point = json_vec(je.at("point"));
      e.weight = je.contains("weight") ? je.at("weight").get<double>() : 1.0;
      edges.push_back(e);
    }
    return ViewGraph::sanitize(n, m, std::move(edges), diag);
  } catch (const json::exception& ex) {
    throw Error(std::string("malformed view graph JSON: ") + ex.what());
  }
}

void write_ground_truth_json(std::ostream& out, const GroundTruth& gt) {
  json rotations = json::array();
  for (const Matrix3& r : gt.rotations) {
    json rows = json::array();
    for (int a = 0; a < 3; ++a) rows.push_back({r(a, 0), r(a, 1), r(a, 2)});
    rotations.push_back(std::move(rows));
  }
  json translations = json::array();
  for (const Vector3& t : gt.translations) translations.push_back(vec_json(t));
  json points = json::array();
  for (const Vector3& p : gt.points) points.push_back(vec_json(p));
  const json doc = {{"rotations", std::move(rotations)},
                    {"translations", std::move(translations)},
                    {"scales", gt.scales},
                    {"points", std::move(points)}};
  out << doc.dump(1) << '\n';
}

GroundTruth read_ground_truth_json(std::istream& in) {
  GroundTruth gt;
  try {
    json doc;
    in >> doc;
    for (const json& jr : doc.at("rotations")) {
      Matrix3 r;
      for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) r(a, b) = jr.at(a).at(b).get<double>();
      }
      gt.rotations.push_back(r);
    }
    for (const json& jt : doc.at("translations")) gt.translations.push_back(json_vec(jt));
    gt.scales = doc.at("scales").get<std::vector<double>>();
    if (doc.contains("points")) {
      for (const json& jp : doc.at("points")) gt.points.push_back(json_vec(jp));
    }
  } catch (const json::exception& ex) {
    throw Error(std::string("malformed ground truth JSON: ") + ex.what());
  }
  if (gt.translations.size() != gt.rotations.size() || gt.scales.size() != gt.rotations.size()) {
    throw Error("ground truth frame arrays differ in length");
  }
  return gt;
}

}  // namespace csba
