#pragma once

#include <csba/types.hpp>

#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

namespace csba {

/// A 2D keypoint observation in normalized image coordinates.
struct Observation2D {
  int frame = 0;
  int landmark = 0;
  Vector2 u = Vector2::Zero();
};

/// Observations before depth lifting.
struct ViewGraph2D {
  int num_frames = 0;
  int num_landmarks = 0;
  std::vector<Observation2D> observations;
};

/// One lifted observation: landmark `landmark` seen by frame `frame` at the
/// camera-frame point `point` (positive depth).
struct Edge {
  int frame = 0;
  int landmark = 0;
  Vector3 point = Vector3::UnitZ();
  double weight = 1.0;
};

/// Counters for the non-fatal clean-ups performed while building a graph.
struct GraphDiagnostics {
  int duplicates_dropped = 0;
  int landmarks_removed = 0;
  int negative_depth_dropped = 0;
};

/// Bipartite frame/landmark graph with lifted 3D keypoints on the edges.
///
/// Construction validates the local invariants: every frame and landmark is
/// referenced, no (frame, landmark) pair repeats, weights are positive and
/// points are finite with positive depth. Connectivity is not enforced here;
/// solver entry points check it (see connected_components).
class ViewGraph {
 public:
  ViewGraph() = default;

  /// Strict constructor: throws on any invariant violation.
  ViewGraph(int num_frames, int num_landmarks, std::vector<Edge> edges);

  /// Lenient constructor used for file input: keeps the first of duplicated
  /// observations, removes unobserved landmarks (compacting indices) and
  /// reports both in `diag`. Everything else is validated strictly.
  static ViewGraph sanitize(int num_frames, int num_landmarks,
                            std::vector<Edge> edges,
                            GraphDiagnostics* diag = nullptr,
                            std::vector<int>* landmark_map = nullptr);

  int num_frames() const { return num_frames_; }
  int num_landmarks() const { return num_landmarks_; }
  const std::vector<Edge>& edges() const { return edges_; }
  std::size_t num_edges() const { return edges_.size(); }

  /// Copy of this graph restricted to the edges flagged `true` in `keep`.
  /// Landmark and frame indices are preserved, so every node must still be
  /// covered.
  ViewGraph subgraph(const std::vector<bool>& keep) const;

  bool operator==(const ViewGraph& other) const;

 private:
  int num_frames_ = 0;
  int num_landmarks_ = 0;
  std::vector<Edge> edges_;
};

/// Ground-truth scene in the camera-to-world convention:
/// world point = scale * rotation * camera point + translation.
struct GroundTruth {
  std::vector<Matrix3> rotations;
  std::vector<Vector3> translations;
  std::vector<double> scales;
  std::vector<Vector3> points;

  int num_frames() const { return static_cast<int>(rotations.size()); }

  /// Throws unless sizes agree, rotations are in SO(3) (1e-12 for the
  /// anchor, 1e-9 otherwise) and scales are positive.
  void validate() const;

  /// Applies the similarity that maps frame 0 to identity pose and unit
  /// scale. Camera-frame coordinates of all points are unchanged.
  void anchor_first_frame();
};

using ObservationKey = std::pair<int, int>;  // (frame, landmark)
using DepthMap = std::map<ObservationKey, double>;
using WeightMap = std::map<ObservationKey, double>;

/// Options controlling how BAL cameras are interpreted.
struct BalOptions {
  /// BAL cameras look down -z; rotate the camera frame by pi about x so that
  /// visible points get positive depth and keypoints follow the +z
  /// convention.
  bool flip_to_positive_depth = true;
  /// Divide observations by the camera focal length when it is non-zero.
  bool normalize_by_focal = true;
};

struct BalData {
  ViewGraph2D graph;
  GroundTruth ground_truth;  // anchored to frame 0
};

/// Parses the Bundle Adjustment in the Large text format.
BalData parse_bal(std::istream& in, const BalOptions& options = {});
BalData read_bal_file(const std::string& path, const BalOptions& options = {});

/// Lifts every observation to depth * [u; 1]. Missing weights default to 1.
ViewGraph lift_to_3d(const ViewGraph2D& graph, const DepthMap& depths,
                     const WeightMap* weights = nullptr,
                     GraphDiagnostics* diag = nullptr);

/// Camera-frame depth of every observation under the ground truth. Points
/// behind the camera are left out of the map and counted in `diag`.
DepthMap depths_from_ground_truth(const ViewGraph2D& graph,
                                  const GroundTruth& gt,
                                  GraphDiagnostics* diag = nullptr);

/// Number of connected components of the bipartite frame/landmark graph.
int connected_components(int num_frames, int num_landmarks,
                         const std::vector<Edge>& edges);
int connected_components(const ViewGraph& graph);

/// Throws if the graph is not a single connected component.
void require_connected(const ViewGraph& graph);

struct SynthOptions {
  int num_frames = 10;
  int num_landmarks = 100;
  double visibility = 0.5;
  double noise_eps = 0.0;
  std::uint64_t seed = 0;
  /// Camera centers are drawn on a sphere of this radius around the
  /// landmark cube [-1, 1]^3.
  double camera_distance = 4.0;
  /// Per-frame scales are log-uniform in [1/scale_spread, scale_spread].
  double scale_spread = 2.0;
};

struct SynthScene {
  ViewGraph graph;
  GroundTruth ground_truth;
};

/// Random scene with anchored first frame. Depth noise multiplies each
/// lifted point by (1 + eps)^x with x ~ U(-1, 1). Deterministic per seed.
SynthScene synth_scene(const SynthOptions& options);

/// Camera-frame point of landmark k as seen from frame i under `gt`.
Vector3 camera_frame_point(const GroundTruth& gt, int frame, int landmark);

// Native JSON interchange.
void write_graph_json(std::ostream& out, const ViewGraph& graph);
ViewGraph read_graph_json(std::istream& in, GraphDiagnostics* diag = nullptr);
void write_ground_truth_json(std::ostream& out, const GroundTruth& gt);
GroundTruth read_ground_truth_json(std::istream& in);

}  // namespace csba
