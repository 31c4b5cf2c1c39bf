#pragma once

#include <csba/recovery.hpp>
#include <csba/staircase.hpp>
#include <csba/viewgraph.hpp>

#include <optional>
#include <ostream>

namespace csba {

/// x -> scale * rotation * x + translation.
struct Similarity {
  double scale = 1.0;
  Matrix3 rotation = Matrix3::Identity();
  Vector3 translation = Vector3::Zero();

  Vector3 apply(const Vector3& x) const { return scale * (rotation * x) + translation; }
};

/// Closed-form weighted similarity registration minimizing
/// sum_j w_j || s R source_j + t - target_j ||^2 with R a proper rotation.
/// Throws "alignment degenerate" for fewer than 3 points or a collinear
/// source.
Similarity align_similarity(const std::vector<Vector3>& source, const std::vector<Vector3>& target,
                            const std::vector<double>& weights = {});

struct PipelineConfig {
  bool enable_filter = false;
  double filter_multiplier = 3.0;
  bool enable_xm2 = false;
  double xm2_drop_fraction = 0.10;
  double lambda_reg = 0.0;
  StaircaseOptions solver;
  DataMatrixOptions data;

  void validate() const;
};

struct FilterReport {
  int pairs_checked = 0;
  int edges_flagged = 0;
  int edges_removed = 0;
  int edges_restored = 0;
};

/// Flags entries above multiplier * median(residuals). Nothing is flagged
/// when the median is <= 1e-12.
std::vector<bool> median_outliers(const std::vector<double>& residuals, double multiplier);

/// Removes edges that disagree with pairwise similarity registrations.
///
/// For every frame pair sharing at least 4 landmarks the relative similarity
/// is fitted on the shared lifted points (started on the half of the points
/// whose pairwise distance ratios agree best, then refitted on the unflagged
/// points until the flags settle); an edge is flagged in that pair when
/// its landmark's residual exceeds multiplier times the pair median (pairs
/// with median <= 1e-12 flag nothing). An edge is removed when it is flagged
/// in more than half of the pairs it takes part in. If the result is
/// disconnected, removed edges are restored in ascending order of their
/// largest residual-to-median ratio until it is connected again.
ViewGraph two_view_filter(const ViewGraph& graph, double multiplier = 3.0,
                          FilterReport* report = nullptr);

/// floor(fraction * num_edges).
int drop_count(std::size_t num_edges, double fraction);

/// Drops the edges with the largest residuals (drop_count of them), then
/// restores dropped edges in ascending residual order where needed to keep
/// the graph connected. Returns the pruned graph; `dropped` receives the
/// number of edges actually removed.
ViewGraph prune_by_residual(const ViewGraph& graph, const std::vector<double>& residuals,
                            double fraction, int* dropped = nullptr);

struct Timings {
  double filter = 0.0;
  double build_q = 0.0;
  double solve = 0.0;
  double recover = 0.0;
};

struct SolveReport {
  Solution solution;
  /// Result of the local solver for the final solve.
  StaircaseResult staircase;
  /// The graph the final solution refers to (after filtering and pruning).
  ViewGraph graph;
  FilterReport filter;
  /// First solve when XM^2 is enabled.
  std::optional<Solution> first_solution;
  int xm2_dropped = 0;
  Timings timings;
};

/// Filter (optional), build Q, run the staircase, recover the solution, and
/// optionally prune the largest-residual edges and solve again.
SolveReport solve(const ViewGraph& graph, const PipelineConfig& config = {});

/// Two solves with the largest-residual edges dropped in between.
SolveReport xm_squared(const ViewGraph& graph, const PipelineConfig& config);

/// Staircase with the scale regularizer lambda * sum_{i>=1} (s_i^2 - 1)^2.
Solution solve_regularized(const ViewGraph& graph, double lambda_reg,
                           const StaircaseOptions& options = {});

struct Metrics {
  double ate_t = 0.0;
  double ate_r_deg = 0.0;
  double rpe_t = 0.0;
  double rpe_r_deg = 0.0;
  Similarity alignment;
  std::vector<double> ate_t_per_frame;
  std::vector<double> ate_r_deg_per_frame;
  // Filled by callers that have a solve at hand.
  int flip_count = 0;
  double eta = 0.0;
  double min_eig = 0.0;
  double solver_seconds = 0.0;
};

/// Trajectory errors after aligning estimated camera centers to the ground
/// truth with a similarity. Needs at least 3 frames.
Metrics compute_metrics(const GroundTruth& estimate, const GroundTruth& truth);

void write_metrics_json(std::ostream& out, const Metrics& m);

/// Poses and landmarks in the ground-truth layout plus objective, flip
/// count and a certificate summary (multipliers only when `with_dual`).
void write_solution_json(std::ostream& out, const Solution& sol, bool with_dual = false);

}  // namespace csba
