#pragma once

#include <csba/certificate.hpp>
#include <csba/manifold.hpp>
#include <csba/reduction.hpp>
#include <csba/staircase.hpp>
#include <csba/viewgraph.hpp>

namespace csba {

/// Camera poses, scales and landmarks. Frame 0 is anchored (R = I, t = 0,
/// s = 1).
struct Solution {
  std::vector<Matrix3> rotations;
  std::vector<double> scales;
  std::vector<Vector3> translations;
  std::vector<Vector3> points;
  /// Objective summed over the edges.
  double objective = 0.0;
  /// trace(Q U^T U) at the same factor, for cross-checking.
  double objective_q = 0.0;
  /// Number of blocks whose orthogonal factor had determinant -1.
  int flip_count = 0;
  Certificate certificate;

  int num_frames() const { return static_cast<int>(rotations.size()); }
  /// Same fields in the ground-truth container (for metrics and I/O).
  GroundTruth as_poses() const;
};

/// Left-multiplies all blocks of a rank-3 factor by frame(0)^T.
FactorPoint gauge_fix(const FactorPoint& x);

/// Best rank-3 approximation of the factor followed by per-block scale
/// extraction (||block||_F / sqrt(3)) and polar projection. Scales are
/// renormalized so the first one is 1. Rank-3 input is returned unchanged.
FactorPoint round_factor(const FactorPoint& x);

/// Replaces reflections by the closest rotation; `flips` counts them.
FactorPoint enforce_proper_rotations(const FactorPoint& x, int* flips = nullptr);

/// Translations and landmarks from the data matrix and the objective
/// evaluated directly over the edges. `x` must be rank 3 with proper
/// rotations and frame(0) = I.
Solution build_solution(const ViewGraph& graph, const DataMatrix& data, const FactorPoint& x);

/// w_ik || s_i R_i u_ik + t_i - p_k ||^2 per edge, in edge order.
std::vector<double> edge_residuals(const ViewGraph& graph, const Solution& sol);

/// Round, gauge-fix, remove reflections and build the solution for a
/// staircase result. The certificate is re-evaluated against the objective
/// of the rounded factor.
Solution recover_solution(const ViewGraph& graph, const DataMatrix& data, const Cost& cost,
                          const StaircaseResult& result);

}  // namespace csba
