#pragma once

#include <csba/certificate.hpp>
#include <csba/manifold.hpp>

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>

namespace csba {

/// One line of the solver log.
struct TraceRecord {
  std::string kind;  // "iteration", "certificate", "escape"
  int rank = 0;
  int iteration = 0;
  double objective = 0.0;
  double grad_norm = 0.0;
  double radius = 0.0;
  double rho = 0.0;
  int inner = 0;
  bool accepted = false;
  double min_eigenvalue = 0.0;
  double alpha = 0.0;
};

using TraceCallback = std::function<void(const TraceRecord&)>;

/// Writes the record as one JSON object followed by a newline.
void write_trace_line(std::ostream& out, const TraceRecord& record);

struct TrustRegionOptions {
  /// Non-positive values select 0.1 * sqrt(3N).
  double initial_radius = 0.0;
  /// Non-positive values select 10 * initial_radius.
  double max_radius = 0.0;
  double acceptance_threshold = 0.1;
  int max_outer_iterations = 1000;
  /// Stop when ||grad|| <= gradient_tolerance * max(1, ||Q||_F).
  double gradient_tolerance = 1e-8;
  int tcg_max_inner = 500;
  double tcg_kappa = 0.1;
  double tcg_theta = 1.0;

  void validate() const;
};

struct TrustRegionResult {
  FactorPoint point;
  double objective = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  /// Gradient norm at every outer iteration, first entry at the start point.
  std::vector<double> grad_history;
};

/// Riemannian trust-region minimization with a truncated conjugate-gradient
/// (Steihaug-Toint) inner solver.
TrustRegionResult rtr_minimize(const Cost& cost, const FactorPoint& start,
                               const TrustRegionOptions& options = {},
                               const TraceCallback& trace = {});

struct EscapeResult {
  FactorPoint point;  // rank r + 1
  double alpha = 0.0;
  double objective_before = 0.0;
  double objective_after = 0.0;
  int halvings = 0;
};

/// Lifts x to rank r + 1 along the eigenvector v of the dual matrix: appends
/// the row alpha * v^T, restores the scaled-orthonormal block structure with
/// a per-block polar factor and halves alpha until the objective decreases.
/// Throws "escape failed" after 60 halvings; rejects eigenvalue >= 0.
EscapeResult escape_direction(const Cost& cost, const FactorPoint& x, double eigenvalue,
                              const Vector& v);

struct StaircaseOptions {
  TrustRegionOptions trust_region;
  CertificateOptions certificate;
  int max_rank = 10;
  /// Start from random blocks at rank 3 instead of identity blocks.
  bool random_start = false;
  std::uint64_t seed = 0;
  /// Explicit start point (overrides random_start).
  std::optional<FactorPoint> start;
  TraceCallback trace;
};

struct StaircaseResult {
  FactorPoint factor;
  double objective = 0.0;
  Certificate certificate;
  std::vector<int> rank_trajectory;
  std::vector<int> iterations;
  std::vector<EscapeResult> escapes;
  bool certified = false;
  /// Whether the last local solve met its gradient tolerance.
  bool converged = false;
};

StaircaseResult staircase(const Cost& cost, const StaircaseOptions& options = {});

/// Rank-3 local minimizer of a two-frame problem that is not global: with
/// Q_01 = A S B^T, frame 1 is s * A diag(-1,-1,1) B^T, which lies in the
/// other connected component of O(3) than the optimum -A B^T. Used to
/// exercise the rank lift.
FactorPoint adversarial_two_frame_start(const Matrix& q);

}  // namespace csba
