#pragma once

#include <csba/lanczos.hpp>
#include <csba/manifold.hpp>

namespace csba {

/// Linear constraints <A_i, X> = b_i describing the feasible set of the
/// relaxation for N frames (m = 5N + 1 of them).
///
/// Frame 0: the 3 diagonal units (b = 1) and the 3 symmetric off-diagonal
/// units (b = 0), i.e. X_00 = I. Frame k >= 1: diag(1,-1,0), diag(0,1,-1)
/// and the 3 symmetric off-diagonal units, all with b = 0, i.e. X_kk is a
/// multiple of I. Each A_i is supported on one diagonal 3x3 block.
class ConstraintFamily {
 public:
  explicit ConstraintFamily(int num_frames);

  int num_frames() const { return num_frames_; }
  int size() const { return 5 * num_frames_ + 1; }

  /// Index of the first multiplier belonging to frame k.
  static int offset(int k) { return k == 0 ? 0 : 5 * k + 1; }
  /// Number of multipliers of frame k (6 or 5).
  static int count(int k) { return k == 0 ? 6 : 5; }
  /// Basis matrix l of frame k.
  static Matrix3 basis(int k, int l);

  /// Frame that constraint i lives on.
  int frame_of(int i) const;
  double rhs(int i) const;
  /// Dense 3N x 3N matrix A_i (tests and small-N diagnostics only).
  Matrix dense(int i) const;

  /// Block k of sum_i y_i A_i.
  Matrix3 block(const Vector& y, int k) const;

  /// max_i |<A_i, U^T U> - b_i|.
  double feasibility_residual(const Matrix& u) const;

  /// Numerical rank of the stacked vectors {vec(A_i U^T)} computed with a
  /// dense SVD; full rank m is the constraint qualification.
  int jacobian_rank(const Matrix& u, double rel_tol = 1e-10) const;

 private:
  int num_frames_;
};

/// Z(y) = Q + D - sum_i y_i A_i applied matrix-free. D is the diagonal
/// gradient of the scale regularizer (zero when lambda = 0).
class DualOperator final : public SymmetricOperator {
 public:
  DualOperator(const Matrix& q, const Vector& y, const Vector& reg_diagonal);
  DualOperator(Matrix&&, const Vector&, const Vector&) = delete;

  int dim() const override { return static_cast<int>(q_->rows()); }
  void apply(const Vector& x, Vector& out) const override;
  double gershgorin_lower() const override;
  double gershgorin_upper() const override;
  Matrix dense() const override;

  /// Z U^T, for the stationarity residual.
  Matrix times_transpose(const Matrix& u) const;

 private:
  const Matrix* q_;
  std::vector<Matrix3> blocks_;  // D_k - Lambda_k per frame
  Vector row_abs_;               // off-block Gershgorin radii of Q
};

/// Dual multipliers from a (near-)critical point: per frame, the least-squares
/// solution of (Q~ U^T)_k = Lambda_k U_k^T with Lambda_k in the span of the
/// frame's constraint basis and Q~ = Q + D. Throws "infeasible point" if a
/// block of U is rank deficient.
Vector assemble_dual(const Cost& cost, const Matrix& u);

/// Relative suboptimality (rho_hat - rho_lower) / (1 + |rho_hat| + |rho_lower|).
double suboptimality(double rho_hat, double rho_lower);

/// max(0, lambda_min) * trace_x + rho_dual.
double rigorous_lower_bound(double rho_dual, double lambda_min, double trace_x);

/// rigorous_lower_bound minus the slack max(0, -lambda_min) * trace_x.
/// This is the bound used for eta_rigorous.
double safe_lower_bound(double rho_dual, double lambda_min, double trace_x);

struct CertificateOptions {
  /// Eigen-residual tolerance, relative to max(1, ||Q||_F).
  double eig_tolerance = 1e-8;
  /// Certified when lambda_min >= -threshold * max(1, ||Q||_F).
  double certify_threshold = 1e-6;
  LanczosOptions lanczos;
};

struct Certificate {
  Vector y;
  double min_eigenvalue = 0.0;
  Vector min_eigenvector;
  double eigen_residual = 0.0;
  double kkt_residual = 0.0;  // ||Z(y) U^T||_F
  double rho_hat = 0.0;       // objective at the factor
  double rho_dual = 0.0;
  double rho_lower = 0.0;     // rigorous_lower_bound
  double trace_x = 0.0;
  double eta = 0.0;           // against rho_lower
  double eta_rigorous = 0.0;  // against the safe bound
  double q_norm = 0.0;
  bool certified = false;
};

/// Full certificate at the point x for the given cost.
Certificate certify(const Cost& cost, const FactorPoint& x, const CertificateOptions& options = {});

}  // namespace csba
