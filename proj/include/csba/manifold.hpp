#pragma once

#include <csba/types.hpp>

#include <random>

namespace csba {

/// Point of the search space O(r,3) x (R_+ x St(r,3))^(N-1).
///
/// Frame i is represented by an r x 3 matrix with orthonormal columns
/// (a block of `frames`) and a positive scale; the factor U has block i
/// equal to scales[i] * frames_i. The first scale is always 1.
struct FactorPoint {
  Matrix frames;  // r x 3N
  Vector scales;  // N

  int rank() const { return static_cast<int>(frames.rows()); }
  int num_frames() const { return static_cast<int>(scales.size()); }
  auto frame(int i) { return frames.middleCols<3>(3 * i); }
  auto frame(int i) const { return frames.middleCols<3>(3 * i); }

  /// U = [s_0 R_0, ..., s_{N-1} R_{N-1}].
  Matrix assemble() const;

  /// Max over frames of ||R_i^T R_i - I||_F.
  double orthonormality_error() const;
  /// Throws if the invariants are violated beyond `tol`.
  void validate(double tol = 1e-10) const;

  /// [I_3; 0] blocks with unit scales.
  static FactorPoint identity(int num_frames, int rank = 3);
  /// Haar-like random blocks; scales log-uniform in [1/spread, spread].
  static FactorPoint random(int num_frames, int rank, std::mt19937_64& rng,
                            double spread = 2.0);
  /// Splits a factor whose blocks are (approximately) scaled orthonormal:
  /// s_i = ||U_i||_F / sqrt(3), R_i = polar(U_i). The first scale is forced
  /// to 1.
  static FactorPoint from_factor(const Matrix& u);
};

/// Tangent vector in the ambient U-space: block i equals
/// scales[i] * frame(i) + stiefel_i, where stiefel_i is a Stiefel tangent
/// at frame(i). The first scale component is always 0.
struct TangentVector {
  Matrix stiefel;  // r x 3N
  Vector scales;   // N

  static TangentVector zero(const FactorPoint& x);

  /// Ambient representation of this tangent at `x`.
  Matrix ambient(const FactorPoint& x) const;

  TangentVector& operator+=(const TangentVector& o);
  TangentVector& operator-=(const TangentVector& o);
  TangentVector& operator*=(double a);
  friend TangentVector operator+(TangentVector a, const TangentVector& b) { return a += b; }
  friend TangentVector operator-(TangentVector a, const TangentVector& b) { return a -= b; }
  friend TangentVector operator*(double a, TangentVector v) { return v *= a; }

  /// Max over frames of ||R_i^T V_i + V_i^T R_i||_F.
  double tangency_error(const FactorPoint& x) const;
};

/// Metric induced by the Frobenius inner product of the ambient space.
double inner(const TangentVector& a, const TangentVector& b);
double norm(const TangentVector& v);

/// Orthogonal projection of an r x 3N ambient matrix onto the tangent space.
TangentVector project_tangent(const FactorPoint& x, const Matrix& ambient);

/// Retraction: QR-based on the Stiefel blocks, multiplicative on scales with
/// the log-step clamped to [-3, 3].
/// Throws "retraction failure" when a block loses column rank or a scale
/// leaves (0, inf).
FactorPoint retract(const FactorPoint& x, const TangentVector& v, double step);

/// Smooth cost trace(Q U^T U) + lambda * sum_{i>=1} ((U^T U)_{cc} - 1)^2 with
/// c the last column of block i. lambda = 0 gives the plain cost.
class Cost {
 public:
  /// Keeps a reference to `q`, which must outlive the cost.
  Cost(const Matrix& q, double lambda = 0.0);
  Cost(Matrix&&, double = 0.0) = delete;

  const Matrix& q() const { return *q_; }
  double lambda() const { return lambda_; }
  int num_frames() const { return static_cast<int>(q_->rows() / 3); }

  double value(const FactorPoint& x) const;
  double value(const Matrix& u) const;

  /// Diagonal gradient of the regularizer w.r.t. X = U^T U (zero if lambda = 0).
  Vector regularizer_gradient(const Matrix& u) const;
  /// lambda * sum (X_cc - 1)^2.
  double regularizer(const Matrix& u) const;

 private:
  const Matrix* q_;
  double lambda_;
};

/// Euclidean gradient of trace(Q U^T U): 2 U Q.
Matrix euclidean_gradient(const Matrix& q, const Matrix& u);

/// Quantities reused by gradient and Hessian evaluations at one point.
struct PointCache {
  Matrix u;       // assembled factor
  Matrix egrad;   // Euclidean gradient of the full cost
  double value = 0.0;
  TangentVector grad;
};

PointCache evaluate(const Cost& cost, const FactorPoint& x);

TangentVector riemannian_gradient(const Cost& cost, const FactorPoint& x);

/// Riemannian Hessian applied to `v`: projection of the directional
/// derivative of the projected gradient.
TangentVector hessian_vector_product(const Cost& cost, const FactorPoint& x,
                                     const PointCache& cache, const TangentVector& v);
TangentVector hessian_vector_product(const Cost& cost, const FactorPoint& x,
                                     const TangentVector& v);

/// trace(Q U^T U) without forming U^T U.
double quadratic_cost(const Matrix& q, const Matrix& u);

}  // namespace csba
