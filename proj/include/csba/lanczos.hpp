#pragma once

#include <csba/types.hpp>

#include <cstdint>

namespace csba {

/// Symmetric linear operator with cheap spectral enclosures.
class SymmetricOperator {
 public:
  virtual ~SymmetricOperator() = default;
  virtual int dim() const = 0;
  virtual void apply(const Vector& x, Vector& y) const = 0;
  /// Gershgorin interval [lower, upper] containing the spectrum.
  virtual double gershgorin_lower() const = 0;
  virtual double gershgorin_upper() const = 0;
  /// Dense materialization (used by the shift-and-invert fallback).
  virtual Matrix dense() const;
};

/// Plain dense symmetric matrix as an operator.
class DenseOperator final : public SymmetricOperator {
 public:
  explicit DenseOperator(Matrix m);
  int dim() const override { return static_cast<int>(m_.rows()); }
  void apply(const Vector& x, Vector& y) const override { y.noalias() = m_ * x; }
  double gershgorin_lower() const override;
  double gershgorin_upper() const override;
  Matrix dense() const override { return m_; }

 private:
  Matrix m_;
};

struct LanczosOptions {
  /// Absolute residual tolerance ||A v - lambda v||.
  double tolerance = 1e-8;
  /// Krylov basis size before an explicit restart (capped by dim).
  int max_basis = 120;
  int max_restarts = 40;
  std::uint64_t seed = 12345;
};

struct EigenPair {
  double value = 0.0;
  Vector vector;
  double residual = 0.0;
  /// Matrix-vector products spent.
  int products = 0;
  /// True when the shift-and-invert fallback produced the pair.
  bool used_fallback = false;
};

/// Raised when neither Lanczos nor the fallback converges; carries the best
/// Ritz pair found.
class EigenError : public Error {
 public:
  EigenError(const std::string& what, EigenPair best) : Error(what), best_(std::move(best)) {}
  const EigenPair& best() const { return best_; }

 private:
  EigenPair best_;
};

/// Smallest eigenpair of a symmetric operator. Runs Lanczos with full
/// reorthogonalization on sigma I - A (sigma the Gershgorin upper bound),
/// restarting from the best Ritz vector, then falls back to shift-and-invert
/// on the dense matrix.
EigenPair min_eigenpair(const SymmetricOperator& op, const LanczosOptions& options = {});

}  // namespace csba
