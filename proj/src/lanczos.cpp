#include <csba/lanczos.hpp>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <functional>
#include <limits>
#include <random>

namespace csba {

Matrix SymmetricOperator::dense() const {
  const int n = dim();
  Matrix m(n, n);
  Vector e = Vector::Zero(n), col(n);
  for (int j = 0; j < n; ++j) {
    e(j) = 1.0;
    apply(e, col);
    m.col(j) = col;
    e(j) = 0.0;
  }
  return 0.5 * (m + m.transpose());
}

DenseOperator::DenseOperator(Matrix m) : m_(std::move(m)) {
  if (m_.rows() != m_.cols()) throw Error("operator must be square");
}

double DenseOperator::gershgorin_lower() const {
  double lo = 0.0;
  for (Eigen::Index i = 0; i < m_.rows(); ++i) {
    const double off = m_.row(i).cwiseAbs().sum() - std::abs(m_(i, i));
    lo = i == 0 ? m_(i, i) - off : std::min(lo, m_(i, i) - off);
  }
  return lo;
}

double DenseOperator::gershgorin_upper() const {
  double hi = 0.0;
  for (Eigen::Index i = 0; i < m_.rows(); ++i) {
    const double off = m_.row(i).cwiseAbs().sum() - std::abs(m_(i, i));
    hi = i == 0 ? m_(i, i) + off : std::max(hi, m_(i, i) + off);
  }
  return hi;
}

namespace {

using Apply = std::function<void(const Vector&, Vector&)>;

struct Ritz {
  double theta = 0.0;  // eigenvalue of the transformed operator
  Vector vector;
  bool valid = false;
};

Vector random_unit(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Vector v(n);
  for (int i = 0; i < n; ++i) v(i) = g(rng);
  return v / v.norm();
}

// Two passes of classical Gram-Schmidt against the first k basis columns.
void orthogonalize(const Matrix& basis, int k, Vector& w) {
  for (int pass = 0; pass < 2; ++pass) {
    if (k == 0) return;
    w.noalias() -= basis.leftCols(k) * (basis.leftCols(k).transpose() * w);
  }
}

// Largest eigenpair of a symmetric operator by restarted Lanczos. `accept`
// decides convergence for a candidate (theta, unit vector).
template <class Accept>
Ritz largest_eigenpair(const Apply& apply, int n, int max_basis, int max_restarts,
                       double estimate_tol, std::mt19937_64& rng, int& products,
                       const Accept& accept) {
  const int m = std::max(1, std::min(n, max_basis));
  Matrix basis(n, m);
  Vector alpha(m), beta(m);
  Vector start = random_unit(n, rng);
  Ritz best;
  Vector w(n);

  for (int restart = 0; restart <= max_restarts; ++restart) {
    basis.col(0) = start;
    for (int j = 0; j < m; ++j) {
      apply(basis.col(j), w);
      ++products;
      alpha(j) = basis.col(j).dot(w);
      orthogonalize(basis, j + 1, w);
      const int k = j + 1;
      double b = w.norm();
      const bool last = j + 1 == m;
      // Ritz check: every step while small, periodically afterwards.
      const bool check = last || b < 1e-12 || k < 20 || k % 5 == 0;
      if (check) {
        Eigen::SelfAdjointEigenSolver<Matrix> tri;
        Matrix t = Matrix::Zero(k, k);
        for (int i = 0; i < k; ++i) {
          t(i, i) = alpha(i);
          if (i + 1 < k) t(i, i + 1) = t(i + 1, i) = beta(i);
        }
        tri.compute(t);
        const double theta = tri.eigenvalues()(k - 1);
        const Vector s = tri.eigenvectors().col(k - 1);
        // Residual estimate |beta_k s_k| is exact in exact arithmetic.
        if (std::abs(b * s(k - 1)) <= estimate_tol || last || b < 1e-12) {
          Vector v = basis.leftCols(k) * s;
          v /= v.norm();
          best.theta = theta;
          best.vector = v;
          best.valid = true;
          if (accept(theta, v)) return best;
        }
      }
      if (last) break;
      if (b < 1e-12) {
        // Invariant subspace: continue with a fresh direction.
        w = random_unit(n, rng);
        orthogonalize(basis, k, w);
        b = w.norm();
        if (b < 1e-12) break;  // the basis already spans everything
        beta(j) = 0.0;
      } else {
        beta(j) = b;
      }
      basis.col(j + 1) = w / b;
    }
    if (best.valid) start = best.vector;
  }
  return best;
}

}  // namespace

EigenPair min_eigenpair(const SymmetricOperator& op, const LanczosOptions& options) {
  const int n = op.dim();
  if (n <= 0) throw Error("empty operator");
  std::mt19937_64 rng(options.seed);
  EigenPair out;
  Vector av(n);

  auto residual = [&](double lambda, const Vector& v) {
    op.apply(v, av);
    ++out.products;
    return (av - lambda * v).norm();
  };

  // Stage 1: largest eigenvalue of sigma I - A.
  const double sigma = op.gershgorin_upper();
  const double lo = op.gershgorin_lower();
  const double span = std::max(1.0, sigma - lo);
  Apply shifted = [&](const Vector& x, Vector& y) {
    op.apply(x, y);
    y = sigma * x - y;
  };
  EigenPair best;
  best.residual = std::numeric_limits<double>::infinity();
  auto accept_plain = [&](double theta, const Vector& v) {
    const double lambda = sigma - theta;
    const double r = residual(lambda, v);
    if (r < best.residual) {
      best.value = lambda;
      best.vector = v;
      best.residual = r;
    }
    return r <= options.tolerance;
  };
  largest_eigenpair(shifted, n, options.max_basis, options.max_restarts, 10 * options.tolerance,
                    rng, out.products, accept_plain);
  if (best.residual <= options.tolerance) {
    best.products = out.products;
    return best;
  }

  // Stage 2: shift-and-invert below the spectrum. Cholesky success certifies
  // that the shift is a strict lower bound.
  const Matrix a = op.dense();
  double mu = std::min(best.value, lo) - 1e-3 * span;
  Eigen::LLT<Matrix> llt;
  for (int attempt = 0; attempt < 60; ++attempt) {
    llt.compute(a - mu * Matrix::Identity(n, n));
    if (llt.info() == Eigen::Success) break;
    mu -= span * std::pow(2.0, attempt);
  }
  if (llt.info() != Eigen::Success) {
    best.products = out.products;
    throw EigenError("eigenvalue solver failed to converge", best);
  }
  Apply inverse = [&](const Vector& x, Vector& y) { y = llt.solve(x); };
  auto accept_inverse = [&](double theta, const Vector& v) {
    if (!(theta > 0.0)) return false;
    const double lambda = mu + 1.0 / theta;
    const double r = residual(lambda, v);
    if (r < best.residual) {
      best.value = lambda;
      best.vector = v;
      best.residual = r;
      best.used_fallback = true;
    }
    return r <= options.tolerance;
  };
  // Refine the shift once the first pass has located the eigenvalue.
  for (int pass = 0; pass < 3 && best.residual > options.tolerance; ++pass) {
    largest_eigenpair(inverse, n, options.max_basis, options.max_restarts,
                      std::numeric_limits<double>::infinity(), rng, out.products, accept_inverse);
    const double mu_next = best.value - std::max(best.residual, 1e-8 * span);
    if (mu_next <= mu) break;
    Eigen::LLT<Matrix> refined(a - mu_next * Matrix::Identity(n, n));
    if (refined.info() != Eigen::Success) break;
    llt = refined;
    mu = mu_next;
  }
  best.products = out.products;
  if (best.residual > options.tolerance) {
    throw EigenError("eigenvalue solver failed to converge", best);
  }
  return best;
}

}  // namespace csba
