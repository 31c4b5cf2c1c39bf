#include <csba/manifold.hpp>

#include <csba/geometry.hpp>

#include <Eigen/QR>

#include <algorithm>
#include <cmath>

namespace csba {

namespace {

Matrix3 sym(const Matrix3& a) { return 0.5 * (a + a.transpose()); }

// Q factor of a thin QR decomposition with positive diagonal in R.
Matrix thin_q(const Matrix& a) {
  Eigen::HouseholderQR<Matrix> qr(a);
  Matrix q = qr.householderQ() * Matrix::Identity(a.rows(), a.cols());
  const Matrix& packed = qr.matrixQR();
  const double scale = std::max(1.0, a.norm());
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    const double d = packed(j, j);
    if (!(std::abs(d) > 1e-14 * scale)) throw Error("retraction failure");
    if (d < 0) q.col(j) = -q.col(j);
  }
  return q;
}

constexpr double kMaxLogScaleStep = 3.0;

}  // namespace

// ---------------------------------------------------------------------------

Matrix FactorPoint::assemble() const {
  Matrix u = frames;
  for (int i = 0; i < num_frames(); ++i) u.middleCols<3>(3 * i) *= scales(i);
  return u;
}

double FactorPoint::orthonormality_error() const {
  double worst = 0.0;
  for (int i = 0; i < num_frames(); ++i) {
    worst = std::max(worst, (frame(i).transpose() * frame(i) - Matrix3::Identity()).norm());
  }
  return worst;
}

void FactorPoint::validate(double tol) const {
  if (frames.cols() != 3 * scales.size()) throw Error("factor point shape mismatch");
  if (rank() < 3) throw Error("factor rank must be at least 3");
  if (orthonormality_error() > tol) throw Error("factor blocks are not orthonormal");
  if (scales.size() > 0 && scales(0) != 1.0) throw Error("first scale must be 1");
  if (!(scales.array() > 0.0).all()) throw Error("scales must be positive");
}

FactorPoint FactorPoint::identity(int num_frames, int rank) {
  FactorPoint x;
  x.frames = Matrix::Zero(rank, 3 * num_frames);
  for (int i = 0; i < num_frames; ++i) x.frames.block<3, 3>(0, 3 * i).setIdentity();
  x.scales = Vector::Ones(num_frames);
  return x;
}

FactorPoint FactorPoint::random(int num_frames, int rank, std::mt19937_64& rng, double spread) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  FactorPoint x;
  x.frames.resize(rank, 3 * num_frames);
  x.scales.resize(num_frames);
  for (int i = 0; i < num_frames; ++i) {
    Matrix g(rank, 3);
    for (Eigen::Index c = 0; c < g.size(); ++c) g.data()[c] = gauss(rng);
    x.frame(i) = thin_q(g);
    x.scales(i) = std::exp(std::log(spread) * unit(rng));
  }
  x.scales(0) = 1.0;
  return x;
}

FactorPoint FactorPoint::from_factor(const Matrix& u) {
  if (u.cols() % 3 != 0 || u.rows() < 3) throw Error("factor must be r x 3N with r >= 3");
  const int n = static_cast<int>(u.cols() / 3);
  FactorPoint x;
  x.frames.resize(u.rows(), u.cols());
  x.scales.resize(n);
  for (int i = 0; i < n; ++i) {
    const Matrix block = u.middleCols<3>(3 * i);
    const double s = block.norm() / std::sqrt(3.0);
    if (!(s > 1e-12)) throw Error("degenerate block");
    x.frame(i) = polar_factor(block);
    x.scales(i) = s;
  }
  x.scales(0) = 1.0;
  return x;
}

// ---------------------------------------------------------------------------

TangentVector TangentVector::zero(const FactorPoint& x) {
  return {Matrix::Zero(x.frames.rows(), x.frames.cols()), Vector::Zero(x.scales.size())};
}

Matrix TangentVector::ambient(const FactorPoint& x) const {
  Matrix a = stiefel;
  for (int i = 0; i < x.num_frames(); ++i) a.middleCols<3>(3 * i) += scales(i) * x.frame(i);
  return a;
}

TangentVector& TangentVector::operator+=(const TangentVector& o) {
  stiefel += o.stiefel;
  scales += o.scales;
  return *this;
}

TangentVector& TangentVector::operator-=(const TangentVector& o) {
  stiefel -= o.stiefel;
  scales -= o.scales;
  return *this;
}

TangentVector& TangentVector::operator*=(double a) {
  stiefel *= a;
  scales *= a;
  return *this;
}

double TangentVector::tangency_error(const FactorPoint& x) const {
  double worst = 0.0;
  for (int i = 0; i < x.num_frames(); ++i) {
    const Matrix3 m = x.frame(i).transpose() * stiefel.middleCols<3>(3 * i);
    worst = std::max(worst, (m + m.transpose()).norm());
  }
  return worst;
}

double inner(const TangentVector& a, const TangentVector& b) {
  // ||R_i||_F^2 = 3 and <R_i, V_i> = 0 for tangent V_i.
  return a.stiefel.cwiseProduct(b.stiefel).sum() + 3.0 * a.scales.dot(b.scales);
}

double norm(const TangentVector& v) { return std::sqrt(std::max(0.0, inner(v, v))); }

TangentVector project_tangent(const FactorPoint& x, const Matrix& ambient) {
  const int n = x.num_frames();
  TangentVector v{Matrix(ambient.rows(), ambient.cols()), Vector::Zero(n)};
  for (int i = 0; i < n; ++i) {
    const auto r = x.frame(i);
    const auto a = ambient.middleCols<3>(3 * i);
    const Matrix3 rta = r.transpose() * a;
    v.stiefel.middleCols<3>(3 * i) = a - r * sym(rta);
    if (i > 0) v.scales(i) = rta.trace() / 3.0;
  }
  return v;
}

FactorPoint retract(const FactorPoint& x, const TangentVector& v, double step) {
  if (step == 0.0) return x;
  FactorPoint y = x;
  for (int i = 0; i < x.num_frames(); ++i) {
    const double s = x.scales(i);
    const auto w = v.stiefel.middleCols<3>(3 * i);
    if (!w.isZero(0.0)) {
      y.frame(i) = thin_q(x.frame(i) + (step / s) * w);
    }
    if (i > 0) {
      // A block heading for zero may shrink by at most exp(-kMaxLogScaleStep)
      // per step, so the rotation update below stays well conditioned.
      const double log_step = std::clamp(step * v.scales(i) / s, -kMaxLogScaleStep, kMaxLogScaleStep);
      y.scales(i) = s * std::exp(log_step);
      if (!(y.scales(i) > 0.0 && std::isfinite(y.scales(i)))) throw Error("retraction failure");
    }
  }
  y.scales(0) = 1.0;
  return y;
}

// ---------------------------------------------------------------------------

Cost::Cost(const Matrix& q, double lambda) : q_(&q), lambda_(lambda) {
  if (q.rows() != q.cols() || q.rows() % 3 != 0) throw Error("Q must be 3N x 3N");
  if (!(lambda >= 0.0)) throw Error("regularization weight must be non-negative");
}

double quadratic_cost(const Matrix& q, const Matrix& u) {
  return (u * q).cwiseProduct(u).sum();
}

Vector Cost::regularizer_gradient(const Matrix& u) const {
  Vector d = Vector::Zero(u.cols());
  if (lambda_ == 0.0) return d;
  for (int i = 1; i < num_frames(); ++i) {
    const int c = 3 * i + 2;
    d(c) = 2.0 * lambda_ * (u.col(c).squaredNorm() - 1.0);
  }
  return d;
}

double Cost::regularizer(const Matrix& u) const {
  if (lambda_ == 0.0) return 0.0;
  double total = 0.0;
  for (int i = 1; i < num_frames(); ++i) {
    const double e = u.col(3 * i + 2).squaredNorm() - 1.0;
    total += e * e;
  }
  return lambda_ * total;
}

double Cost::value(const Matrix& u) const { return quadratic_cost(*q_, u) + regularizer(u); }

double Cost::value(const FactorPoint& x) const { return value(x.assemble()); }

Matrix euclidean_gradient(const Matrix& q, const Matrix& u) { return 2.0 * u * q; }

PointCache evaluate(const Cost& cost, const FactorPoint& x) {
  PointCache c;
  c.u = x.assemble();
  const Matrix uq = c.u * cost.q();
  c.value = uq.cwiseProduct(c.u).sum();
  c.egrad = 2.0 * uq;
  if (cost.lambda() > 0.0) {
    c.value += cost.regularizer(c.u);
    const Vector d = cost.regularizer_gradient(c.u);
    c.egrad += 2.0 * c.u * d.asDiagonal();
  }
  c.grad = project_tangent(x, c.egrad);
  return c;
}

TangentVector riemannian_gradient(const Cost& cost, const FactorPoint& x) {
  return evaluate(cost, x).grad;
}

TangentVector hessian_vector_product(const Cost& cost, const FactorPoint& x,
                                     const PointCache& cache, const TangentVector& v) {
  const Matrix xi = v.ambient(x);
  // Directional derivative of the Euclidean gradient.
  Matrix dgrad = 2.0 * xi * cost.q();
  if (cost.lambda() > 0.0) {
    const Vector d = cost.regularizer_gradient(cache.u);
    dgrad += 2.0 * xi * d.asDiagonal();
    for (int i = 1; i < x.num_frames(); ++i) {
      const int c = 3 * i + 2;
      const double dd = 4.0 * cost.lambda() * cache.u.col(c).dot(xi.col(c));
      dgrad.col(c) += 2.0 * dd * cache.u.col(c);
    }
  }
  // Curvature term from differentiating the projection along the frames.
  for (int i = 0; i < x.num_frames(); ++i) {
    const auto r = x.frame(i);
    const auto g = cache.egrad.middleCols<3>(3 * i);
    const Matrix rdot = v.stiefel.middleCols<3>(3 * i) / x.scales(i);
    const Matrix3 rtg = r.transpose() * g;
    auto block = dgrad.middleCols<3>(3 * i);
    block -= rdot * sym(rtg);
    if (i > 0) block += (rtg.trace() / 3.0) * rdot;
  }
  return project_tangent(x, dgrad);
}

TangentVector hessian_vector_product(const Cost& cost, const FactorPoint& x,
                                     const TangentVector& v) {
  return hessian_vector_product(cost, x, evaluate(cost, x), v);
}

}  // namespace csba
