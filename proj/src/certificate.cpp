#include <csba/certificate.hpp>

#include <Eigen/QR>
#include <Eigen/SVD>

#include <cmath>

namespace csba {

ConstraintFamily::ConstraintFamily(int num_frames) : num_frames_(num_frames) {
  if (num_frames < 1) throw Error("constraint family needs at least one frame");
}

Matrix3 ConstraintFamily::basis(int k, int l) {
  Matrix3 b = Matrix3::Zero();
  static constexpr int kOff[3][2] = {{0, 1}, {0, 2}, {1, 2}};
  if (k == 0) {
    if (l < 3) {
      b(l, l) = 1.0;
    } else {
      b(kOff[l - 3][0], kOff[l - 3][1]) = b(kOff[l - 3][1], kOff[l - 3][0]) = 1.0;
    }
    return b;
  }
  if (l == 0) {
    b(0, 0) = 1.0;
    b(1, 1) = -1.0;
  } else if (l == 1) {
    b(1, 1) = 1.0;
    b(2, 2) = -1.0;
  } else {
    b(kOff[l - 2][0], kOff[l - 2][1]) = b(kOff[l - 2][1], kOff[l - 2][0]) = 1.0;
  }
  return b;
}

int ConstraintFamily::frame_of(int i) const {
  if (i < 0 || i >= size()) throw Error("constraint index out of range");
  return i < 6 ? 0 : (i - 1) / 5;
}

double ConstraintFamily::rhs(int i) const { return i < 3 ? 1.0 : 0.0; }

Matrix ConstraintFamily::dense(int i) const {
  const int k = frame_of(i);
  Matrix a = Matrix::Zero(3 * num_frames_, 3 * num_frames_);
  a.block<3, 3>(3 * k, 3 * k) = basis(k, i - offset(k));
  return a;
}

Matrix3 ConstraintFamily::block(const Vector& y, int k) const {
  Matrix3 b = Matrix3::Zero();
  for (int l = 0; l < count(k); ++l) b += y(offset(k) + l) * basis(k, l);
  return b;
}

double ConstraintFamily::feasibility_residual(const Matrix& u) const {
  if (u.cols() != 3 * num_frames_) throw Error("factor does not match constraint family");
  double worst = 0.0;
  for (int k = 0; k < num_frames_; ++k) {
    const Matrix3 xkk = u.middleCols<3>(3 * k).transpose() * u.middleCols<3>(3 * k);
    for (int l = 0; l < count(k); ++l) {
      const double v = basis(k, l).cwiseProduct(xkk).sum();
      worst = std::max(worst, std::abs(v - rhs(offset(k) + l)));
    }
  }
  return worst;
}

int ConstraintFamily::jacobian_rank(const Matrix& u, double rel_tol) const {
  const int m = size();
  const Eigen::Index len = u.size();
  Matrix jac(len, m);
  for (int i = 0; i < m; ++i) {
    const Matrix aut = dense(i) * u.transpose();  // 3N x r
    jac.col(i) = Eigen::Map<const Vector>(aut.data(), len);
  }
  Eigen::JacobiSVD<Matrix> svd(jac);
  const Vector& sv = svd.singularValues();
  int rank = 0;
  for (Eigen::Index j = 0; j < sv.size(); ++j) rank += sv(j) > rel_tol * sv(0) ? 1 : 0;
  return rank;
}

// ---------------------------------------------------------------------------

DualOperator::DualOperator(const Matrix& q, const Vector& y, const Vector& reg_diagonal)
    : q_(&q) {
  const int n = static_cast<int>(q.rows() / 3);
  const ConstraintFamily family(n);
  if (y.size() != family.size()) throw Error("multiplier length mismatch");
  blocks_.resize(n);
  for (int k = 0; k < n; ++k) {
    blocks_[k] = -family.block(y, k);
    if (reg_diagonal.size() > 0) {
      blocks_[k].diagonal() += reg_diagonal.segment<3>(3 * k);
    }
  }
  row_abs_.resize(q.rows());
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    const Eigen::Index b = 3 * (i / 3);
    row_abs_(i) = q.row(i).cwiseAbs().sum() - q.row(i).segment<3>(b).cwiseAbs().sum();
  }
}

void DualOperator::apply(const Vector& x, Vector& out) const {
  out.noalias() = *q_ * x;
  for (std::size_t k = 0; k < blocks_.size(); ++k) {
    out.segment<3>(3 * k) += blocks_[k] * x.segment<3>(3 * k);
  }
}

Matrix DualOperator::dense() const {
  Matrix z = *q_;
  for (std::size_t k = 0; k < blocks_.size(); ++k) z.block<3, 3>(3 * k, 3 * k) += blocks_[k];
  return z;
}

double DualOperator::gershgorin_lower() const {
  double lo = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < blocks_.size(); ++k) {
    const Matrix3 zb = q_->block<3, 3>(3 * k, 3 * k) + blocks_[k];
    for (int a = 0; a < 3; ++a) {
      const double radius = row_abs_(3 * k + a) + zb.row(a).cwiseAbs().sum() - std::abs(zb(a, a));
      lo = std::min(lo, zb(a, a) - radius);
    }
  }
  return lo;
}

double DualOperator::gershgorin_upper() const {
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < blocks_.size(); ++k) {
    const Matrix3 zb = q_->block<3, 3>(3 * k, 3 * k) + blocks_[k];
    for (int a = 0; a < 3; ++a) {
      const double radius = row_abs_(3 * k + a) + zb.row(a).cwiseAbs().sum() - std::abs(zb(a, a));
      hi = std::max(hi, zb(a, a) + radius);
    }
  }
  return hi;
}

Matrix DualOperator::times_transpose(const Matrix& u) const {
  Matrix zu = *q_ * u.transpose();
  for (std::size_t k = 0; k < blocks_.size(); ++k) {
    zu.middleRows<3>(3 * k) += blocks_[k] * u.middleCols<3>(3 * k).transpose();
  }
  return zu;
}

// ---------------------------------------------------------------------------

Vector assemble_dual(const Cost& cost, const Matrix& u) {
  const int n = cost.num_frames();
  if (u.cols() != 3 * n) throw Error("factor does not match Q");
  const ConstraintFamily family(n);
  const Vector d = cost.regularizer_gradient(u);
  // Q~ U^T, 3N x r.
  Matrix m = cost.q() * u.transpose();
  if (cost.lambda() > 0.0) m += d.asDiagonal() * u.transpose();

  const Eigen::Index r = u.rows();
  Vector y(family.size());
  for (int k = 0; k < n; ++k) {
    const int cnt = ConstraintFamily::count(k);
    const Matrix ukt = u.middleCols<3>(3 * k).transpose();  // 3 x r
    // Columns: vec(B_l U_k^T).
    Matrix design(3 * r, cnt);
    for (int l = 0; l < cnt; ++l) {
      const Matrix bu = ConstraintFamily::basis(k, l) * ukt;
      design.col(l) = Eigen::Map<const Vector>(bu.data(), 3 * r);
    }
    const Matrix target = m.middleRows<3>(3 * k);
    const Eigen::Map<const Vector> rhs(target.data(), 3 * r);
    Eigen::ColPivHouseholderQR<Matrix> qr(design);
    qr.setThreshold(1e-10);
    if (qr.rank() < cnt) throw Error("infeasible point");
    y.segment(ConstraintFamily::offset(k), cnt) = qr.solve(rhs);
  }
  return y;
}

double suboptimality(double rho_hat, double rho_lower) {
  return (rho_hat - rho_lower) / (1.0 + std::abs(rho_hat) + std::abs(rho_lower));
}

double rigorous_lower_bound(double rho_dual, double lambda_min, double trace_x) {
  return std::max(0.0, lambda_min) * trace_x + rho_dual;
}

double safe_lower_bound(double rho_dual, double lambda_min, double trace_x) {
  return rigorous_lower_bound(rho_dual, lambda_min, trace_x) -
         std::max(0.0, -lambda_min) * trace_x;
}

Certificate certify(const Cost& cost, const FactorPoint& x, const CertificateOptions& options) {
  Certificate c;
  const Matrix u = x.assemble();
  c.q_norm = cost.q().norm();
  const double scale = std::max(1.0, c.q_norm);
  c.y = assemble_dual(cost, u);
  const Vector d = cost.regularizer_gradient(u);
  const DualOperator z(cost.q(), c.y, d);
  c.kkt_residual = z.times_transpose(u).norm();

  LanczosOptions lo = options.lanczos;
  lo.tolerance = options.eig_tolerance * scale;
  const EigenPair eig = min_eigenpair(z, lo);
  c.min_eigenvalue = eig.value;
  c.min_eigenvector = eig.vector;
  c.eigen_residual = eig.residual;

  c.rho_hat = cost.value(u);
  c.trace_x = 3.0 * x.scales.squaredNorm();
  // b.y is the trace of frame 0's multiplier block.
  c.rho_dual = c.y.head<3>().sum();
  if (cost.lambda() > 0.0) {
    // Linearization of the convex regularizer at X: F(X) - <grad F, X>.
    double grad_dot_x = 0.0;
    for (Eigen::Index j = 0; j < u.cols(); ++j) grad_dot_x += d(j) * u.col(j).squaredNorm();
    c.rho_dual += cost.regularizer(u) - grad_dot_x;
  }
  c.rho_lower = rigorous_lower_bound(c.rho_dual, c.min_eigenvalue, c.trace_x);
  c.eta = suboptimality(c.rho_hat, c.rho_lower);
  c.eta_rigorous =
      suboptimality(c.rho_hat, safe_lower_bound(c.rho_dual, c.min_eigenvalue, c.trace_x));
  c.certified = c.min_eigenvalue >= -options.certify_threshold * scale;
  return c;
}

}  // namespace csba
