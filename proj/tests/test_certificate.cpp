#include <csba/certificate.hpp>
#include <csba/reduction.hpp>

#include "test_util.hpp"

#include <doctest.h>

#include <Eigen/Eigenvalues>

using namespace csba;
using namespace csba::testing;

TEST_CASE("min_eigenpair on small dense matrices") {
  SUBCASE("diag(1, 2, -3)") {
    Matrix z = Vector3(1, 2, -3).asDiagonal();
    const EigenPair e = min_eigenpair(DenseOperator(z));
    CHECK(e.value == doctest::Approx(-3.0).epsilon(1e-12));
    CHECK(std::abs(std::abs(e.vector(2)) - 1.0) < 1e-10);
    CHECK(e.residual <= 1e-8);
  }
  SUBCASE("identity") {
    const EigenPair e = min_eigenpair(DenseOperator(Matrix::Identity(7, 7)));
    CHECK(e.value == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(e.vector.norm() == doctest::Approx(1.0));
  }
  SUBCASE("random symmetric against a dense solver") {
    std::mt19937_64 rng(1);
    for (int n : {1, 2, 10, 60, 200}) {
      const Matrix a = random_symmetric(n, rng);
      Eigen::SelfAdjointEigenSolver<Matrix> ref(a);
      const EigenPair e = min_eigenpair(DenseOperator(a));
      CAPTURE(n);
      CHECK(e.value == doctest::Approx(ref.eigenvalues()(0)).epsilon(1e-9));
      CHECK((a * e.vector - e.value * e.vector).norm() <= 1e-8);
    }
  }
  SUBCASE("clustered bottom of the spectrum") {
    std::mt19937_64 rng(2);
    const Matrix qm = random_orthogonal(150, rng);
    Vector d = Vector::LinSpaced(150, 1.0, 100.0);
    d.head(4) << -1e-7, 0.0, 0.0, 1e-7;
    const Matrix a = qm * d.asDiagonal() * qm.transpose();
    const EigenPair e = min_eigenpair(DenseOperator(a));
    CHECK(e.value <= 1e-7);
    CHECK(e.value >= -1e-7 - 1e-8);
    CHECK(e.residual <= 1e-8);
  }
  SUBCASE("a tiny Krylov budget triggers the fallback") {
    std::mt19937_64 rng(3);
    const Matrix a = random_symmetric(80, rng);
    LanczosOptions o;
    o.max_basis = 3;
    o.max_restarts = 1;
    const EigenPair e = min_eigenpair(DenseOperator(a), o);
    Eigen::SelfAdjointEigenSolver<Matrix> ref(a);
    CHECK(e.used_fallback);
    CHECK(e.value == doctest::Approx(ref.eigenvalues()(0)).epsilon(1e-9));
  }
}

TEST_CASE("constraint family bookkeeping") {
  const ConstraintFamily f(4);
  CHECK(f.size() == 21);
  int rhs_one = 0;
  for (int i = 0; i < f.size(); ++i) {
    const Matrix a = f.dense(i);
    CHECK((a - a.transpose()).norm() == 0.0);
    rhs_one += f.rhs(i) == 1.0 ? 1 : 0;
    // Support is exactly one diagonal 3x3 block.
    const int k = f.frame_of(i);
    Matrix off = a;
    off.block<3, 3>(3 * k, 3 * k).setZero();
    CHECK(off.norm() == 0.0);
  }
  CHECK(rhs_one == 3);

  std::mt19937_64 rng(4);
  for (int r : {3, 5}) {
    const Matrix u = FactorPoint::random(4, r, rng).assemble();
    CHECK(f.feasibility_residual(u) <= 1e-10);
    // Same quantity through the dense matrices.
    const Matrix x = u.transpose() * u;
    for (int i = 0; i < f.size(); ++i) {
      CHECK(std::abs(f.dense(i).cwiseProduct(x).sum() - f.rhs(i)) <= 1e-10);
    }
  }
  Matrix bad = FactorPoint::identity(2).assemble();
  bad(0, 3) = 1.5;
  CHECK(ConstraintFamily(2).feasibility_residual(bad) > 1.0);
}

TEST_CASE("constraint gradients are linearly independent") {
  std::mt19937_64 rng(5);
  for (int n = 1; n <= 6; ++n) {
    for (int trial = 0; trial < 5; ++trial) {
      const int r = 3 + trial % 3;
      const ConstraintFamily f(n);
      const Matrix u = FactorPoint::random(n, r, rng).assemble();
      CHECK(f.jacobian_rank(u) == f.size());
    }
  }
}

TEST_CASE("dual operator structure") {
  std::mt19937_64 rng(6);
  const Matrix q = random_psd(12, rng);
  const ConstraintFamily f(4);
  SUBCASE("zero multipliers give Q") {
    const DualOperator z(q, Vector::Zero(f.size()), Vector());
    CHECK((z.dense() - q).norm() == 0.0);
  }
  SUBCASE("assembled operator is symmetric and differs from Q on diagonal blocks only") {
    const Vector y = random_matrix(f.size(), 1, rng);
    const Vector d = random_matrix(12, 1, rng);
    const DualOperator z(q, y, d);
    Matrix assembled(12, 12);
    Vector e = Vector::Zero(12), col(12);
    for (int j = 0; j < 12; ++j) {
      e.setZero();
      e(j) = 1.0;
      z.apply(e, col);
      assembled.col(j) = col;
    }
    CHECK((assembled - assembled.transpose()).norm() <= 1e-12);
    Matrix expect = q + Matrix(d.asDiagonal());
    for (int i = 0; i < f.size(); ++i) expect -= y(i) * f.dense(i);
    CHECK((assembled - expect).norm() <= 1e-12);
    Matrix diff = assembled - q;
    for (int k = 0; k < 4; ++k) diff.block<3, 3>(3 * k, 3 * k).setZero();
    CHECK(diff.norm() == 0.0);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(expect);
    CHECK(z.gershgorin_lower() <= eig.eigenvalues()(0) + 1e-12);
    CHECK(z.gershgorin_upper() >= eig.eigenvalues()(11) - 1e-12);
  }
}

TEST_CASE("assemble_dual") {
  SUBCASE("Q = 0 at identity blocks") {
    const Matrix q = Matrix::Zero(9, 9);
    const Cost cost(q);
    const FactorPoint x = FactorPoint::identity(3);
    const Certificate c = certify(cost, x);
    CHECK(c.y.norm() == 0.0);
    CHECK(c.kkt_residual == 0.0);
    CHECK(c.certified);
  }
  SUBCASE("noiseless optimum") {
    const auto scene = small_scene(10, 60, 0.0, 2);
    const DataMatrix d = build_data_matrix(scene.graph);
    const Cost cost(d.q());
    const Certificate c = certify(cost, ground_truth_point(scene.ground_truth));
    CHECK(c.kkt_residual <= 1e-8 * d.norm());
    CHECK(c.min_eigenvalue >= -1e-6 * d.norm());
    CHECK(c.certified);
    CHECK(std::abs(c.eta) <= 1e-6);
    CHECK(std::abs(c.eta_rigorous) <= 1e-6);
    CHECK(std::abs(c.rho_lower - c.rho_hat) <= 1e-6 * (1 + std::abs(c.rho_hat)));
    // Z(y) annihilates the factor column by column.
    const DualOperator z(d.q(), c.y, Vector());
    const Matrix u = ground_truth_factor(scene.ground_truth);
    Vector out;
    for (int row = 0; row < 3; ++row) {
      z.apply(u.row(row).transpose(), out);
      CHECK(out.norm() <= 1e-8 * d.norm());
    }
  }
  SUBCASE("multipliers are recovered from a planted dual") {
    // Build Q so that Z = Q - sum y A_i annihilates U^T and is PSD: then y is
    // the unique multiplier by linear independence.
    std::mt19937_64 rng(7);
    const int n = 4;
    const ConstraintFamily f(n);
    const FactorPoint x = FactorPoint::random(n, 3, rng);
    const Matrix u = x.assemble();
    const Matrix basis = u.transpose().householderQr().householderQ();
    const Matrix perp = basis.rightCols(3 * n - 3);
    const Matrix a = random_matrix(3 * n - 3, 3 * n - 3, rng);
    const Matrix zplant = perp * (a * a.transpose()) * perp.transpose();
    Vector y = random_matrix(f.size(), 1, rng);
    Matrix q = zplant;
    for (int i = 0; i < f.size(); ++i) q += y(i) * f.dense(i);
    const Cost cost(q);
    const Vector got = assemble_dual(cost, u);
    CHECK((got - y).norm() <= 1e-9 * (1 + y.norm()));
  }
  SUBCASE("non-critical point leaves a residual tied to the gradient") {
    std::mt19937_64 rng(8);
    const Matrix q = random_psd(15, rng);
    const Cost cost(q);
    const FactorPoint x = FactorPoint::random(5, 4, rng);
    const Vector y = assemble_dual(cost, x.assemble());
    const DualOperator z(q, y, Vector());
    const double kkt = z.times_transpose(x.assemble()).norm();
    CHECK(kkt > 0.0);
    // The Riemannian gradient is the projection of 2 U Q, whose normal part
    // is absorbed by the multipliers: ||grad|| = 2 ||Z U^T||.
    CHECK(norm(riemannian_gradient(cost, x)) == doctest::Approx(2.0 * kkt).epsilon(1e-8));
  }
  SUBCASE("rank deficient block is rejected") {
    const Matrix q = Matrix::Identity(6, 6);
    const Cost cost(q);
    Matrix u = FactorPoint::identity(2).assemble();
    u.col(4).setZero();
    u.col(5).setZero();
    CHECK_THROWS_WITH_AS(assemble_dual(cost, u), "infeasible point", Error);
  }
}

TEST_CASE("suboptimality and lower bounds") {
  CHECK(suboptimality(5, 5) == 0.0);
  CHECK(suboptimality(1, 0) == 0.5);
  CHECK(rigorous_lower_bound(3, -0.1, 10) == 3.0);
  CHECK(rigorous_lower_bound(3, 0.2, 10) == doctest::Approx(5.0));
  CHECK(safe_lower_bound(3, -0.1, 10) == doctest::Approx(2.0));
  CHECK(safe_lower_bound(3, 0.2, 10) == doctest::Approx(5.0));
}

TEST_CASE("weak duality on a certified instance") {
  const auto scene = small_scene(6, 40, 0.0, 3);
  const DataMatrix d = build_data_matrix(scene.graph);
  const Cost cost(d.q());
  const Certificate c = certify(cost, ground_truth_point(scene.ground_truth));
  REQUIRE(c.certified);
  CHECK(c.rho_dual <= c.rho_hat + 1e-9 * (1 + c.rho_hat));
}

TEST_CASE("regularized certificate at an optimum with unit scales") {
  SynthOptions o;
  o.num_frames = 6;
  o.num_landmarks = 40;
  o.noise_eps = 0.0;
  o.scale_spread = 1.0;
  o.seed = 4;
  const auto scene = synth_scene(o);
  const DataMatrix d = build_data_matrix(scene.graph);
  const Cost cost(d.q(), 1.0);
  const Certificate c = certify(cost, ground_truth_point(scene.ground_truth));
  CHECK(c.kkt_residual <= 1e-8 * d.norm());
  CHECK(c.certified);
  CHECK(std::abs(c.eta_rigorous) <= 1e-6);
}
