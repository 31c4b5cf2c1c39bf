#include <csba/reduction.hpp>

#include "test_util.hpp"

#include <doctest.h>

#include <Eigen/Eigenvalues>

#include <sstream>

using namespace csba;
using namespace csba::testing;

namespace {

ViewGraph two_frames_one_landmark() {
  return ViewGraph(2, 1, {{0, 0, Vector3(0.1, 0.2, 1.0), 1.0}, {1, 0, Vector3(-0.3, 0.1, 2.0), 1.0}});
}

}  // namespace

TEST_CASE("build_blocks on a single edge") {
  const Vector3 v(0.5, -0.25, 2.0);
  const ViewGraph g(1, 1, {{0, 0, v, 1.0}});
  const ReductionBlocks b = build_blocks(g);
  CHECK((b.q1_blocks[0] - v * v.transpose()).norm() == 0.0);
  CHECK(b.q2(0) == 1.0);
  CHECK(b.q3(0) == 1.0);
  CHECK((Matrix(b.v1) - Matrix(v)).norm() == 0.0);
  CHECK((Matrix(b.v2) - Matrix(v)).norm() == 0.0);
  CHECK(Matrix(b.v3)(0, 0) == 1.0);
}

TEST_CASE("build_blocks weighted degree") {
  const ViewGraph g(1, 2, {{0, 0, Vector3(0, 0, 1), 2.0}, {0, 1, Vector3(1, 0, 1), 3.0}});
  CHECK(build_blocks(g).q2(0) == 5.0);
}

TEST_CASE("build_blocks degrees match direct edge iteration") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> w(0.5, 2.0);
  std::vector<Edge> edges;
  for (int i = 0; i < 4; ++i) {
    for (int k = 0; k < 5; ++k) {
      if ((i + k) % 2 == 0) edges.push_back({i, k, Vector3(0.1 * i, 0.2 * k, 1.5), w(rng)});
    }
  }
  const ViewGraph g(4, 5, edges);
  REQUIRE(g.num_edges() == 10);
  const ReductionBlocks b = build_blocks(g);
  Vector deg_f = Vector::Zero(4), deg_l = Vector::Zero(5);
  for (const Edge& e : g.edges()) {
    deg_f(e.frame) += e.weight;
    deg_l(e.landmark) += e.weight;
  }
  CHECK((b.q2 - deg_f).norm() < 1e-15);
  CHECK((b.q3 - deg_l).norm() < 1e-15);
}

TEST_CASE("laplacian of two frames sharing one landmark") {
  const LaplacianSystem lap(build_blocks(two_frames_one_landmark()));
  Matrix expected(3, 3);
  expected << 1, 0, -1, 0, 1, -1, -1, -1, 2;
  CHECK((Matrix(lap.laplacian()) - expected).norm() == 0.0);
}

TEST_CASE("laplacian rows sum to zero and rank is N+M-1") {
  const auto scene = small_scene(6, 20, 0.3, 11);
  const LaplacianSystem lap(build_blocks(scene.graph));
  const Matrix l = lap.laplacian();
  CHECK((l * Vector::Ones(l.rows())).norm() < 1e-12);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(l);
  CHECK(eig.eigenvalues()(0) > -1e-10);
  CHECK(std::abs(eig.eigenvalues()(0)) < 1e-10);
  CHECK(eig.eigenvalues()(1) > 1e-6);
}

TEST_CASE("disconnected graph fails the reduced factorization") {
  const ViewGraph g(2, 2, {{0, 0, Vector3(0, 0, 1), 1.0}, {1, 1, Vector3(0, 0, 1), 1.0}});
  CHECK(connected_components(g) == 2);
  CHECK_THROWS_WITH_AS(LaplacianSystem(build_blocks(g)), "graph numerically disconnected", Error);
  CHECK_THROWS_AS(build_data_matrix(g), Error);
}

TEST_CASE("single frame data matrix is zero") {
  const ViewGraph g(1, 3, {{0, 0, Vector3(0.1, 0, 1), 1.0},
                           {0, 1, Vector3(0, 0.3, 2), 2.0},
                           {0, 2, Vector3(-1, 1, 3), 0.5}});
  const DataMatrix d = build_data_matrix(g);
  CHECK(d.q().norm() < 1e-12);
  CHECK(marginal_objective_oracle(g, Matrix::Identity(3, 3)) < 1e-24);

  std::vector<Vector3> t, p;
  d.recover(Matrix::Identity(3, 3), t, p);
  for (const Edge& e : g.edges()) CHECK((p[e.landmark] - e.point).norm() < 1e-14);
  CHECK(t[0].norm() == 0.0);
}

TEST_CASE("noiseless scene has zero cost at the ground truth") {
  const auto scene = small_scene(8, 40, 0.0, 5);
  const DataMatrix d = build_data_matrix(scene.graph);
  const Matrix u = ground_truth_factor(scene.ground_truth);
  CHECK(quadratic_cost(d.q(), u) <= 1e-10 * d.norm());
  CHECK(marginal_objective_oracle(scene.graph, u) <= 1e-12);

  std::vector<Vector3> t, p;
  d.recover(u, t, p);
  for (int i = 0; i < 8; ++i) CHECK((t[i] - scene.ground_truth.translations[i]).norm() < 1e-8);
  for (int k = 0; k < 40; ++k) CHECK((p[k] - scene.ground_truth.points[k]).norm() < 1e-8);
}

TEST_CASE("data matrix is symmetric and positive semidefinite") {
  const auto scene = small_scene(7, 30, 0.5, 8);
  const DataMatrix d = build_data_matrix(scene.graph);
  CHECK((d.q() - d.q().transpose()).norm() <= 1e-12 * d.norm());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(d.q());
  CHECK(eig.eigenvalues()(0) >= -1e-9 * d.norm());
}

TEST_CASE("trace(Q U^T U) matches the marginal objective oracle") {
  std::mt19937_64 rng(21);
  for (int scene_seed = 0; scene_seed < 4; ++scene_seed) {
    const auto scene = small_scene(2 + 2 * scene_seed, 10 + 7 * scene_seed, 0.4, 100 + scene_seed);
    const DataMatrix d = build_data_matrix(scene.graph);
    for (int trial = 0; trial < 20; ++trial) {
      const Matrix u = FactorPoint::random(scene.graph.num_frames(), 3, rng).assemble();
      CHECK(relative_error(quadratic_cost(d.q(), u), marginal_objective_oracle(scene.graph, u)) <=
            1e-8);
    }
  }
}

TEST_CASE("oracle agrees at identity blocks on a three-frame scene") {
  const auto scene = small_scene(3, 12, 0.3, 77);
  const DataMatrix d = build_data_matrix(scene.graph);
  const Matrix u = FactorPoint::identity(3).assemble();
  CHECK(relative_error(quadratic_cost(d.q(), u), marginal_objective_oracle(scene.graph, u)) <= 1e-8);
}

TEST_CASE("gauge invariance of the cost") {
  std::mt19937_64 rng(4);
  const auto scene = small_scene(5, 25, 0.5, 9);
  const DataMatrix d = build_data_matrix(scene.graph);
  for (int r : {3, 5}) {
    const Matrix u = FactorPoint::random(5, r, rng).assemble();
    const Matrix g = random_orthogonal(r, rng);
    CHECK(relative_error(quadratic_cost(d.q(), g * u), quadratic_cost(d.q(), u)) <= 1e-12);
  }
}

TEST_CASE("recovered translations and points are stationary and linear in U") {
  std::mt19937_64 rng(12);
  const auto scene = small_scene(6, 30, 0.5, 31);
  const DataMatrix d = build_data_matrix(scene.graph);
  const Matrix u = FactorPoint::random(6, 3, rng).assemble();
  std::vector<Vector3> t, p, t2, p2;
  d.recover(u, t, p);
  const double scale = std::max(1.0, u.norm() * d.norm());
  CHECK(d.normal_equation_residual(u, t, p) <= 1e-8 * scale);
  CHECK(t[0].norm() == 0.0);

  const double gamma = 2.5;
  d.recover(gamma * u, t2, p2);
  for (int i = 0; i < 6; ++i) CHECK((t2[i] - gamma * t[i]).norm() <= 1e-12 * (1 + t2[i].norm()));
  for (int k = 0; k < 30; ++k) CHECK((p2[k] - gamma * p[k]).norm() <= 1e-12 * (1 + p2[k].norm()));

  // Direct objective with the recovered (t, p) equals trace(Q U^T U).
  double direct = 0.0;
  for (const Edge& e : scene.graph.edges()) {
    direct += e.weight * (u.middleCols<3>(3 * e.frame) * e.point + t[e.frame] - p[e.landmark]).squaredNorm();
  }
  CHECK(relative_error(direct, quadratic_cost(d.q(), u)) <= 1e-8);
}

TEST_CASE("frame cap guards dense Q") {
  const auto scene = small_scene(4, 10, 0.0, 1);
  DataMatrixOptions o;
  o.max_frames = 3;
  CHECK_THROWS_AS(build_data_matrix(scene.graph, o), Error);
}

TEST_CASE("matrix market dump") {
  const DataMatrix d = build_data_matrix(two_frames_one_landmark());
  std::ostringstream sparse, dense;
  write_matrix_market(sparse, d.laplacian().laplacian());
  write_matrix_market(dense, d.q());
  CHECK(sparse.str().rfind("%%MatrixMarket matrix coordinate real general\n3 3 7\n", 0) == 0);
  CHECK(dense.str().rfind("%%MatrixMarket matrix array real general\n6 6\n", 0) == 0);
}
