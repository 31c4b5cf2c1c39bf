#include <csba/geometry.hpp>
#include <csba/viewgraph.hpp>

#include "test_util.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

using namespace csba;
using namespace csba::testing;

namespace {

constexpr const char* kSmallBal =
    "1 1 1\n"
    "0 0 0.5 0.5\n"
    "0 0 0 0 0 0 0 0 0\n"
    "1 2 3\n";

}  // namespace

TEST_CASE("parse_bal smallest file") {
  std::istringstream in(kSmallBal);
  const BalData d = parse_bal(in);
  CHECK(d.graph.num_frames == 1);
  CHECK(d.graph.num_landmarks == 1);
  REQUIRE(d.graph.observations.size() == 1);
  CHECK(d.graph.observations[0].u == Vector2(0.5, 0.5));
  CHECK((d.ground_truth.points[0] - Vector3(1, 2, 3)).norm() < 1e-15);
  CHECK(d.ground_truth.rotations[0] == Matrix3::Identity());
  d.ground_truth.validate();
}

TEST_CASE("parse_bal errors") {
  SUBCASE("observation count mismatch") {
    std::ostringstream s;
    s << "2 2 5\n";
    for (int k = 0; k < 4; ++k) s << "0 " << k % 2 << " 0.1 0.2\n";
    for (int c = 0; c < 18; ++c) s << "0\n";
    for (int c = 0; c < 6; ++c) s << "1\n";
    std::istringstream in(s.str());
    CHECK_THROWS_WITH_AS(parse_bal(in), "observation count mismatch", Error);
  }
  SUBCASE("index out of range") {
    std::istringstream in("2 2 1\n7 0 0.1 0.2\n" + std::string(18, '0') + "\n");
    CHECK_THROWS_WITH_AS(parse_bal(in), doctest::Contains("index out of range"), Error);
  }
  SUBCASE("malformed header") {
    std::istringstream in("2 x 1\n");
    CHECK_THROWS_WITH_AS(parse_bal(in), doctest::Contains("malformed header"), Error);
  }
  SUBCASE("non-finite values") {
    std::istringstream in("1 1 1\n0 0 nan 0.5\n0 0 0 0 0 0 0 0 0\n1 2 3\n");
    CHECK_THROWS_AS(parse_bal(in), Error);
  }
  SUBCASE("truncated parameters") {
    std::istringstream in("1 1 1\n0 0 0.5 0.5\n0 0 0 0 0 0 0\n");
    CHECK_THROWS_WITH_AS(parse_bal(in), doctest::Contains("parameter count mismatch"), Error);
  }
}

TEST_CASE("parse_bal converts cameras looking down -z") {
  // Two cameras in the BAL convention (x_cam = R X + t, projection -P/P.z)
  // observing three points in front of them.
  const Matrix3 r1 = rotation_from_axis_angle(Vector3(0.1, -0.2, 0.05));
  const Vector3 t1(0.3, -0.1, -0.2);
  const std::vector<Vector3> pts = {Vector3(0.1, 0.2, -5), Vector3(-0.5, 0.3, -6), Vector3(0.4, -0.2, -4)};
  const double focal = 500.0;
  std::ostringstream s;
  s.precision(17);
  s << "2 3 6\n";
  for (int cam = 0; cam < 2; ++cam) {
    for (int k = 0; k < 3; ++k) {
      const Vector3 p = cam == 0 ? pts[k] : Vector3(r1 * pts[k] + t1);
      s << cam << ' ' << k << ' ' << -focal * p.x() / p.z() << ' ' << -focal * p.y() / p.z() << '\n';
    }
  }
  const Eigen::AngleAxisd aa(r1);
  const Vector3 omega = aa.angle() * aa.axis();
  s << "0 0 0 0 0 0 " << focal << " 0 0\n";
  s << omega.x() << ' ' << omega.y() << ' ' << omega.z() << ' ' << t1.x() << ' ' << t1.y() << ' '
    << t1.z() << ' ' << focal << " 0 0\n";
  for (const Vector3& p : pts) s << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';

  std::istringstream in(s.str());
  const BalData d = parse_bal(in);
  d.ground_truth.validate();
  GraphDiagnostics diag;
  const DepthMap depths = depths_from_ground_truth(d.graph, d.ground_truth, &diag);
  CHECK(diag.negative_depth_dropped == 0);
  const ViewGraph g = lift_to_3d(d.graph, depths);
  // Lifted points coincide with the ground-truth camera-frame points.
  for (const Edge& e : g.edges()) {
    CHECK((e.point - camera_frame_point(d.ground_truth, e.frame, e.landmark)).norm() < 1e-9);
  }
}

TEST_CASE("lift_to_3d") {
  ViewGraph2D g2;
  g2.num_frames = 1;
  g2.num_landmarks = 2;
  g2.observations = {{0, 0, Vector2(0.5, -0.25)}, {0, 1, Vector2(0, 0)}};
  DepthMap depths{{{0, 0}, 2.0}, {{0, 1}, 1.0}};
  const ViewGraph g = lift_to_3d(g2, depths);
  CHECK(g.edges()[0].point == Vector3(1.0, -0.5, 2.0));
  CHECK(g.edges()[1].point == Vector3(0, 0, 1));
  CHECK(g.edges()[0].weight == 1.0);

  // Perspective division recovers the keypoints.
  for (std::size_t e = 0; e < 2; ++e) {
    const Vector3& p = g.edges()[e].point;
    CHECK((Vector2(p.x() / p.z(), p.y() / p.z()) - g2.observations[e].u).norm() < 1e-15);
  }

  WeightMap weights{{{0, 1}, 4.0}};
  CHECK(lift_to_3d(g2, depths, &weights).edges()[1].weight == 4.0);

  depths[{0, 1}] = 0.0;
  CHECK_THROWS_WITH_AS(lift_to_3d(g2, depths), "non-positive depth", Error);
  depths.erase({0, 1});
  CHECK_THROWS_WITH_AS(lift_to_3d(g2, depths), doctest::Contains("missing depth"), Error);
}

TEST_CASE("depths_from_ground_truth") {
  GroundTruth gt;
  gt.rotations = {Matrix3::Identity(), Matrix3::Identity()};
  gt.translations = {Vector3::Zero(), Vector3(0, 0, -3)};
  gt.scales = {1.0, 1.0};
  gt.points = {Vector3(1, 2, 3), Vector3(0, 0, 0), Vector3(0, 0, -1)};
  ViewGraph2D g2;
  g2.num_frames = 2;
  g2.num_landmarks = 3;
  g2.observations = {{0, 0, {}}, {1, 1, {}}, {0, 2, {}}};
  GraphDiagnostics diag;
  const DepthMap d = depths_from_ground_truth(g2, gt, &diag);
  CHECK(d.at({0, 0}) == 3.0);
  CHECK(d.at({1, 1}) == 3.0);
  CHECK(d.count({0, 2}) == 0);
  CHECK(diag.negative_depth_dropped == 1);
}

TEST_CASE("view graph invariants and sanitizing") {
  const Vector3 p(0, 0, 1);
  CHECK_THROWS_AS(ViewGraph(1, 1, {}), Error);
  CHECK_THROWS_AS(ViewGraph(1, 1, {{0, 0, p, 0.0}}), Error);
  CHECK_THROWS_AS(ViewGraph(1, 1, {{0, 0, Vector3(0, 0, -1), 1.0}}), Error);
  CHECK_THROWS_AS(ViewGraph(1, 1, {{0, 0, p, 1.0}, {0, 0, p, 1.0}}), Error);
  CHECK_THROWS_AS(ViewGraph(1, 2, {{0, 0, p, 1.0}}), Error);

  GraphDiagnostics diag;
  std::vector<int> remap;
  const ViewGraph g = ViewGraph::sanitize(
      1, 3, {{0, 0, p, 1.0}, {0, 0, 2 * p, 1.0}, {0, 2, p, 1.0}}, &diag, &remap);
  CHECK(diag.duplicates_dropped == 1);
  CHECK(diag.landmarks_removed == 1);
  CHECK(g.num_landmarks() == 2);
  CHECK(g.edges()[0].point == p);  // first duplicate kept
  CHECK(remap == std::vector<int>{0, -1, 1});
}

TEST_CASE("connectivity") {
  const Vector3 p(0, 0, 1);
  CHECK(connected_components(ViewGraph(2, 1, {{0, 0, p, 1.0}, {1, 0, p, 1.0}})) == 1);
  const ViewGraph split(2, 2, {{0, 0, p, 1.0}, {1, 1, p, 1.0}});
  CHECK(connected_components(split) == 2);
  CHECK_THROWS_AS(require_connected(split), Error);
}

TEST_CASE("synth_scene") {
  SUBCASE("noiseless points match the geometry") {
    const auto scene = small_scene(6, 40, 0.0, 1, 0.3);
    scene.ground_truth.validate();
    CHECK(connected_components(scene.graph) == 1);
    CHECK(scene.ground_truth.rotations[0] == Matrix3::Identity());
    CHECK(scene.ground_truth.translations[0] == Vector3::Zero());
    CHECK(scene.ground_truth.scales[0] == 1.0);
    for (const Edge& e : scene.graph.edges()) {
      const auto& gt = scene.ground_truth;
      const Vector3 pred = gt.rotations[e.frame].transpose() *
                           (gt.points[e.landmark] - gt.translations[e.frame]) / gt.scales[e.frame];
      CHECK((pred - e.point).norm() <= 1e-12);
      // Same statement in the objective's form: s R u + t = p.
      const Vector3 world = gt.scales[e.frame] * gt.rotations[e.frame] * e.point + gt.translations[e.frame];
      CHECK((world - gt.points[e.landmark]).norm() <= 1e-12);
    }
  }
  SUBCASE("deterministic per seed") {
    const auto a = small_scene(5, 20, 0.3, 42);
    const auto b = small_scene(5, 20, 0.3, 42);
    CHECK(a.graph == b.graph);
    std::ostringstream ja, jb;
    write_graph_json(ja, a.graph);
    write_graph_json(jb, b.graph);
    CHECK(ja.str() == jb.str());
    const auto c = small_scene(5, 20, 0.3, 43);
    CHECK_FALSE(a.graph == c.graph);
  }
  SUBCASE("sparse visibility still connects") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto scene = small_scene(8, 15, 0.0, seed, 0.02);
      CHECK(connected_components(scene.graph) == 1);
    }
  }
  SUBCASE("invalid parameters") {
    SynthOptions o;
    o.num_landmarks = 0;
    CHECK_THROWS_AS(synth_scene(o), Error);
    o = SynthOptions{};
    o.noise_eps = -1;
    CHECK_THROWS_AS(synth_scene(o), Error);
    o = SynthOptions{};
    o.visibility = 0.0;
    CHECK_THROWS_AS(synth_scene(o), Error);
  }
}

TEST_CASE("synth noise factor is log-uniform") {
  // x = log(|noisy| / |clean|) / log(1 + eps) must be U(-1, 1); check with
  // a one-sample Kolmogorov-Smirnov statistic.
  const double eps = 0.5;
  const auto noisy = small_scene(20, 500, eps, 9, 1.0);
  const auto clean = small_scene(20, 500, 0.0, 9, 1.0);
  REQUIRE(noisy.graph.num_edges() == 10000);
  std::vector<double> xs;
  for (std::size_t e = 0; e < noisy.graph.num_edges(); ++e) {
    const Vector3 truth = camera_frame_point(noisy.ground_truth, noisy.graph.edges()[e].frame,
                                             noisy.graph.edges()[e].landmark);
    xs.push_back(std::log(noisy.graph.edges()[e].point.norm() / truth.norm()) / std::log1p(eps));
  }
  (void)clean;
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double cdf = (xs[i] + 1.0) / 2.0;
    d = std::max({d, std::abs(cdf - i / n), std::abs((i + 1) / n - cdf)});
  }
  // Asymptotic KS: p = 0.01 corresponds to sqrt(n) D = 1.628.
  CHECK(std::sqrt(n) * d < 1.628);
  CHECK(xs.front() >= -1.0);
  CHECK(xs.back() <= 1.0);
}

TEST_CASE("graph and ground truth JSON round trip") {
  const auto scene = small_scene(4, 12, 0.2, 5);
  std::stringstream g, t;
  write_graph_json(g, scene.graph);
  write_ground_truth_json(t, scene.ground_truth);
  CHECK(read_graph_json(g) == scene.graph);
  const GroundTruth back = read_ground_truth_json(t);
  for (int i = 0; i < 4; ++i) {
    CHECK(back.rotations[i] == scene.ground_truth.rotations[i]);
    CHECK(back.translations[i] == scene.ground_truth.translations[i]);
  }
  std::istringstream bad("{\"num_frames\": 1}");
  CHECK_THROWS_AS(read_graph_json(bad), Error);
}
