#include <csba/recovery.hpp>

#include <csba/geometry.hpp>

#include <Eigen/SVD>

#include <cmath>

namespace csba {

GroundTruth Solution::as_poses() const {
  GroundTruth g;
  g.rotations = rotations;
  g.translations = translations;
  g.scales = scales;
  g.points = points;
  return g;
}

FactorPoint gauge_fix(const FactorPoint& x) {
  if (x.rank() != 3) throw Error("gauge fixing needs a rank-3 factor");
  FactorPoint y = x;
  const Matrix3 g = x.frame(0).transpose();
  y.frames = g * x.frames;
  y.frame(0) = Matrix3::Identity();
  return y;
}

FactorPoint round_factor(const FactorPoint& x) {
  if (x.rank() == 3) return x;
  if (x.rank() < 3) throw Error("factor rank below 3");
  const Matrix u = x.assemble();
  Eigen::JacobiSVD<Matrix> svd(u, Eigen::ComputeThinV);
  Matrix v3 = svd.matrixV().leftCols(3);
  // Deterministic signs: largest-magnitude entry of each vector positive.
  for (int j = 0; j < 3; ++j) {
    Eigen::Index idx = 0;
    v3.col(j).cwiseAbs().maxCoeff(&idx);
    if (v3(idx, j) < 0) v3.col(j) = -v3.col(j);
  }
  const Matrix low = svd.singularValues().head(3).asDiagonal() * v3.transpose();  // 3 x 3N

  const int n = x.num_frames();
  FactorPoint y;
  y.frames.resize(3, 3 * n);
  y.scales.resize(n);
  for (int i = 0; i < n; ++i) {
    const Matrix3 block = low.middleCols<3>(3 * i);
    const double s = block.norm() / std::sqrt(3.0);
    if (!(s >= 1e-12)) throw Error("degenerate block");
    y.frame(i) = project_to_orthogonal(block / s);
    y.scales(i) = s;
  }
  y.scales /= y.scales(0);
  y.scales(0) = 1.0;
  return y;
}

FactorPoint enforce_proper_rotations(const FactorPoint& x, int* flips) {
  if (x.rank() != 3) throw Error("proper rotations need a rank-3 factor");
  FactorPoint y = x;
  int count = 0;
  for (int i = 0; i < x.num_frames(); ++i) {
    const Matrix3 r = x.frame(i);
    if (r.determinant() < 0) {
      y.frame(i) = project_to_rotation(r);
      ++count;
    }
  }
  if (flips) *flips = count;
  return y;
}

Solution build_solution(const ViewGraph& graph, const DataMatrix& data, const FactorPoint& x) {
  if (x.rank() != 3) throw Error("solution needs a rank-3 factor");
  if (x.num_frames() != graph.num_frames()) throw Error("factor does not match the view graph");
  Solution sol;
  const Matrix u = x.assemble();
  data.recover(u, sol.translations, sol.points);
  const int n = x.num_frames();
  for (int i = 0; i < n; ++i) {
    sol.rotations.push_back(x.frame(i));
    sol.scales.push_back(x.scales(i));
  }
  sol.rotations[0] = Matrix3::Identity();
  sol.scales[0] = 1.0;
  sol.translations[0].setZero();
  const std::vector<double> res = edge_residuals(graph, sol);
  sol.objective = 0.0;
  for (double r : res) sol.objective += r;
  sol.objective_q = quadratic_cost(data.q(), u);
  return sol;
}

std::vector<double> edge_residuals(const ViewGraph& graph, const Solution& sol) {
  std::vector<double> out;
  out.reserve(graph.num_edges());
  for (const Edge& e : graph.edges()) {
    const Vector3 r = sol.scales[e.frame] * (sol.rotations[e.frame] * e.point) +
                      sol.translations[e.frame] - sol.points[e.landmark];
    out.push_back(e.weight * r.squaredNorm());
  }
  return out;
}

Solution recover_solution(const ViewGraph& graph, const DataMatrix& data, const Cost& cost,
                          const StaircaseResult& result) {
  int flips = 0;
  const FactorPoint x = enforce_proper_rotations(gauge_fix(round_factor(result.factor)), &flips);
  Solution sol = build_solution(graph, data, x);
  sol.flip_count = flips;
  sol.certificate = result.certificate;
  Certificate& c = sol.certificate;
  c.rho_hat = cost.value(x);
  c.eta = suboptimality(c.rho_hat, c.rho_lower);
  c.eta_rigorous =
      suboptimality(c.rho_hat, safe_lower_bound(c.rho_dual, c.min_eigenvalue, c.trace_x));
  return sol;
}

}  // namespace csba
