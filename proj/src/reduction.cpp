#include <csba/reduction.hpp>

#include <Eigen/OrderingMethods>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>

namespace csba {

Matrix ReductionBlocks::q1_dense() const {
  Matrix q1 = Matrix::Zero(3 * num_frames, 3 * num_frames);
  for (int i = 0; i < num_frames; ++i) q1.block<3, 3>(3 * i, 3 * i) = q1_blocks[i];
  return q1;
}

ReductionBlocks build_blocks(const ViewGraph& graph) {
  const int n = graph.num_frames();
  const int m = graph.num_landmarks();
  ReductionBlocks b;
  b.num_frames = n;
  b.num_landmarks = m;
  b.q1_blocks.assign(static_cast<std::size_t>(n), Matrix3::Zero());
  b.q2 = Vector::Zero(n);
  b.q3 = Vector::Zero(m);

  std::vector<Vector3> frame_sums(static_cast<std::size_t>(n), Vector3::Zero());
  std::vector<Triplet> v2, v3;
  v2.reserve(3 * graph.num_edges());
  v3.reserve(graph.num_edges());
  for (const Edge& e : graph.edges()) {
    const double w = e.weight;
    b.q1_blocks[e.frame] += w * e.point * e.point.transpose();
    b.q2(e.frame) += w;
    b.q3(e.landmark) += w;
    frame_sums[e.frame] += w * e.point;
    for (int a = 0; a < 3; ++a) v2.emplace_back(3 * e.frame + a, e.landmark, w * e.point(a));
    v3.emplace_back(e.frame, e.landmark, w);
  }
  std::vector<Triplet> v1;
  for (int i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a) v1.emplace_back(3 * i + a, i, frame_sums[i](a));
  }
  b.v1.resize(3 * n, n);
  b.v1.setFromTriplets(v1.begin(), v1.end());
  b.v2.resize(3 * n, m);
  b.v2.setFromTriplets(v2.begin(), v2.end());
  b.v3.resize(n, m);
  b.v3.setFromTriplets(v3.begin(), v3.end());
  return b;
}

// ---------------------------------------------------------------------------

LaplacianSystem::LaplacianSystem(const ReductionBlocks& blocks) {
  const int n = blocks.num_frames;
  const int m = blocks.num_landmarks;
  const int dim = n + m;
  std::vector<Triplet> trip;
  trip.reserve(static_cast<std::size_t>(dim + 2 * blocks.v3.nonZeros()));
  for (int i = 0; i < n; ++i) trip.emplace_back(i, i, blocks.q2(i));
  for (int k = 0; k < m; ++k) trip.emplace_back(n + k, n + k, blocks.q3(k));
  for (int col = 0; col < blocks.v3.outerSize(); ++col) {
    for (SparseMatrix::InnerIterator it(blocks.v3, col); it; ++it) {
      trip.emplace_back(static_cast<int>(it.row()), n + col, -it.value());
      trip.emplace_back(n + col, static_cast<int>(it.row()), -it.value());
    }
  }
  laplacian_.resize(dim, dim);
  laplacian_.setFromTriplets(trip.begin(), trip.end());

  const Vector row_sums = laplacian_ * Vector::Ones(dim);
  const double scale = laplacian_.diagonal().cwiseAbs().maxCoeff();
  if (row_sums.cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, scale) * dim) {
    throw Error("laplacian row sums are not zero");
  }
  if (dim == 1) return;  // single frame, no landmarks: nothing to factorize

  const SparseMatrix reduced = laplacian_.bottomRightCorner(dim - 1, dim - 1);
  reduced_ = std::make_shared<Eigen::SimplicialLDLT<SparseMatrix>>();
  reduced_->compute(reduced);
  if (reduced_->info() != Eigen::Success) throw Error("graph numerically disconnected");
  const double max_diag = reduced.diagonal().cwiseAbs().maxCoeff();
  const Vector pivots = reduced_->vectorD();
  if (pivots.minCoeff() <= 1e-12 * max_diag) throw Error("graph numerically disconnected");
}

Matrix LaplacianSystem::solve_reduced(const Matrix& rhs) const {
  if (!reduced_) return Matrix(0, rhs.cols());
  Matrix x = reduced_->solve(rhs);
  if (reduced_->info() != Eigen::Success) throw Error("reduced laplacian solve failed");
  return x;
}

// ---------------------------------------------------------------------------

DataMatrix build_data_matrix(const ViewGraph& graph, const DataMatrixOptions& options) {
  if (graph.num_frames() > options.max_frames) {
    throw Error("too many frames for a dense data matrix (" +
                std::to_string(graph.num_frames()) + " > " +
                std::to_string(options.max_frames) + ")");
  }
  require_connected(graph);
  const ReductionBlocks blocks = build_blocks(graph);
  const int n = blocks.num_frames;
  const int m = blocks.num_landmarks;

  DataMatrix d;
  d.num_frames_ = n;
  d.num_landmarks_ = m;
  d.laplacian_ = std::make_shared<const LaplacianSystem>(blocks);

  // V_tp = [-V_1, V_2], assembled column-major.
  {
    std::vector<Triplet> trip;
    trip.reserve(static_cast<std::size_t>(blocks.v1.nonZeros() + blocks.v2.nonZeros()));
    for (int col = 0; col < n; ++col) {
      for (SparseMatrix::InnerIterator it(blocks.v1, col); it; ++it) {
        trip.emplace_back(static_cast<int>(it.row()), col, -it.value());
      }
    }
    for (int col = 0; col < m; ++col) {
      for (SparseMatrix::InnerIterator it(blocks.v2, col); it; ++it) {
        trip.emplace_back(static_cast<int>(it.row()), n + col, it.value());
      }
    }
    d.v_tp_.resize(3 * n, n + m);
    d.v_tp_.setFromTriplets(trip.begin(), trip.end());
    d.v_tp_reduced_ = d.v_tp_.rightCols(n + m - 1);
  }

  // Q = Q_1 - Vbar Lbar^{-1} Vbar^T, a block of columns at a time.
  d.q_ = blocks.q1_dense();
  const SparseMatrix vt = d.v_tp_reduced_.transpose();
  const int cols = 3 * n;
  const int step = std::max(1, options.solve_block);
  for (int c0 = 0; c0 < cols; c0 += step) {
    const int w = std::min(step, cols - c0);
    const Matrix rhs = Matrix(vt.middleCols(c0, w));
    const Matrix sol = d.laplacian_->solve_reduced(rhs);
    if (sol.rows() > 0) d.q_.middleCols(c0, w) -= d.v_tp_reduced_ * sol;
  }
  d.q_ = 0.5 * (d.q_ + d.q_.transpose()).eval();
  d.norm_ = d.q_.norm();
  return d;
}

void DataMatrix::recover(const Matrix& u, std::vector<Vector3>& translations,
                         std::vector<Vector3>& points) const {
  if (u.rows() != 3 || u.cols() != 3 * num_frames_) {
    throw Error("recovery needs a 3 x 3N factor");
  }
  // T Q_tp = U V_tp with T = [t_0 .. t_{N-1}, p_0 .. p_{M-1}] and t_0 = 0.
  const Matrix rhs = v_tp_reduced_.transpose() * u.transpose();  // (N+M-1) x 3
  const Matrix sol = laplacian_->solve_reduced(rhs);
  translations.assign(static_cast<std::size_t>(num_frames_), Vector3::Zero());
  points.assign(static_cast<std::size_t>(num_landmarks_), Vector3::Zero());
  for (int j = 1; j < num_frames_ + num_landmarks_; ++j) {
    const Vector3 v = sol.row(j - 1).transpose();
    if (j < num_frames_) {
      translations[j] = v;
    } else {
      points[j - num_frames_] = v;
    }
  }
}

double DataMatrix::normal_equation_residual(const Matrix& u,
                                            const std::vector<Vector3>& translations,
                                            const std::vector<Vector3>& points) const {
  Matrix t(3, num_frames_ + num_landmarks_);
  for (int i = 0; i < num_frames_; ++i) t.col(i) = translations[i];
  for (int k = 0; k < num_landmarks_; ++k) t.col(num_frames_ + k) = points[k];
  const Matrix lhs = t * laplacian_->laplacian();
  const Matrix rhs = u * v_tp_;
  // The t_0 column is pinned by the anchor, not by stationarity.
  return (lhs - rhs).rightCols(num_frames_ + num_landmarks_ - 1).norm();
}

// ---------------------------------------------------------------------------

double marginal_objective_oracle(const ViewGraph& graph, const Matrix& u) {
  const int n = graph.num_frames();
  const int m = graph.num_landmarks();
  if (u.rows() != 3 || u.cols() != 3 * n) throw Error("oracle needs a 3 x 3N factor");
  // Unknowns: t_1..t_{N-1}, p_0..p_{M-1}, three coordinates each.
  const int dim = 3 * (n - 1 + m);
  auto t_index = [](int i) { return 3 * (i - 1); };
  auto p_index = [n](int k) { return 3 * (n - 1 + k); };

  std::vector<Triplet> trip;
  Vector rhs = Vector::Zero(dim);
  std::vector<Vector3> offsets;
  offsets.reserve(graph.num_edges());
  for (const Edge& e : graph.edges()) {
    const Vector3 c = u.middleCols<3>(3 * e.frame) * e.point;
    offsets.push_back(c);
    const double w = e.weight;
    // Residual c + t_i - p_k; the normal equations collect J^T J and -J^T c.
    for (int a = 0; a < 3; ++a) {
      if (e.frame > 0) {
        const int ti = t_index(e.frame) + a;
        trip.emplace_back(ti, ti, w);
        trip.emplace_back(ti, p_index(e.landmark) + a, -w);
        trip.emplace_back(p_index(e.landmark) + a, ti, -w);
        rhs(ti) -= w * c(a);
      }
      const int pk = p_index(e.landmark) + a;
      trip.emplace_back(pk, pk, w);
      rhs(pk) += w * c(a);
    }
  }
  SparseMatrix normal(dim, dim);
  normal.setFromTriplets(trip.begin(), trip.end());
  normal.makeCompressed();
  Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>> lu;
  lu.compute(normal);
  if (lu.info() != Eigen::Success) throw Error("oracle: singular normal equations");
  const Vector x = lu.solve(rhs);

  double total = 0.0;
  for (std::size_t idx = 0; idx < graph.num_edges(); ++idx) {
    const Edge& e = graph.edges()[idx];
    const Vector3 t = e.frame > 0 ? Vector3(x.segment<3>(t_index(e.frame))) : Vector3::Zero();
    const Vector3 p = x.segment<3>(p_index(e.landmark));
    total += e.weight * (offsets[idx] + t - p).squaredNorm();
  }
  return total;
}

void write_matrix_market(std::ostream& out, const SparseMatrix& m) {
  out << "%%MatrixMarket matrix coordinate real general\n";
  out << m.rows() << ' ' << m.cols() << ' ' << m.nonZeros() << '\n';
  out << std::setprecision(17);
  for (int col = 0; col < m.outerSize(); ++col) {
    for (SparseMatrix::InnerIterator it(m, col); it; ++it) {
      out << it.row() + 1 << ' ' << it.col() + 1 << ' ' << it.value() << '\n';
    }
  }
}

void write_matrix_market(std::ostream& out, const Matrix& m) {
  out << "%%MatrixMarket matrix array real general\n";
  out << m.rows() << ' ' << m.cols() << '\n';
  out << std::setprecision(17);
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) out << m(r, c) << '\n';
  }
}

}  // namespace csba
