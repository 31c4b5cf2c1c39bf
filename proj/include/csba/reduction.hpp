#pragma once

#include <csba/types.hpp>
#include <csba/viewgraph.hpp>

#include <Eigen/SparseCholesky>

#include <memory>
#include <ostream>

namespace csba {

/// Sparse pieces of the scaled bundle-adjustment quadratic form.
///
/// With a_e = e_i (x) u_ik the residual of edge (i,k) is
///   U a_e + t_i - p_k,
/// and summing w_ik times its squared norm over all edges produces the
/// blocks below (N frames, M landmarks).
struct ReductionBlocks {
  int num_frames = 0;
  int num_landmarks = 0;
  std::vector<Matrix3> q1_blocks;  // diagonal 3x3 blocks of Q_1 (3N x 3N)
  Vector q2;                       // diagonal of Q_2 (weighted frame degrees)
  Vector q3;                       // diagonal of Q_3 (weighted landmark degrees)
  SparseMatrix v1;                 // 3N x N
  SparseMatrix v2;                 // 3N x M
  SparseMatrix v3;                 // N x M

  Matrix q1_dense() const;
};

ReductionBlocks build_blocks(const ViewGraph& graph);

/// Graph Laplacian over frames and landmarks plus a factorization of the
/// principal submatrix with the anchored first frame removed.
class LaplacianSystem {
 public:
  /// Assembles Q_tp = [[Q_2, -V_3], [-V_3^T, Q_3]] and factorizes it.
  /// Throws "graph numerically disconnected" when a pivot of the reduced
  /// factorization falls below 1e-12 times the largest diagonal entry.
  explicit LaplacianSystem(const ReductionBlocks& blocks);

  const SparseMatrix& laplacian() const { return laplacian_; }
  int dimension() const { return static_cast<int>(laplacian_.rows()); }

  /// Solves the reduced (N+M-1) system for each column of `rhs`.
  Matrix solve_reduced(const Matrix& rhs) const;

 private:
  SparseMatrix laplacian_;
  std::shared_ptr<Eigen::SimplicialLDLT<SparseMatrix>> reduced_;
};

struct DataMatrixOptions {
  /// Refuse to densify Q above this many frames.
  int max_frames = 5000;
  /// Right-hand sides per block solve while forming Q.
  int solve_block = 64;
};

/// Marginalized data matrix: trace(Q U^T U) equals the minimum of the
/// bundle-adjustment objective over translations and landmarks for the
/// scaled rotations U.
class DataMatrix {
 public:
  DataMatrix() = default;

  const Matrix& q() const { return q_; }
  int num_frames() const { return num_frames_; }
  int num_landmarks() const { return num_landmarks_; }
  /// Frobenius norm of Q, the scale used by all relative thresholds.
  double norm() const { return norm_; }
  const LaplacianSystem& laplacian() const { return *laplacian_; }

  /// Translations and landmark positions minimizing the objective for the
  /// 3 x 3N factor `u` (t_0 = 0).
  void recover(const Matrix& u, std::vector<Vector3>& translations,
               std::vector<Vector3>& points) const;

  /// Residual of the full normal equations T Q_tp = U V_tp at (u, T).
  double normal_equation_residual(const Matrix& u, const std::vector<Vector3>& translations,
                                  const std::vector<Vector3>& points) const;

 private:
  friend DataMatrix build_data_matrix(const ViewGraph&, const DataMatrixOptions&);

  int num_frames_ = 0;
  int num_landmarks_ = 0;
  Matrix q_;
  double norm_ = 0.0;
  SparseMatrix v_tp_;          // 3N x (N+M), equals [-V_1, V_2]
  SparseMatrix v_tp_reduced_;  // first column removed
  std::shared_ptr<const LaplacianSystem> laplacian_;
};

/// Requires a connected graph.
DataMatrix build_data_matrix(const ViewGraph& graph, const DataMatrixOptions& options = {});

/// Minimum of the objective over translations (t_0 = 0) and landmarks for
/// a fixed 3 x 3N factor, computed from the edges through the
/// Kronecker-expanded normal equations. Independent of build_data_matrix;
/// used as a cross-check.
double marginal_objective_oracle(const ViewGraph& graph, const Matrix& u);

/// Matrix Market exchange-format dumps (debugging aid).
void write_matrix_market(std::ostream& out, const SparseMatrix& m);
void write_matrix_market(std::ostream& out, const Matrix& m);

}  // namespace csba
