#pragma once

#include <Eigen/Dense>

#include "eigfree/errors.hpp"

namespace eigfree::linalg {

/// Dense symmetric matrix. Construction validates symmetry (1e-12 relative to
/// the largest entry) and finiteness, so every SymMatrix in flight is a valid
/// input to sym_eig.
class SymMatrix {
 public:
  explicit SymMatrix(Eigen::MatrixXd m);

  // Averages m with its transpose first; for Gram matrices assembled with
  // round-off.
  static SymMatrix symmetrized(const Eigen::MatrixXd& m);

  Eigen::Index size() const { return m_.rows(); }
  const Eigen::MatrixXd& matrix() const { return m_; }

 private:
  struct Trusted {};
  SymMatrix(Eigen::MatrixXd m, Trusted) : m_(std::move(m)) {}

  Eigen::MatrixXd m_;
};

/// Eigenvalues sorted descending; column i of `vectors` pairs with values(i).
struct EigenSystem {
  Eigen::VectorXd values;
  Eigen::MatrixXd vectors;

  Eigen::Index size() const { return values.size(); }
  // Eigenvector of the smallest eigenvalue.
  Eigen::VectorXd smallest() const { return vectors.col(values.size() - 1); }
};

struct JacobiOptions {
  int max_sweeps = 64;
};

/// Cyclic Jacobi eigendecomposition.
///
/// Each eigenvector is sign-normalized so that its entry of largest magnitude
/// (first such index on ties) is nonnegative. Throws ConvergenceFailure if the
/// off-diagonal mass has not vanished after `max_sweeps`.
EigenSystem sym_eig(const SymMatrix& m, const JacobiOptions& options = {});

/// K_ij = 1 / (sigma_i - sigma_j) off the diagonal, 0 on it.
Eigen::MatrixXd k_matrix(const Eigen::VectorXd& eigenvalues);

/// Smallest |sigma_i - sigma_j| over i != j.
double min_eigen_gap(const Eigen::VectorXd& eigenvalues);

inline constexpr double kDegenerateGap = 1e-12;

/// Pulls a gradient on the eigenvector matrix back to the symmetric input.
///
/// With F = K^T (F_ij = 1/(sigma_j - sigma_i)), the first-order variation is
/// dU = U (F o U^T dM U), whose adjoint restricted to symmetric dM is
///   dL/dM = U sym(F o U^T G_U) U^T.
/// Throws DegenerateSpectrum when any gap is <= kDegenerateGap.
Eigen::MatrixXd eig_backward(const EigenSystem& es, const Eigen::MatrixXd& grad_wrt_vectors);

struct Svd3 {
  Eigen::Matrix3d u;
  Eigen::Vector3d s;  // descending, >= 0
  Eigen::Matrix3d v;
};

Svd3 svd3(const Eigen::Matrix3d& m);

}  // namespace eigfree::linalg
