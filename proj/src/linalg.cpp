#include "eigfree/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

namespace eigfree::linalg {

namespace {

void require_finite(const Eigen::MatrixXd& m, const char* what) {
  if (!m.allFinite()) throw ContractViolation(std::string(what) + ": non-finite entry");
}

}  // namespace

SymMatrix::SymMatrix(Eigen::MatrixXd m) : m_(std::move(m)) {
  if (m_.rows() != m_.cols() || m_.rows() == 0)
    throw ContractViolation("SymMatrix: matrix must be square and non-empty");
  require_finite(m_, "SymMatrix");
  const double scale = std::max(m_.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
  const double asym = (m_ - m_.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-12 * scale)
    throw ContractViolation("SymMatrix: asymmetry " + std::to_string(asym) + " exceeds tolerance");
}

SymMatrix SymMatrix::symmetrized(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols() || m.rows() == 0)
    throw ContractViolation("SymMatrix: matrix must be square and non-empty");
  require_finite(m, "SymMatrix");
  return SymMatrix(0.5 * (m + m.transpose()), Trusted{});
}

EigenSystem sym_eig(const SymMatrix& sym, const JacobiOptions& options) {
  const Eigen::Index n = sym.size();
  Eigen::MatrixXd a = sym.matrix();
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);
  const double eps = std::numeric_limits<double>::epsilon();
  const double floor = std::numeric_limits<double>::min() / eps;

  bool converged = n == 1;
  for (int sweep = 0; sweep < options.max_sweeps && !converged; ++sweep) {
    bool rotated = false;
    for (Eigen::Index p = 0; p < n - 1; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        const double app = a(p, p);
        const double aqq = a(q, q);
        // Demmel-Veselic stopping rule: relative to the diagonal, which keeps
        // small eigenvalues of PSD Gram matrices accurate.
        if (std::abs(apq) <= eps * std::sqrt(std::abs(app * aqq)) || std::abs(apq) <= floor) {
          a(p, q) = a(q, p) = 0.0;
          continue;
        }
        rotated = true;
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = std::copysign(1.0, theta) / (std::abs(theta) + std::hypot(theta, 1.0));
        const double c = 1.0 / std::hypot(t, 1.0);
        const double s = t * c;

        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = a(q, p) = 0.0;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
    converged = !rotated;
  }
  if (!converged)
    throw ConvergenceFailure("sym_eig: no convergence after " + std::to_string(options.max_sweeps) +
                             " Jacobi sweeps");

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index i, Eigen::Index j) { return a(i, i) > a(j, j); });

  EigenSystem es;
  es.values.resize(n);
  es.vectors.resize(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const Eigen::Index src = order[static_cast<std::size_t>(k)];
    es.values(k) = a(src, src);
    Eigen::VectorXd col = v.col(src);
    col.normalize();
    Eigen::Index imax = 0;
    for (Eigen::Index i = 1; i < n; ++i)
      if (std::abs(col(i)) > std::abs(col(imax))) imax = i;
    if (col(imax) < 0.0) col = -col;
    es.vectors.col(k) = col;
  }
  return es;
}

Eigen::MatrixXd k_matrix(const Eigen::VectorXd& eigenvalues) {
  const Eigen::Index n = eigenvalues.size();
  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double kij = 1.0 / (eigenvalues(i) - eigenvalues(j));
      k(i, j) = kij;
      k(j, i) = -kij;
    }
  return k;
}

double min_eigen_gap(const Eigen::VectorXd& eigenvalues) {
  double gap = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < eigenvalues.size(); ++i)
    for (Eigen::Index j = i + 1; j < eigenvalues.size(); ++j)
      gap = std::min(gap, std::abs(eigenvalues(i) - eigenvalues(j)));
  return gap;
}

Eigen::MatrixXd eig_backward(const EigenSystem& es, const Eigen::MatrixXd& grad_wrt_vectors) {
  const Eigen::Index n = es.size();
  if (grad_wrt_vectors.rows() != n || grad_wrt_vectors.cols() != n)
    throw ContractViolation("eig_backward: gradient shape does not match the eigensystem");
  require_finite(grad_wrt_vectors, "eig_backward");
  const double gap = min_eigen_gap(es.values);
  if (!(gap > kDegenerateGap))
    throw DegenerateSpectrum("eig_backward: degenerate spectrum (min gap " + std::to_string(gap) + ")");

  const Eigen::MatrixXd& u = es.vectors;
  const Eigen::MatrixXd f = k_matrix(es.values).transpose();
  const Eigen::MatrixXd inner = f.cwiseProduct(u.transpose() * grad_wrt_vectors);
  const Eigen::MatrixXd sym = 0.5 * (inner + inner.transpose());
  return u * sym * u.transpose();
}

Svd3 svd3(const Eigen::Matrix3d& m) {
  if (!m.allFinite()) throw ContractViolation("svd3: non-finite entry");
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return {svd.matrixU(), svd.singularValues(), svd.matrixV()};
}

}  // namespace eigfree::linalg
