#pragma once

#include <span>

#include <Eigen/Dense>

#include "eigfree/errors.hpp"
#include "eigfree/geometry.hpp"

namespace eigfree::loss {

struct LossConfig {
  double alpha = 1.0;
  double beta = 0.01;

  void validate() const;
};

/// Per-correspondence weights held as unconstrained logits; weights are
/// sigmoid(logits) and are recomputed whenever the logits change.
class WeightState {
 public:
  explicit WeightState(Eigen::VectorXd logits, int rows_per_weight = 1);
  static WeightState constant(Eigen::Index count, double logit, int rows_per_weight = 1);

  const Eigen::VectorXd& logits() const { return logits_; }
  const Eigen::VectorXd& weights() const { return weights_; }
  int rows_per_weight() const { return rows_per_weight_; }
  Eigen::Index size() const { return logits_.size(); }

  void set_logits(Eigen::VectorXd logits);
  // dw/dlogit = w (1 - w), elementwise.
  Eigen::VectorXd sigmoid_derivative() const;

 private:
  Eigen::VectorXd logits_;
  Eigen::VectorXd weights_;
  int rows_per_weight_;
};

double sigmoid(double x);

/// Unit-norm ground-truth eigenvector.
class TargetVector {
 public:
  explicit TargetVector(Eigen::VectorXd e);
  // Normalizes first; for targets assembled from a model matrix.
  static TargetVector normalized(const Eigen::VectorXd& e);

  const Eigen::VectorXd& vector() const { return e_; }
  Eigen::Index dim() const { return e_.size(); }

 private:
  Eigen::VectorXd e_;
};

struct LossBreakdown {
  double first_term = 0;   // e^T X^T W X e
  double trace = 0;        // tr(Xbar^T W Xbar), Xbar = X (I - e e^T)
  double second_term = 0;  // alpha exp(-beta trace)
  double total = 0;
};

LossBreakdown eigfree_loss(const geometry::DataMatrix& x, const Eigen::VectorXd& weights,
                           const TargetVector& e, const LossConfig& cfg);
LossBreakdown eigfree_loss(const geometry::DataMatrix& x, const WeightState& w, const TargetVector& e,
                           const LossConfig& cfg);

/// d total / d w_i = sum over the rows r of i of
///   (X_r e)^2 - alpha beta exp(-beta T) |Xbar_r|^2.
Eigen::VectorXd eigfree_grad_weights(const geometry::DataMatrix& x, const Eigen::VectorXd& weights,
                                     const TargetVector& e, const LossConfig& cfg);
Eigen::VectorXd eigfree_grad_logits(const geometry::DataMatrix& x, const WeightState& w,
                                    const TargetVector& e, const LossConfig& cfg);

/// Rows x_i - mu(w) with the weighted mean mu = sum w_i x_i / sum w_i.
/// Throws DegenerateConfiguration when sum w <= 1e-9.
geometry::DataMatrix plane_data_matrix(std::span<const Eigen::Vector3d> points,
                                       const Eigen::VectorXd& weights);

/// Plane fitting: the loss above on the mean-centered points, with the
/// centering recomputed from the current weights.
LossBreakdown plane_loss(std::span<const Eigen::Vector3d> points, const WeightState& w,
                         const TargetVector& e, const LossConfig& cfg);

/// Gradient of plane_loss including the dependence of mu on w.
Eigen::VectorXd plane_grad_logits(std::span<const Eigen::Vector3d> points, const WeightState& w,
                                  const TargetVector& e, const LossConfig& cfg);

struct BaselineResult {
  double loss = 0;                // min over sign of |e_min -+ e_gt|
  Eigen::VectorXd grad_weights;
  Eigen::VectorXd grad_logits;
  int smallest_index_of_gt = 0;   // rank (0 = largest eigenvalue) of the eigenvector closest to e_gt
  double eigen_gap = 0;           // sigma_{n-1} - sigma_n
};

/// Loss on the smallest eigenvector of X^T W X, differentiated through the
/// eigendecomposition. Throws DegenerateSpectrum on repeated eigenvalues.
BaselineResult eig_baseline_loss_grad(const geometry::DataMatrix& x, const WeightState& w,
                                      const TargetVector& e);
// Raw-weight form (network outputs); grad_logits is left empty.
BaselineResult eig_baseline_loss_grad(const geometry::DataMatrix& x, const Eigen::VectorXd& weights,
                                      const TargetVector& e);

/// Same, on the weighted covariance of a point cloud (mean from current weights).
BaselineResult plane_baseline_loss_grad(std::span<const Eigen::Vector3d> points, const WeightState& w,
                                        const TargetVector& e);

/// Diagnostics of X^T W X that every run records, whatever its loss.
struct SpectrumProbe {
  int smallest_index_of_gt = 0;
  double eigen_gap = 0;
  Eigen::VectorXd smallest;  // eigenvector of the smallest eigenvalue
};
SpectrumProbe probe_spectrum(const Eigen::MatrixXd& gram, const TargetVector& e);

}  // namespace eigfree::loss
