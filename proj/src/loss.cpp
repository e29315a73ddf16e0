#include "eigfree/loss.hpp"

#include <cmath>
#include <string>

#include "eigfree/linalg.hpp"

namespace eigfree::loss {

using geometry::DataMatrix;

void LossConfig::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ContractViolation("LossConfig: alpha must be >= 0");
  if (!(beta > 0.0) || !std::isfinite(beta)) throw ContractViolation("LossConfig: beta must be > 0");
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double z = std::exp(x);
  return z / (1.0 + z);
}

WeightState::WeightState(Eigen::VectorXd logits, int rows_per_weight) : rows_per_weight_(rows_per_weight) {
  if (rows_per_weight != 1 && rows_per_weight != 2)
    throw ContractViolation("WeightState: rows_per_weight must be 1 or 2");
  set_logits(std::move(logits));
}

WeightState WeightState::constant(Eigen::Index count, double logit, int rows_per_weight) {
  return WeightState(Eigen::VectorXd::Constant(count, logit), rows_per_weight);
}

void WeightState::set_logits(Eigen::VectorXd logits) {
  if (!logits.allFinite()) throw ContractViolation("WeightState: non-finite logit");
  logits_ = std::move(logits);
  weights_ = logits_.unaryExpr([](double x) { return sigmoid(x); });
}

Eigen::VectorXd WeightState::sigmoid_derivative() const {
  return weights_.cwiseProduct((1.0 - weights_.array()).matrix());
}

TargetVector::TargetVector(Eigen::VectorXd e) : e_(std::move(e)) {
  if (!e_.allFinite()) throw ContractViolation("TargetVector: non-finite entry");
  if (std::abs(e_.norm() - 1.0) > 1e-10) throw ContractViolation("TargetVector: vector is not unit norm");
}

TargetVector TargetVector::normalized(const Eigen::VectorXd& e) {
  const double n = e.norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw ContractViolation("TargetVector: zero or non-finite vector");
  return TargetVector(e / n);
}

namespace {

void check_inputs(const DataMatrix& x, const Eigen::VectorXd& weights, const TargetVector& e) {
  x.validate();
  if (x.dim() != e.dim())
    throw ContractViolation("loss: data matrix has " + std::to_string(x.dim()) + " columns, target has " +
                            std::to_string(e.dim()));
  if (weights.size() != x.correspondences())
    throw ContractViolation("loss: " + std::to_string(weights.size()) + " weights for " +
                            std::to_string(x.correspondences()) + " correspondences");
  if (!weights.allFinite()) throw ContractViolation("loss: non-finite weight");
}

void check_state(const DataMatrix& x, const WeightState& w) {
  if (w.rows_per_weight() != x.rows_per_correspondence)
    throw ContractViolation("loss: WeightState rows_per_weight does not match the data matrix");
}

// Per-correspondence sums of (X_r e)^2 and |Xbar_r|^2 = |X_r|^2 - (X_r e)^2.
struct RowTerms {
  Eigen::VectorXd residual;
  Eigen::VectorXd off_target;
};

RowTerms row_terms(const DataMatrix& x, const TargetVector& e) {
  const Eigen::VectorXd proj = x.rows * e.vector();
  const Eigen::VectorXd sq = proj.cwiseAbs2();
  const Eigen::VectorXd norms = x.rows.rowwise().squaredNorm();
  const int k = x.rows_per_correspondence;
  RowTerms t{Eigen::VectorXd::Zero(x.correspondences()), Eigen::VectorXd::Zero(x.correspondences())};
  for (Eigen::Index r = 0; r < x.rows.rows(); ++r) {
    t.residual(r / k) += sq(r);
    t.off_target(r / k) += std::max(norms(r) - sq(r), 0.0);
  }
  return t;
}

LossBreakdown combine(const RowTerms& t, const Eigen::VectorXd& weights, const LossConfig& cfg) {
  LossBreakdown b;
  b.first_term = weights.dot(t.residual);
  b.trace = weights.dot(t.off_target);
  b.second_term = cfg.alpha * std::exp(-cfg.beta * b.trace);
  b.total = b.first_term + b.second_term;
  return b;
}

Eigen::VectorXd grad_from_terms(const RowTerms& t, const Eigen::VectorXd& weights, const LossConfig& cfg) {
  const double trace = weights.dot(t.off_target);
  const double c = cfg.alpha * cfg.beta * std::exp(-cfg.beta * trace);
  return t.residual - c * t.off_target;
}

}  // namespace

LossBreakdown eigfree_loss(const DataMatrix& x, const Eigen::VectorXd& weights, const TargetVector& e,
                           const LossConfig& cfg) {
  cfg.validate();
  check_inputs(x, weights, e);
  return combine(row_terms(x, e), weights, cfg);
}

LossBreakdown eigfree_loss(const DataMatrix& x, const WeightState& w, const TargetVector& e,
                           const LossConfig& cfg) {
  check_state(x, w);
  return eigfree_loss(x, w.weights(), e, cfg);
}

Eigen::VectorXd eigfree_grad_weights(const DataMatrix& x, const Eigen::VectorXd& weights,
                                     const TargetVector& e, const LossConfig& cfg) {
  cfg.validate();
  check_inputs(x, weights, e);
  return grad_from_terms(row_terms(x, e), weights, cfg);
}

Eigen::VectorXd eigfree_grad_logits(const DataMatrix& x, const WeightState& w, const TargetVector& e,
                                    const LossConfig& cfg) {
  check_state(x, w);
  return eigfree_grad_weights(x, w.weights(), e, cfg).cwiseProduct(w.sigmoid_derivative());
}

namespace {

struct Centering {
  Eigen::Vector3d mean;
  double total_weight;
};

Centering weighted_mean(std::span<const Eigen::Vector3d> points, const Eigen::VectorXd& weights) {
  if (points.size() < 3) throw ContractViolation("plane: need at least 3 points");
  if (weights.size() != static_cast<Eigen::Index>(points.size()))
    throw ContractViolation("plane: one weight per point required");
  const double s = weights.sum();
  if (!(s > 1e-9)) throw DegenerateConfiguration("plane: degenerate weighted mean (sum of weights <= 1e-9)");
  Eigen::Vector3d mu = Eigen::Vector3d::Zero();
  for (std::size_t i = 0; i < points.size(); ++i) mu += weights(static_cast<Eigen::Index>(i)) * points[i];
  return {mu / s, s};
}

}  // namespace

DataMatrix plane_data_matrix(std::span<const Eigen::Vector3d> points, const Eigen::VectorXd& weights) {
  const auto c = weighted_mean(points, weights);
  DataMatrix x{Eigen::MatrixXd(static_cast<Eigen::Index>(points.size()), 3), 1};
  for (std::size_t i = 0; i < points.size(); ++i)
    x.rows.row(static_cast<Eigen::Index>(i)) = (points[i] - c.mean).transpose();
  return x;
}

LossBreakdown plane_loss(std::span<const Eigen::Vector3d> points, const WeightState& w, const TargetVector& e,
                         const LossConfig& cfg) {
  if (e.dim() != 3) throw ContractViolation("plane_loss: target must be a 3-vector");
  return eigfree_loss(plane_data_matrix(points, w.weights()), w, e, cfg);
}

Eigen::VectorXd plane_grad_logits(std::span<const Eigen::Vector3d> points, const WeightState& w,
                                  const TargetVector& e, const LossConfig& cfg) {
  if (e.dim() != 3) throw ContractViolation("plane_grad_logits: target must be a 3-vector");
  cfg.validate();
  const Eigen::VectorXd& weights = w.weights();
  const auto c = weighted_mean(points, weights);
  const DataMatrix x = plane_data_matrix(points, weights);
  const RowTerms t = row_terms(x, e);
  Eigen::VectorXd grad = grad_from_terms(t, weights, cfg);

  // Chain through mu(w): d mu / d w_j = (x_j - mu) / sum(w). The centered
  // weighted sum s = sum w_i (x_i - mu) is zero analytically, so this term
  // only removes round-off, but it is the exact derivative.
  const Eigen::Vector3d& ev = e.vector();
  const Eigen::Matrix3d proj = Eigen::Matrix3d::Identity() - ev * ev.transpose();
  const Eigen::Vector3d s = x.rows.transpose() * weights;
  const double trace = weights.dot(t.off_target);
  const Eigen::Vector3d dl_dmu =
      -2.0 * ev * ev.dot(s) + 2.0 * cfg.alpha * cfg.beta * std::exp(-cfg.beta * trace) * (proj * s);
  grad += x.rows * dl_dmu / c.total_weight;
  return grad.cwiseProduct(w.sigmoid_derivative());
}

SpectrumProbe probe_spectrum(const Eigen::MatrixXd& gram, const TargetVector& e) {
  if (gram.rows() != e.dim()) throw ContractViolation("probe_spectrum: dimension mismatch");
  const auto es = linalg::sym_eig(linalg::SymMatrix::symmetrized(gram));
  const Eigen::Index n = es.size();
  SpectrumProbe p;
  Eigen::Index best = 0;
  (es.vectors.transpose() * e.vector()).cwiseAbs().maxCoeff(&best);
  p.smallest_index_of_gt = static_cast<int>(best);
  p.eigen_gap = n >= 2 ? es.values(n - 2) - es.values(n - 1) : 0.0;
  p.smallest = es.smallest();
  return p;
}

namespace {

BaselineResult baseline_from_gram(const Eigen::MatrixXd& gram, const TargetVector& e, Eigen::MatrixXd* grad_gram) {
  const auto es = linalg::sym_eig(linalg::SymMatrix::symmetrized(gram));
  const Eigen::Index n = es.size();
  const Eigen::VectorXd emin = es.smallest();
  const Eigen::VectorXd& gt = e.vector();

  const double minus = (emin - gt).norm();
  const double plus = (emin + gt).norm();
  const double sign = minus <= plus ? 1.0 : -1.0;
  const Eigen::VectorXd diff = emin - sign * gt;

  BaselineResult r;
  r.loss = std::min(minus, plus);
  Eigen::Index best = 0;
  (es.vectors.transpose() * gt).cwiseAbs().maxCoeff(&best);
  r.smallest_index_of_gt = static_cast<int>(best);
  r.eigen_gap = n >= 2 ? es.values(n - 2) - es.values(n - 1) : 0.0;

  Eigen::MatrixXd gu = Eigen::MatrixXd::Zero(n, n);
  if (r.loss > 0.0) gu.col(n - 1) = diff / r.loss;
  *grad_gram = linalg::eig_backward(es, gu);
  return r;
}

}  // namespace

BaselineResult eig_baseline_loss_grad(const DataMatrix& x, const Eigen::VectorXd& weights, const TargetVector& e) {
  check_inputs(x, weights, e);
  Eigen::MatrixXd g;
  BaselineResult r = baseline_from_gram(geometry::weighted_gram(x, weights), e, &g);
  const int k = x.rows_per_correspondence;
  const Eigen::VectorXd per_row = (x.rows * g).cwiseProduct(x.rows).rowwise().sum();
  r.grad_weights = Eigen::VectorXd::Zero(x.correspondences());
  for (Eigen::Index row = 0; row < x.rows.rows(); ++row) r.grad_weights(row / k) += per_row(row);
  return r;
}

BaselineResult eig_baseline_loss_grad(const DataMatrix& x, const WeightState& w, const TargetVector& e) {
  check_state(x, w);
  BaselineResult r = eig_baseline_loss_grad(x, w.weights(), e);
  r.grad_logits = r.grad_weights.cwiseProduct(w.sigmoid_derivative());
  return r;
}

BaselineResult plane_baseline_loss_grad(std::span<const Eigen::Vector3d> points, const WeightState& w,
                                        const TargetVector& e) {
  if (e.dim() != 3) throw ContractViolation("plane_baseline_loss_grad: target must be a 3-vector");
  const Eigen::VectorXd& weights = w.weights();
  const auto c = weighted_mean(points, weights);
  const DataMatrix x = plane_data_matrix(points, weights);
  Eigen::MatrixXd g;
  BaselineResult r = baseline_from_gram(geometry::weighted_gram(x, weights), e, &g);
  r.grad_weights = (x.rows * g).cwiseProduct(x.rows).rowwise().sum();
  // d M / d mu contracted with G: -2 G s, s = sum w_i (x_i - mu).
  const Eigen::Vector3d s = x.rows.transpose() * weights;
  const Eigen::Vector3d dl_dmu = -2.0 * g * s;
  r.grad_weights += x.rows * dl_dmu / c.total_weight;
  r.grad_logits = r.grad_weights.cwiseProduct(w.sigmoid_derivative());
  return r;
}

}  // namespace eigfree::loss
