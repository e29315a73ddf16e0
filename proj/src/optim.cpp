#include "eigfree/optim.hpp"

#include <cmath>
#include <string>

namespace eigfree::optim {

namespace {

void check(const Eigen::VectorXd& params, const Eigen::VectorXd& grad, double lr) {
  if (params.size() != grad.size()) throw ContractViolation("optimizer: parameter/gradient size mismatch");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ContractViolation("optimizer: learning rate must be positive");
  if (!grad.allFinite()) throw ContractViolation("optimizer: non-finite gradient");
}

}  // namespace

void gd_step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, double lr) {
  check(params, grad, lr);
  params -= lr * grad;
}

AdamState::AdamState(Eigen::Index size, double lr_)
    : m(Eigen::VectorXd::Zero(size)), v(Eigen::VectorXd::Zero(size)), lr(lr_) {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ContractViolation("AdamState: learning rate must be positive");
}

void adam_step(AdamState& s, Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
  check(params, grad, s.lr);
  if (s.m.size() != params.size()) throw ContractViolation("adam_step: state size does not match parameters");
  ++s.step_count;
  const double t = static_cast<double>(s.step_count);
  const double c1 = 1.0 - std::pow(s.beta1, t);
  const double c2 = 1.0 - std::pow(s.beta2, t);
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    s.m(i) = s.beta1 * s.m(i) + (1.0 - s.beta1) * grad(i);
    s.v(i) = s.beta2 * s.v(i) + (1.0 - s.beta2) * grad(i) * grad(i);
    const double mhat = s.m(i) / c1;
    const double vhat = s.v(i) / c2;
    params(i) -= s.lr * mhat / (std::sqrt(vhat) + s.epsilon);
  }
}

Optimizer parse_optimizer(std::string_view name) {
  if (name == "gd") return Optimizer::gd;
  if (name == "adam") return Optimizer::adam;
  throw ContractViolation("unknown optimizer '" + std::string(name) + "' (expected gd|adam)");
}

std::string_view to_string(Optimizer o) { return o == Optimizer::gd ? "gd" : "adam"; }

Stepper::Stepper(Optimizer kind, Eigen::Index size, double lr) : kind_(kind), lr_(lr), adam_(size, lr) {}

void Stepper::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
  if (kind_ == Optimizer::gd)
    gd_step(params, grad, lr_);
  else
    adam_step(adam_, params, grad);
}

}  // namespace eigfree::optim
