#pragma once

#include <string_view>

#include <Eigen/Dense>

#include "eigfree/errors.hpp"

namespace eigfree::optim {

/// params <- params - lr * grad.
void gd_step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, double lr);

struct AdamState {
  AdamState(Eigen::Index size, double lr);

  long step_count = 0;
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  double lr;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Bias-corrected Adam update, in place.
void adam_step(AdamState& state, Eigen::VectorXd& params, const Eigen::VectorXd& grad);

enum class Optimizer { gd, adam };
Optimizer parse_optimizer(std::string_view name);
std::string_view to_string(Optimizer o);

/// Either optimizer behind one call, so experiment loops need not branch.
class Stepper {
 public:
  Stepper(Optimizer kind, Eigen::Index size, double lr);
  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad);

 private:
  Optimizer kind_;
  double lr_;
  AdamState adam_;
};

}  // namespace eigfree::optim
