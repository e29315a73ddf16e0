#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "eigfree/optim.hpp"
#include "eigfree/rng.hpp"
#include "test_util.hpp"

using namespace eigfree;
using namespace eigfree::optim;

namespace {

Eigen::VectorXd scalar(double x) { return Eigen::VectorXd::Constant(1, x); }

// Independent scalar Adam used as the reference trajectory.
struct RefAdam {
  double m = 0, v = 0, lr;
  int t = 0;
  double step(double x, double g) {
    ++t;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t));
    const double vh = v / (1 - std::pow(0.999, t));
    return x - lr * mh / (std::sqrt(vh) + 1e-8);
  }
};

}  // namespace

TEST_CASE("gradient descent steps") {
  Eigen::VectorXd p = scalar(1.0);
  gd_step(p, scalar(0.0), 0.1);
  CHECK(p(0) == 1.0);
  gd_step(p, scalar(2.0), 0.1);
  CHECK(p(0) == doctest::Approx(0.8));

  Eigen::VectorXd x = scalar(1.0);
  for (int k = 0; k < 100; ++k) gd_step(x, 2.0 * x, 0.4);
  CHECK(std::abs(x(0)) < 1e-9);
}

TEST_CASE("non-finite or mismatched gradients are rejected") {
  Eigen::VectorXd p = scalar(1.0);
  CHECK_THROWS_AS(gd_step(p, scalar(NAN), 0.1), ContractViolation);
  CHECK_THROWS_AS(gd_step(p, Eigen::VectorXd::Zero(2), 0.1), ContractViolation);
  AdamState s(1, 0.1);
  CHECK_THROWS_AS(adam_step(s, p, scalar(INFINITY)), ContractViolation);
}

TEST_CASE("adam: zero gradient on a fresh state leaves params unchanged") {
  AdamState s(3, 0.1);
  Eigen::VectorXd p = Eigen::Vector3d(1, 2, 3);
  adam_step(s, p, Eigen::Vector3d::Zero());
  CHECK(p == Eigen::Vector3d(1, 2, 3));
}

TEST_CASE("adam: the first step moves each coordinate by lr g / (|g| + eps)") {
  AdamState s(2, 0.1);
  Eigen::VectorXd p = Eigen::Vector2d(1.0, 1.0);
  adam_step(s, p, Eigen::Vector2d(2.0, -0.5));
  CHECK(p(0) == doctest::Approx(1.0 - 0.1 * 2.0 / (2.0 + 1e-8)).epsilon(1e-15));
  CHECK(p(1) == doctest::Approx(1.0 + 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-15));
}

TEST_CASE("adam matches a scalar reference and solves the quadratic bowl") {
  AdamState s(1, 1e-2);
  RefAdam ref{.lr = 1e-2};
  Eigen::VectorXd x = scalar(1.0);
  double xr = 1.0;
  for (int k = 0; k < 5000; ++k) {
    const double g = 2.0 * x(0);
    adam_step(s, x, scalar(g));
    xr = ref.step(xr, 2.0 * xr);
    REQUIRE(x(0) == doctest::Approx(xr).epsilon(1e-12));
  }
  CHECK(std::abs(x(0)) < 1e-4);
}

TEST_CASE("adam step sizes") {
  // A steady gradient moves each coordinate by at most lr.
  AdamState steady(3, 0.05);
  Eigen::VectorXd p = Eigen::Vector3d::Zero();
  for (int k = 0; k < 300; ++k) {
    const Eigen::VectorXd before = p;
    adam_step(steady, p, Eigen::Vector3d(4.0, -1e-3, 250.0));
    CHECK((p - before).cwiseAbs().maxCoeff() <= 0.05 * (1 + 1e-12));
  }

  // Any stream: by Cauchy-Schwarz over the moment weights,
  // |m_hat| / sqrt(v_hat) <= sqrt((1-b1)^2 / (1-b2) / (1 - b1^2 / b2)) ~ 7.27.
  // A lone spike after tiny gradients reaches (1-b1) / sqrt(1-b2) ~ 3.16; a
  // stream growing by b2 / b1 per step approaches the full bound.
  const double worst = 0.05 * std::sqrt(0.01 / 0.001 / (1.0 - 0.81 / 0.999));
  Rng rng(3);
  AdamState s(10, 0.05);
  p = testutil::gaussian(rng, 10, 1);
  for (int k = 0; k < 500; ++k) {
    const double scale = k == 400 ? 1e6 : std::exp(rng.normal(0, 3));
    const Eigen::VectorXd g = testutil::gaussian(rng, 10, 1, scale);
    const Eigen::VectorXd before = p;
    adam_step(s, p, g);
    CHECK((p - before).cwiseAbs().maxCoeff() <= worst * (1 + 1e-9));
  }
  AdamState grow(1, 0.05);
  Eigen::VectorXd x = scalar(0.0);
  double g = 1.0, last = 0.0;
  for (int k = 0; k < 3000; ++k, g *= 0.999 / 0.9) {
    if (g > 1e250) break;
    const double before = x(0);
    adam_step(grow, x, scalar(g));
    last = before - x(0);
  }
  CHECK(last > 0.05 * 7.0);
  CHECK(last <= worst * (1 + 1e-9));
}

TEST_CASE("identical gradient streams give bit-identical trajectories") {
  for (auto kind : {Optimizer::gd, Optimizer::adam}) {
    Stepper a(kind, 4, 0.01), b(kind, 4, 0.01);
    Rng ra(9), rb(9);
    Eigen::VectorXd pa = Eigen::VectorXd::Ones(4), pb = pa;
    for (int k = 0; k < 200; ++k) {
      a.step(pa, testutil::gaussian(ra, 4, 1));
      b.step(pb, testutil::gaussian(rb, 4, 1));
    }
    CHECK(pa == pb);
  }
}

TEST_CASE("optimizer names") {
  CHECK(parse_optimizer("adam") == Optimizer::adam);
  CHECK(parse_optimizer("gd") == Optimizer::gd);
  CHECK(to_string(Optimizer::gd) == "gd");
  CHECK_THROWS_AS(parse_optimizer("sgd-momentum"), ContractViolation);
}
