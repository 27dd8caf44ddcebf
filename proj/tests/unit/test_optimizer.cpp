#include "certmark/optimizer.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace certmark;

TEST_CASE("plain sgd is theta - lr * g") {
  OptimizerState opt(OptimizerConfig::sgd(0.5), 3);
  ParamVector p(3), g(3);
  p << 1, -2, 0.25f;
  g << 0.5f, 1, -4;
  opt.step(p, g);
  CHECK(p[0] == doctest::Approx(0.75));
  CHECK(p[1] == doctest::Approx(-2.5));
  CHECK(p[2] == doctest::Approx(2.25));
  CHECK(opt.step_count() == 1);
}

TEST_CASE("momentum buffer follows mu*buf + g") {
  OptimizerState opt(OptimizerConfig::sgd(0.1, 0.9), 1);
  ParamVector p = ParamVector::Constant(1, 0.0f);
  ParamVector g = ParamVector::Constant(1, 1.0f);
  double theta = 0.0, buf = 0.0;
  for (int i = 0; i < 5; ++i) {
    opt.step(p, g);
    buf = 0.9 * buf + 1.0;
    theta -= 0.1 * buf;
    CHECK(p[0] == doctest::Approx(theta).epsilon(1e-6));
  }
}

TEST_CASE("weight decay adds wd * theta to the gradient") {
  OptimizerState opt(OptimizerConfig::sgd(1.0, 0.0, 0.1), 1);
  ParamVector p = ParamVector::Constant(1, 2.0f);
  opt.step(p, ParamVector::Zero(1));
  CHECK(p[0] == doctest::Approx(1.8));
}

TEST_CASE("adam first step moves each coordinate by about lr against the gradient sign") {
  OptimizerState opt(OptimizerConfig::adam(0.01), 3);
  ParamVector p = ParamVector::Zero(3);
  ParamVector g(3);
  g << 3.0f, -0.002f, 50.0f;
  opt.step(p, g);
  CHECK(p[0] == doctest::Approx(-0.01).epsilon(1e-5));
  CHECK(p[1] == doctest::Approx(0.01).epsilon(1e-4));
  CHECK(p[2] == doctest::Approx(-0.01).epsilon(1e-5));
}

TEST_CASE("adam matches a hand-rolled recurrence") {
  OptimizerConfig cfg = OptimizerConfig::adam(0.05);
  OptimizerState opt(cfg, 1);
  ParamVector p = ParamVector::Constant(1, 1.0f);
  double theta = 1.0, m = 0, v = 0;
  for (int t = 1; t <= 6; ++t) {
    const double g = 2 * theta;  // d/dtheta theta^2
    opt.step(p, ParamVector::Constant(1, static_cast<float>(2 * p[0])));
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    theta -= 0.05 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    CHECK(p[0] == doctest::Approx(theta).epsilon(1e-5));
  }
}

TEST_CASE("optimizer rejects bad input") {
  OptimizerState opt(OptimizerConfig::sgd(0.1), 2);
  ParamVector p = ParamVector::Zero(2);
  CHECK_THROWS_AS(opt.step(p, ParamVector::Zero(3)), ShapeError);
  ParamVector g = ParamVector::Zero(2);
  g[1] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(opt.step(p, g), DivergenceError);
  CHECK(optimizer_kind_from_string("adam") == OptimizerKind::Adam);
  CHECK(optimizer_kind_from_string(to_string(OptimizerKind::SgdMomentum)) == OptimizerKind::SgdMomentum);
  CHECK_THROWS_AS(optimizer_kind_from_string("rmsprop"), std::invalid_argument);
}
