#include <cmath>

#include "doctest.h"

#include "gca/errors.hpp"
#include "gca/optim.hpp"
#include "gca/random.hpp"

using namespace gca;

TEST_CASE("zero gradients leave values unchanged") {
  Parameter p("p", Tensor::vector({0.25, -1.5, 3.0}));
  Parameter* ps[] = {&p};
  const Tensor before = p.value;
  AdamState adam;
  for (int i = 0; i < 5; ++i) adam.step(ps, 0.1);
  CHECK(p.value.bit_equal(before));
  CHECK(adam.step_count() == 5);
}

TEST_CASE("first step moves by lr * |g| / (|g| + eps)") {
  for (double g : {1e-3, 0.5, -2.0, 40.0}) {
    Parameter p("p", Tensor::scalar(1.0));
    p.grad = Tensor::scalar(g);
    Parameter* ps[] = {&p};
    AdamState adam;
    const double lr = 0.01;
    adam.step(ps, lr);
    // m_hat = g, v_hat = g^2 after bias correction.
    const double expected = lr * std::abs(g) / (std::abs(g) + 1e-8);
    CHECK(std::abs(1.0 - p.value[0]) == doctest::Approx(expected).epsilon(1e-9));
    CHECK((p.value[0] < 1.0) == (g > 0));
  }
}

TEST_CASE("closed-form second step") {
  Parameter p("p", Tensor::scalar(0.0));
  Parameter* ps[] = {&p};
  AdamState adam;
  const double g1 = 0.3, g2 = -0.7, lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  p.grad = Tensor::scalar(g1);
  adam.step(ps, lr);
  p.grad = Tensor::scalar(g2);
  adam.step(ps, lr);
  double m = (1 - b1) * g1, v = (1 - b2) * g1 * g1;
  double x = -lr * (m / (1 - b1)) / (std::sqrt(v / (1 - b2)) + eps);
  m = b1 * m + (1 - b1) * g2;
  v = b2 * v + (1 - b2) * g2 * g2;
  x -= lr * (m / (1 - b1 * b1)) / (std::sqrt(v / (1 - b2 * b2)) + eps);
  CHECK(p.value[0] == doctest::Approx(x).epsilon(1e-12));
  CHECK(adam.first_moments()[0][0] == doctest::Approx(m).epsilon(1e-14));
  CHECK(adam.second_moments()[0][0] == doctest::Approx(v).epsilon(1e-14));
}

TEST_CASE("frozen parameter stays bit-identical") {
  Parameter frozen("frozen", Tensor::vector({0.1, 0.2}), false), live("live", Tensor::vector({0.1, 0.2}));
  frozen.grad = Tensor::vector({5, -5});
  live.grad = Tensor::vector({5, -5});
  Parameter* ps[] = {&frozen, &live};
  const Tensor before = frozen.value;
  AdamState adam;
  adam.step(ps, 0.1);
  CHECK(frozen.value.bit_equal(before));
  CHECK_FALSE(live.value.bit_equal(before));
}

TEST_CASE("identical inputs give bit-identical updates") {
  auto run = [] {
    Rng rng(21);
    Parameter a("a", Tensor({3, 2})), b("b", Tensor({4}));
    Parameter* ps[] = {&a, &b};
    AdamState adam;
    for (int s = 0; s < 10; ++s) {
      for (auto* p : ps) {
        for (double& g : p->grad.data()) g = rng.uniform(-1, 1);
      }
      adam.step(ps, 0.01);
    }
    return std::make_pair(a.value, b.value);
  };
  const auto r1 = run(), r2 = run();
  CHECK(r1.first.bit_equal(r2.first));
  CHECK(r1.second.bit_equal(r2.second));
}

TEST_CASE("configuration and binding errors") {
  Parameter p("p", Tensor::scalar(1.0)), q("q", Tensor::scalar(1.0)), r("r", Tensor::vector({1, 2}));
  AdamState adam;
  Parameter* one[] = {&p};
  CHECK_THROWS_AS(adam.step(one, 0.0), ConfigError);
  CHECK_THROWS_AS(adam.step(one, -1e-3), ConfigError);
  CHECK(adam.step_count() == 0);
  adam.step(one, 1e-3);
  Parameter* two[] = {&p, &q};
  CHECK_THROWS_AS(adam.step(two, 1e-3), UsageError);
  Parameter* renamed[] = {&q};
  CHECK_THROWS_AS(adam.step(renamed, 1e-3), UsageError);
  r.name = "p";
  Parameter* reshaped[] = {&r};
  CHECK_THROWS_AS(adam.step(reshaped, 1e-3), UsageError);
  CHECK(adam.step_count() == 1);
}
