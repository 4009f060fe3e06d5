#include <cmath>
#include <vector>

#include "doctest.h"

#include "gca/errors.hpp"
#include "gca/optim.hpp"
#include "gca/random.hpp"
#include "gca/tape.hpp"

using namespace gca;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Plain triple-loop reference for W x + b.
std::vector<double> affine_oracle(const Tensor& w, const Tensor& x, const Tensor& b) {
  std::vector<double> out(w.rows());
  for (std::size_t r = 0; r < w.rows(); ++r) {
    out[r] = b[r];
    for (std::size_t c = 0; c < w.cols(); ++c) out[r] += w.values()[r * w.cols() + c] * x[c];
  }
  return out;
}

}  // namespace

TEST_CASE("tensor construction checks length and extents") {
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
  CHECK_THROWS_AS(Tensor(Shape{0}), DimensionError);
  const Tensor m = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  CHECK(m.rows() == 2);
  CHECK(m.cols() == 3);
  CHECK(m.at(1, 2) == 6.0);
  CHECK(m.shape_string() == "[2x3]");
}

TEST_CASE("checksum sees single-bit changes") {
  Tensor a = Tensor::vector({1.0, 2.0});
  Tensor b = a;
  const Tensor* pa[] = {&a};
  const Tensor* pb[] = {&b};
  CHECK(checksum(pa) == checksum(pb));
  b[1] = std::nextafter(2.0, 3.0);
  CHECK(checksum(pa) != checksum(pb));
  CHECK_FALSE(a.bit_equal(b));
}

TEST_CASE("affine") {
  Tape t;
  SUBCASE("identity") {
    auto y = affine(t.constant(Tensor::matrix(2, 2, {1, 0, 0, 1})), t.constant(Tensor::vector({3, 4})),
                    t.constant(Tensor::vector({0, 0})));
    CHECK(y.value().values() == std::vector<double>{3, 4});
  }
  SUBCASE("matches the loop oracle") {
    const Tensor w = Tensor::matrix(2, 2, {1, 2, 3, 4});
    const Tensor x = Tensor::vector({1, 1});
    const Tensor b = Tensor::vector({1, 1});
    auto y = affine(t.constant(w), t.constant(x), t.constant(b));
    CHECK(y.value().values() == affine_oracle(w, x, b));
    CHECK(y.value().values() == std::vector<double>{4, 8});
  }
  SUBCASE("zero weights give the bias") {
    auto y = affine(t.constant(Tensor({1, 4})), t.constant(Tensor::vector({5, -2, 1, 9})),
                    t.constant(Tensor::vector({7})));
    CHECK(y.value()[0] == 7.0);
  }
  SUBCASE("random shapes against the oracle") {
    Rng rng(3);
    for (int k = 0; k < 20; ++k) {
      const std::size_t m = 1 + rng.index(6), n = 1 + rng.index(6);
      const Tensor w = random_tensor(rng, {m, n}), x = random_tensor(rng, {n}), b = random_tensor(rng, {m});
      auto y = affine(t.constant(w), t.constant(x), t.constant(b));
      const auto expect = affine_oracle(w, x, b);
      for (std::size_t i = 0; i < m; ++i) CHECK(y.value()[i] == doctest::Approx(expect[i]).epsilon(1e-14));
    }
  }
  SUBCASE("shape mismatch names both shapes") {
    try {
      affine(t.constant(Tensor({2, 3})), t.constant(Tensor({2})), t.constant(Tensor({2})));
      FAIL("expected a DimensionError");
    } catch (const DimensionError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("[2x3]") != std::string::npos);
      CHECK(msg.find("[2]") != std::string::npos);
    }
  }
}

TEST_CASE("activations") {
  Tape t;
  for (double c : {-50.0, 0.0, 3.5, 700.0}) {
    auto s = activation(Activation::softmax, t.constant(Tensor::vector({c, c, c})));
    for (double v : s.value().values()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  }
  CHECK(activation(Activation::sigmoid, t.constant(Tensor::scalar(0.0))).value()[0] == 0.5);
  CHECK(activation(Activation::relu, t.constant(Tensor::scalar(-3.0))).value()[0] == 0.0);
  CHECK(activation(Activation::tanh, t.constant(Tensor::scalar(0.0))).value()[0] == 0.0);
  CHECK_THROWS_AS(softmax(Tensor()), DomainError);
  // Stable for large magnitudes.
  CHECK(sigmoid(-800.0) >= 0.0);
  CHECK(sigmoid(800.0) == 1.0);
}

TEST_CASE("softmax is a probability vector") {
  Rng rng(11);
  for (int k = 0; k < 200; ++k) {
    const Tensor x = random_tensor(rng, {1 + rng.index(20)}, -30.0, 30.0);
    const Tensor p = softmax(x);
    double total = 0.0;
    for (double v : p.values()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0 + 1e-15);
      total += v;
    }
    CHECK(std::abs(total - 1.0) <= 1e-12);
  }
}

TEST_CASE("concat") {
  Tape t;
  auto a = t.constant(Tensor::vector({1, 2})), b = t.constant(Tensor::vector({3}));
  CHECK(concat({a, b}).value().values() == std::vector<double>{1, 2, 3});
  CHECK(concat({a}).value().values() == std::vector<double>{1, 2});
  // The discriminator input at full scale: [p e_cd e_ad].
  auto e = concat({t.constant(Tensor({7000})), t.constant(Tensor({300})), t.constant(Tensor({300}))});
  CHECK(e.value().size() == 7600);
  CHECK_THROWS_AS(concat(std::span<const Var>{}), DomainError);
  CHECK_THROWS_AS(concat({t.constant(Tensor({2, 2}))}), DimensionError);
}

TEST_CASE("losses") {
  Tape t;
  SUBCASE("categorical cross-entropy of a near-perfect prediction") {
    const double eps = 1e-12;
    auto p = t.constant(Tensor::vector({eps, 1.0 - 2 * eps, eps}));
    const double l = loss_eval(Loss::categorical_ce, p, Tensor::vector({0, 1, 0})).value()[0];
    CHECK(l >= 0.0);
    CHECK(l < 1e-11);
  }
  SUBCASE("binary cross-entropy at one half") {
    for (double label : {0.0, 1.0}) {
      const double l = loss_eval(Loss::binary_ce, t.constant(Tensor::scalar(0.5)), Tensor::scalar(label)).value()[0];
      CHECK(l == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    }
  }
  SUBCASE("binary cross-entropy at saturated predictions stays finite") {
    for (double pred : {0.0, 1.0}) {
      for (double label : {0.0, 1.0}) {
        const double l = loss_eval(Loss::binary_ce, t.constant(Tensor::scalar(pred)), Tensor::scalar(label)).value()[0];
        CHECK(std::isfinite(l));
        CHECK(l >= 0.0);
        CHECK(l <= -std::log(1e-12) + 1e-9);
      }
    }
  }
  SUBCASE("mse of equal vectors") {
    const Tensor v = Tensor::vector({0.3, -2, 9});
    CHECK(loss_eval(Loss::mse, t.constant(v), v).value()[0] == 0.0);
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(loss_eval(Loss::mse, t.constant(Tensor({3})), Tensor({2})), DimensionError);
  }
}

TEST_CASE("backward") {
  SUBCASE("x dot x at 3") {
    Parameter x("x", Tensor::scalar(3.0));
    Tape t;
    auto v = t.parameter(x);
    t.backward(dot(v, v));
    CHECK(x.grad[0] == 6.0);
  }
  SUBCASE("softmax cross-entropy gradient at the logits is p - onehot") {
    Rng rng(5);
    Parameter w("w", random_tensor(rng, {4, 3})), b("b", random_tensor(rng, {4}));
    const Tensor x = random_tensor(rng, {3});
    const Tensor target = Tensor::vector({0, 0, 1, 0});
    Tape t;
    auto z = affine(t.parameter(w), t.constant(x), t.parameter(b));
    auto p = activation(Activation::softmax, z);
    t.backward(loss_eval(Loss::categorical_ce, p, target));
    // db = dL/dz.
    for (std::size_t i = 0; i < 4; ++i) CHECK(b.grad[i] == doctest::Approx(p.value()[i] - target[i]).epsilon(1e-12));
    // And the finite-difference view of the same quantity.
    auto loss_at = [&](const Tensor& bias) {
      Tape u;
      auto zz = affine(u.constant(w.value), u.constant(x), u.constant(bias));
      return loss_eval(Loss::categorical_ce, activation(Activation::softmax, zz), target).value()[0];
    };
    for (std::size_t i = 0; i < 4; ++i) {
      Tensor plus = b.value, minus = b.value;
      plus[i] += 1e-6;
      minus[i] -= 1e-6;
      const double numeric = (loss_at(plus) - loss_at(minus)) / 2e-6;
      CHECK(numeric == doctest::Approx(p.value()[i] - target[i]).epsilon(1e-6));
    }
  }
  SUBCASE("unused parameter gets zero gradient") {
    Parameter used("used", Tensor::scalar(2.0)), unused("unused", Tensor::vector({1, 2}));
    unused.grad = Tensor::vector({5, 5});
    unused.zero_grad();
    Tape t;
    auto u = t.parameter(used);
    t.parameter(unused);
    t.backward(dot(u, u));
    CHECK(unused.grad.values() == std::vector<double>{0, 0});
  }
  SUBCASE("frozen parameter gets zero gradient") {
    Parameter w("w", Tensor::scalar(2.0), false);
    w.grad = Tensor::scalar(9.0);
    Tape t;
    auto v = t.parameter(w);
    t.backward(dot(v, v));
    CHECK(w.grad[0] == 0.0);
  }
  SUBCASE("loss from another tape is rejected") {
    Tape a, b;
    auto v = a.constant(Tensor::scalar(1.0));
    CHECK_THROWS_AS(b.backward(v), UsageError);
    CHECK_THROWS_AS(a.backward(Var()), UsageError);
    CHECK_THROWS_AS(a.backward(a.constant(Tensor::vector({1, 2}))), UsageError);
  }
  SUBCASE("non-finite results are refused") {
    Tape t;
    auto big = t.constant(Tensor::scalar(1e300));
    CHECK_THROWS_AS(mul(big, big), DomainError);
  }
}

namespace {

// A small graph exercising every differentiable op.
struct RandomGraph {
  Parameter w, b, u, v, m;
  Tensor target_class, target_real;

  explicit RandomGraph(Rng& rng)
      : w("w", random_tensor(rng, {3, 4})),
        b("b", random_tensor(rng, {3})),
        u("u", random_tensor(rng, {4})),
        v("v", random_tensor(rng, {2})),
        m("m", random_tensor(rng, {2, 5})),
        target_class(Tensor::vector({0, 0, 0, 1, 0})),
        target_real(random_tensor(rng, {2})) {}

  std::vector<Parameter*> params() { return {&w, &b, &u, &v, &m}; }

  Var loss1(Tape& t) {
    auto h = activation(Activation::tanh, affine(t.parameter(w), t.parameter(u), t.parameter(b)));
    auto g = activation(Activation::sigmoid, concat({h, t.parameter(v)}));
    auto s = slice(g, 1, 3);
    auto col = column(t.parameter(m), 2);
    auto r = activation(Activation::relu, add(col, scale(slice(s, 0, 2), 0.7)));
    auto z = concat({s, sub(r, t.parameter(v))});
    auto p = activation(Activation::softmax, z);
    return loss_eval(Loss::categorical_ce, p, target_class);
  }

  Var loss2(Tape& t) {
    auto y = matvec(t.parameter(m), concat({t.parameter(u), t.constant(Tensor::scalar(0.5))}));
    auto q = activation(Activation::sigmoid, slice(y, 0, 2));
    Var parts[] = {loss_eval(Loss::mse, mul(q, t.parameter(v)), target_real),
                   loss_eval(Loss::binary_ce, q, Tensor::vector({1, 0})), dot(t.parameter(u), t.parameter(u))};
    return add_n(parts);
  }
};

}  // namespace

TEST_CASE("finite differences agree on random graphs of every op") {
  for (std::uint64_t seed = 1; seed <= 25; ++seed) {
    Rng rng(seed);
    RandomGraph g(rng);
    auto ps = g.params();
    const auto r1 = gradient_check([&](Tape& t) { return g.loss1(t); }, ps, 1e-6);
    const auto r2 = gradient_check([&](Tape& t) { return g.loss2(t); }, ps, 1e-6);
    INFO("seed " << seed << " errors " << r1.max_relative_error << " / " << r2.max_relative_error);
    CHECK(r1.passed);
    CHECK(r2.passed);
  }
}

TEST_CASE("backward is linear in the loss") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(100 + seed);
    RandomGraph g(rng);
    auto ps = g.params();
    const double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2);
    auto grads_of = [&](auto build) {
      zero_grads(ps);
      Tape t;
      t.backward(build(t));
      std::vector<Tensor> out;
      for (auto* p : ps) out.push_back(p->grad);
      return out;
    };
    const auto g1 = grads_of([&](Tape& t) { return g.loss1(t); });
    const auto g2 = grads_of([&](Tape& t) { return g.loss2(t); });
    const auto gc = grads_of([&](Tape& t) { return add(scale(g.loss1(t), a), scale(g.loss2(t), b)); });
    for (std::size_t k = 0; k < ps.size(); ++k) {
      for (std::size_t i = 0; i < gc[k].size(); ++i) {
        CHECK(std::abs(gc[k][i] - (a * g1[k][i] + b * g2[k][i])) <= 1e-10);
      }
    }
  }
}

TEST_CASE("gradient check") {
  SUBCASE("affine plus mse passes at 1e-6") {
    Rng rng(9);
    Parameter w("w", random_tensor(rng, {3, 2})), b("b", random_tensor(rng, {3}));
    const Tensor x = random_tensor(rng, {2}), y = random_tensor(rng, {3});
    Parameter* ps[] = {&w, &b};
    const auto r = gradient_check(
        [&](Tape& t) { return loss_eval(Loss::mse, affine(t.parameter(w), t.constant(x), t.parameter(b)), y); }, ps,
        1e-6);
    CHECK(r.passed);
    CHECK(r.entries.size() == 2);
    CHECK(r.max_relative_error < 1e-6);
  }
  SUBCASE("a corrupted backward rule is reported by parameter name") {
    Rng rng(10);
    Parameter good("good", random_tensor(rng, {3})), bad("bad", random_tensor(rng, {3}));
    // Elementwise square whose backward is off by 50%.
    auto broken_square = [](Var x) {
      Tensor out = x.value();
      for (double& v : out.data()) v = v * v;
      Tape& t = *x.tape();
      return t.record(std::move(out), {x}, [](Tape& tp, std::size_t self) {
        const std::size_t in = tp.inputs(self)[0];
        const Tensor& xv = tp.value(in);
        const Tensor& g = tp.grad_view(self);
        Tensor& gi = tp.grad(in);
        for (std::size_t i = 0; i < xv.size(); ++i) gi[i] += 3.0 * xv[i] * g[i];
      });
    };
    Parameter* ps[] = {&good, &bad};
    const auto r = gradient_check(
        [&](Tape& t) {
          auto a = t.parameter(good);
          return add(dot(a, a), dot(broken_square(t.parameter(bad)), t.constant(Tensor::vector({1, 1, 1}))));
        },
        ps, 1e-4);
    CHECK_FALSE(r.passed);
    REQUIRE(r.failures().size() == 1);
    CHECK(r.failures()[0] == "bad");
  }
  SUBCASE("analytic gradients are left in place") {
    Parameter x("x", Tensor::vector({1.0, -2.0}));
    Parameter* ps[] = {&x};
    gradient_check([&](Tape& t) { auto v = t.parameter(x); return dot(v, v); }, ps, 1e-6);
    CHECK(x.grad.values() == std::vector<double>{2.0, -4.0});
  }
}
