#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "gradcheck.hpp"
#include "ppodiff/optim.hpp"

using namespace ppodiff;

TEST_SUITE("optim") {
  TEST_CASE("zero gradient leaves parameters unchanged") {
    std::vector<Tensor> p = {Tensor::Constant(2, 3, 0.7)};
    const auto before = p;
    AdamState s;
    CHECK(adam_step(p, {Tensor::Zero(2, 3)}, s, 1e-2) == StepStatus::applied);
    CHECK(p == before);
  }

  TEST_CASE("first Adam step from zeroed state matches the closed form") {
    std::vector<Tensor> p = {Tensor::Zero(1, 3)};
    Tensor g(1, 3);
    g << 0.5, -2.0, 1e-3;
    AdamState s;
    const double lr = 1e-3;
    adam_step(p, {g}, s, lr);
    for (int j = 0; j < 3; ++j) {
      // m_hat = g and v_hat = g^2 after one step, so the update is lr g / (|g| + eps).
      const double expected = -lr * g(0, j) / (std::abs(g(0, j)) + 1e-8);
      CHECK(p[0](0, j) == doctest::Approx(expected).epsilon(1e-12));
      CHECK(std::signbit(p[0](0, j)) != std::signbit(g(0, j)));
    }
    CHECK(s.step == 1);
  }

  TEST_CASE("two Adam steps match a scalar re-derivation") {
    const double g1 = 0.3, g2 = -0.1, lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    std::vector<Tensor> p = {Tensor::Constant(1, 1, 1.0)};
    AdamState s;
    adam_step(p, {Tensor::Constant(1, 1, g1)}, s, lr);
    adam_step(p, {Tensor::Constant(1, 1, g2)}, s, lr);
    double x = 1.0, m = 0.0, v = 0.0;
    const double gs[2] = {g1, g2};
    for (int t = 1; t <= 2; ++t) {
      m = b1 * m + (1 - b1) * gs[t - 1];
      v = b2 * v + (1 - b2) * gs[t - 1] * gs[t - 1];
      x -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
    }
    CHECK(p[0](0, 0) == doctest::Approx(x).epsilon(1e-14));
  }

  TEST_CASE("Adam is deterministic") {
    std::mt19937_64 rng(1);
    const Tensor g = testutil::uniform(4, 4, rng);
    std::vector<Tensor> a = {Tensor::Ones(4, 4)}, b = a;
    AdamState sa, sb;
    for (int i = 0; i < 5; ++i) {
      adam_step(a, {g}, sa, 1e-3);
      adam_step(b, {g}, sb, 1e-3);
    }
    CHECK(a == b);
  }

  TEST_CASE("non-finite gradients skip the step") {
    std::vector<Tensor> p = {Tensor::Ones(1, 2)};
    Tensor g = Tensor::Ones(1, 2);
    g(0, 1) = std::numeric_limits<double>::quiet_NaN();
    AdamState s;
    CHECK(adam_step(p, {g}, s, 0.1) == StepStatus::skipped_non_finite);
    CHECK(p[0] == Tensor::Ones(1, 2));
    CHECK(s.step == 0);
    CHECK(sgd_step(p, {g}, 0.1) == StepStatus::skipped_non_finite);
  }

  TEST_CASE("global-norm clipping") {
    std::vector<Tensor> g = {Tensor::Constant(1, 1, 3.0), Tensor::Constant(1, 1, 4.0)};
    CHECK(clip_grad_norm(g, 1.0) == doctest::Approx(5.0));
    CHECK(global_norm(g) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(g[0](0, 0) == doctest::Approx(0.6));
    std::vector<Tensor> small = {Tensor::Constant(1, 1, 0.1)};
    clip_grad_norm(small, 1.0);
    CHECK(small[0](0, 0) == 0.1);
  }

  TEST_CASE("param sets bind as variables or constants") {
    ParamSet ps;
    ps.add("w", Tensor::Ones(2, 2));
    ps.add("b", Tensor::Zero(1, 2));
    CHECK(ps.index("b") == 1);
    CHECK(ps.scalar_count() == 6);
    ad::Graph g;
    auto vars = bind(g, ps, true);
    g.backward(ad::sum(ad::square(vars[0])));
    const auto grads = gradients(vars);
    CHECK(grads[0] == Tensor::Constant(2, 2, 2.0));
    CHECK(grads[1].isZero());
    ad::Graph h;
    auto consts = bind(h, ps, false);
    CHECK_FALSE(consts[0].requires_grad());
  }

  TEST_CASE("mismatched shapes are rejected") {
    std::vector<Tensor> p = {Tensor::Ones(2, 2)};
    AdamState s;
    CHECK_THROWS_AS(adam_step(p, {Tensor::Ones(2, 3)}, s, 0.1), ShapeError);
  }
}
