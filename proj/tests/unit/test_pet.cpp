#include <doctest.h>

#include <cmath>

#include "ppodiff/config.hpp"
#include "ppodiff/envs.hpp"
#include "ppodiff/pet.hpp"
#include "ppodiff/trainer.hpp"

using namespace ppodiff;

namespace {

PriorArchitecture tiny_arch() {
  PriorArchitecture a;
  a.hidden = {16, 16};
  a.embedding_dim = 8;
  a.lora_rank = 2;
  a.proxy_hidden = 8;
  return a;
}

const LoggedDataset& data(const std::string& env) {
  static const LoggedDataset pm = generate_logged_dataset("pointmass", Behavior::mediocre_pd, 1000, 1);
  static const LoggedDataset pd = generate_logged_dataset("pendulum", Behavior::mediocre_pd, 1000, 1);
  return env == "pointmass" ? pm : pd;
}

PriorBatch first_rows(const LoggedDataset& ds, Eigen::Index n) {
  return normalized_batch(ds.stats, ds.states.topRows(n), ds.actions.topRows(n));
}

// Sets the proxy so that every state maps to N(mean, var) in one action dimension.
void constant_proxy(GaussianProxy& p, double mean, double var) {
  for (Tensor& t : p.params.values) t.setZero();
  Tensor& bias = p.params.values.back();
  REQUIRE(bias.size() == 2);
  bias(0) = mean;
  bias(1) = 0.5 * std::log(var);
  p.mark_fitted(true);
}

double adapter_distance(const ParamSet& a, const ParamSet& b) {
  double sq = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sq += (a.values[i] - b.values[i]).squaredNorm();
  return std::sqrt(sq);
}

}  // namespace

TEST_SUITE("pet") {
  TEST_CASE("rate zero never schedules a step") {
    for (std::int64_t i = 1; i <= 1000; ++i) CHECK_FALSE(should_pet_step(i, 0));
  }

  TEST_CASE("schedule counts and spacing") {
    for (int f : {5, 10, 20}) {
      for (std::int64_t block = 0; block < 5; ++block) {
        int count = 0;
        for (std::int64_t i = block * 100 + 1; i <= (block + 1) * 100; ++i) {
          const bool due = should_pet_step(i, f);
          CHECK(due == (i % (100 / f) == 0));
          count += due ? 1 : 0;
        }
        CHECK(count == f);
      }
    }
    CHECK(should_pet_step(10, 10));
    CHECK_FALSE(should_pet_step(11, 10));
    CHECK(should_pet_step(5, 20));
  }

  TEST_CASE("invalid rates and indices are rejected") {
    CHECK_THROWS_AS(should_pet_step(1, 7), ConfigError);
    CHECK_THROWS_AS(should_pet_step(0, 10), ConfigError);
    PetConfig c;
    c.rate = 15;
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }

  TEST_CASE("a step moves adapters only") {
    DiffusionPrior prior = make_prior(data("pointmass"), tiny_arch(), NoiseSchedule{}, 1);
    const ParamSet backbone = prior.backbone, adapters = prior.adapters;
    std::mt19937_64 rng(1);
    AdamState st;
    PetConfig cfg;
    cfg.lr = 1e-3;
    const PetStepResult r = pet_step(prior, first_rows(data("pointmass"), 64), rng, st, cfg);
    CHECK(r.applied);
    CHECK(prior.backbone == backbone);
    CHECK_FALSE(prior.adapters == adapters);
    CHECK(r.delta_norm == doctest::Approx(adapter_distance(prior.adapters, adapters)).epsilon(1e-12));
    CHECK(std::isfinite(r.loss));
  }

  TEST_CASE("an empty batch is a no-op") {
    DiffusionPrior prior = make_prior(data("pointmass"), tiny_arch(), NoiseSchedule{}, 1);
    const ParamSet adapters = prior.adapters;
    std::mt19937_64 rng(1);
    AdamState st;
    const PetStepResult r = pet_step(prior, first_rows(data("pointmass"), 0), rng, st, PetConfig{});
    CHECK_FALSE(r.applied);
    CHECK(r.delta_norm == 0.0);
    CHECK(prior.adapters == adapters);
  }

  TEST_CASE("zero adapter gradient gives a zero delta") {
    // With both factors at zero, the adapter gradient vanishes identically.
    DiffusionPrior prior = make_prior(data("pointmass"), tiny_arch(), NoiseSchedule{}, 1);
    for (Tensor& t : prior.adapters.values) t.setZero();
    const ParamSet adapters = prior.adapters;
    std::mt19937_64 rng(1);
    for (PetOptimizer opt : {PetOptimizer::adam, PetOptimizer::sgd}) {
      AdamState st;
      PetConfig cfg;
      cfg.optimizer = opt;
      cfg.lr = 1e-2;
      const PetStepResult r = pet_step(prior, first_rows(data("pointmass"), 64), rng, st, cfg);
      CHECK(r.delta_norm == 0.0);
      CHECK(prior.adapters == adapters);
    }
  }

  TEST_CASE("clipped SGD steps are bounded by lr times the clip") {
    DiffusionPrior prior = make_prior(data("pointmass"), tiny_arch(), NoiseSchedule{}, 2);
    std::mt19937_64 rng(3);
    PetConfig cfg;
    cfg.optimizer = PetOptimizer::sgd;
    cfg.lr = 1e-3;
    cfg.grad_clip = 1e-4;
    for (int k = 0; k < 5; ++k) {
      AdamState st;
      const PetStepResult r = pet_step(prior, first_rows(data("pointmass"), 128), rng, st, cfg);
      CHECK(r.delta_norm <= cfg.lr * cfg.grad_clip * (1.0 + 1e-12));
      CHECK(r.delta_norm > 0.0);
    }
  }

  TEST_CASE("prior-KL monitor closed forms") {
    DiffusionPrior before = make_prior(data("pendulum"), tiny_arch(), NoiseSchedule{}, 1);
    DiffusionPrior after = before;
    const Tensor states = data("pendulum").states.topRows(10);
    CHECK_THROWS_AS(prior_kl_monitor(before, after, states), MonitorError);

    constant_proxy(before.proxy, 0.0, 1.0);
    constant_proxy(after.proxy, 0.0, 1.0);
    CHECK(prior_kl_monitor(before, after, states) == 0.0);
    constant_proxy(after.proxy, 1.0, 1.0);
    CHECK(prior_kl_monitor(before, after, states) == doctest::Approx(0.5).epsilon(1e-14));
  }

  TEST_CASE("prior-KL monitor matches a direct formula on perturbed heads") {
    DiffusionPrior before = make_prior(data("pointmass"), tiny_arch(), NoiseSchedule{}, 1);
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n(0.0, 0.3);
    for (Tensor& t : before.proxy.params.values) {
      for (Eigen::Index i = 0; i < t.size(); ++i) t(i) = n(rng);
    }
    before.proxy.mark_fitted(true);
    DiffusionPrior after = before;
    for (Tensor& t : after.proxy.params.values) {
      for (Eigen::Index i = 0; i < t.size(); ++i) t(i) += 0.2 * n(rng);
    }
    const Tensor states = data("pointmass").states.topRows(25);
    const Tensor s = before.stats().normalize_states(states);
    const GaussianMoments p = after.proxy.predict(s), q = before.proxy.predict(s);
    double oracle = 0.0;
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      for (Eigen::Index d = 0; d < p.mean.cols(); ++d) {
        const double dm = p.mean(i, d) - q.mean(i, d);
        oracle += 0.5 * (std::log(q.var(i, d) / p.var(i, d)) + (p.var(i, d) + dm * dm) / q.var(i, d) - 1.0);
      }
    }
    oracle /= static_cast<double>(s.rows());
    CHECK(std::abs(prior_kl_monitor(before, after, states) - oracle) < 1e-10);
  }

  TEST_CASE("K_prior shrinks with the adapter learning rate") {
    const LoggedDataset& ds = data("pointmass");
    DiffusionPrior base = make_prior(ds, tiny_arch(), NoiseSchedule{}, 5);
    const Tensor mstates = ds.states.middleRows(100, 6);
    ProxyFitOptions fit;
    fit.samples_per_state = 32;
    fit.steps = 30;
    refit_proxy(base, mstates, fit, 77);

    auto k_prior = [&](double lr) {
      DiffusionPrior prior = base;
      const std::vector<Tensor> init = prior.proxy.params.values;
      DiffusionPrior snapshot = prior;
      refit_proxy(snapshot, mstates, fit, 99);
      std::mt19937_64 rng(6);
      AdamState st;
      PetConfig cfg;
      cfg.optimizer = PetOptimizer::sgd;
      cfg.lr = lr;
      for (int k = 0; k < 3; ++k) pet_step(prior, first_rows(ds, 128), rng, st, cfg);
      prior.proxy.params.values = init;
      refit_proxy(prior, mstates, fit, 99);
      return prior_kl_monitor(snapshot, prior, mstates);
    };
    const double hi = k_prior(1e-2), lo = k_prior(1e-3);
    INFO("K_prior at lr=1e-2: " << hi << ", at lr=1e-3: " << lo);
    CHECK(lo < hi);
    CHECK(lo >= 0.0);
  }

  TEST_CASE("rate zero leaves the whole prior untouched over a run") {
    DiffusionPrior prior = make_prior(data("pointmass"), tiny_arch(), NoiseSchedule{}, 1);
    const ParamSet backbone = prior.backbone, adapters = prior.adapters;
    ExperimentConfig c;
    c.mode = Mode::no_pet;
    c.budget = 256;
    c.ppo.batch_size = 128;
    c.ppo.minibatch = 64;
    c.ppo.epochs = 2;
    c.eval_every = 1.0;
    c.eval_episodes = 1;
    c.nets.hidden = {16, 16};
    c.prior_arch = tiny_arch();
    c.schedule.steps = 5;
    c.proposal_states = 8;
    c.monitor_states = 4;
    c.proxy_fit.steps = 10;
    const RunResult r = run_online(c.resolved(), 1, &prior);
    CHECK(r.pet_steps == 0);
    CHECK(prior.backbone == backbone);
    CHECK(prior.adapters == adapters);

    c.mode = Mode::full;
    c.budget = 384;
    DiffusionPrior moving = make_prior(data("pointmass"), tiny_arch(), NoiseSchedule{}, 1);
    const RunResult f = run_online(c.resolved(), 1, &moving);
    // 3 iterations x 2 epochs x 2 minibatches = 12 actor updates; rate 10 schedules update 10.
    CHECK(f.pet_steps == 1);
    CHECK(f.log[2].pet_events == 1);
    CHECK(f.log[2].k_prior >= 0.0);
    CHECK(moving.backbone == backbone);
    CHECK_FALSE(moving.adapters == adapters);
  }
}
