#include <doctest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "ppodiff/envs.hpp"
#include "ppodiff/io.hpp"
#include "ppodiff/prior.hpp"

using namespace ppodiff;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "ppodiff_unit_envs";
  fs::create_directories(dir);
  return dir / name;
}

double mean_return(const LoggedDataset& ds) {
  const auto r = ds.episode_returns();
  return std::accumulate(r.begin(), r.end(), 0.0) / static_cast<double>(r.size());
}

}  // namespace

TEST_SUITE("envs") {
  TEST_CASE("pointmass at the goal with zero action earns zero") {
    const auto [next, r] = PointMass::dynamics(RowVector::Zero(4), RowVector::Zero(2));
    CHECK(r == 0.0);
    CHECK(next.isZero());
  }

  TEST_CASE("pendulum upright at rest earns zero") {
    RowVector s(3);
    s << 1.0, 0.0, 0.0;
    const auto [next, r] = Pendulum::dynamics(s, RowVector::Zero(1));
    CHECK(r == 0.0);
    CHECK(Pendulum::angle(next) == 0.0);
  }

  TEST_CASE("pointmass follows the double-integrator closed form") {
    RowVector s = RowVector::Zero(4);
    RowVector a(2);
    a << 1.0, 0.0;
    const double dt = PointMass::kDt;
    for (int k = 1; k <= 15; ++k) {
      s = PointMass::dynamics(s, a).first;
      // v_k = k a dt, p_k = sum_{j<=k} v_j dt.
      CHECK(s(2) == doctest::Approx(k * dt).epsilon(1e-12));
      CHECK(s(0) == doctest::Approx(dt * dt * k * (k + 1) / 2.0).epsilon(1e-12));
      CHECK(s(1) == 0.0);
      CHECK(s(3) == 0.0);
    }
  }

  TEST_CASE("reward formulas") {
    RowVector s(4);
    s << 0.3, -0.4, 0.0, 0.0;
    RowVector a(2);
    a << 0.5, 0.5;
    const auto [next, r] = PointMass::dynamics(s, a);
    CHECK(r == doctest::Approx(-next.head(2).norm() - 0.01 * 0.5).epsilon(1e-14));

    RowVector p(3);
    p << std::cos(0.5), std::sin(0.5), 1.5;
    RowVector t(1);
    t << -0.4;
    CHECK(Pendulum::dynamics(p, t).second ==
          doctest::Approx(-(0.25 + 0.1 * 2.25 + 0.001 * 0.16)).epsilon(1e-12));
  }

  TEST_CASE("actions are clipped before the dynamics") {
    auto env = make_env("pointmass", 3);
    auto twin = make_env("pointmass", 3);
    env->reset();
    twin->reset();
    RowVector big(2), unit(2);
    big << 5.0, -7.0;
    unit << 1.0, -1.0;
    const StepResult a = env->step(big), b = twin->step(unit);
    CHECK(a.next_state == b.next_state);
    CHECK(a.reward == b.reward);
  }

  TEST_CASE("resets and rollouts are deterministic under a seed") {
    for (const std::string& name : env_names()) {
      auto a = make_env(name, 42), b = make_env(name, 42), c = make_env(name, 43);
      const RowVector sa = a->reset(), sb = b->reset(), sc = c->reset();
      CHECK(sa == sb);
      CHECK(sa != sc);
      const RowVector act = RowVector::Constant(a->spec().action_dim, 0.3);
      for (int i = 0; i < 20; ++i) CHECK(a->step(act).next_state == b->step(act).next_state);
    }
  }

  TEST_CASE("episode returns stay within horizon times the reward bound") {
    for (const std::string& name : env_names()) {
      const LoggedDataset ds = generate_logged_dataset(name, Behavior::random_uniform, 4000, 5);
      const EnvSpec spec = make_env(name, 0)->spec();
      for (double r : ds.episode_returns()) CHECK(std::abs(r) <= spec.horizon * spec.reward_bound);
      CHECK(ds.rewards.cwiseAbs().maxCoeff() <= spec.reward_bound);
    }
  }

  TEST_CASE("episodes end exactly at the horizon") {
    const LoggedDataset ds = generate_logged_dataset("pointmass", Behavior::mediocre_pd, 1000, 1);
    for (std::size_t i = 0; i < ds.size(); ++i) CHECK(static_cast<bool>(ds.dones[i]) == ((i + 1) % 100 == 0));
  }

  TEST_CASE("dataset has exactly n transitions and in-bound actions") {
    const LoggedDataset ds = generate_logged_dataset("pendulum", Behavior::noisy_expert, 777, 2);
    CHECK(ds.size() == 777);
    CHECK(ds.states.rows() == 777);
    CHECK(ds.actions.cwiseAbs().maxCoeff() <= 1.0);
  }

  TEST_CASE("random behavior has a uniform action marginal") {
    const LoggedDataset ds = generate_logged_dataset("pointmass", Behavior::random_uniform, 20000, 9);
    const int bins = 10;
    for (Eigen::Index d = 0; d < 2; ++d) {
      std::vector<double> counts(bins, 0.0);
      for (Eigen::Index i = 0; i < ds.actions.rows(); ++i) {
        const int b = std::min(bins - 1, static_cast<int>((ds.actions(i, d) + 1.0) / 2.0 * bins));
        counts[b] += 1.0;
      }
      const double expected = static_cast<double>(ds.size()) / bins;
      double chi2 = 0.0;
      for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
      const double p = boost::math::cdf(boost::math::complement(boost::math::chi_squared(bins - 1), chi2));
      CHECK(p > 0.01);
    }
  }

  TEST_CASE("normalized logged states have zero mean and unit std") {
    const LoggedDataset ds = generate_logged_dataset("pointmass", Behavior::mediocre_pd, 5000, 4);
    const Tensor z = ds.stats.normalize_states(ds.states);
    const RowVector mean = z.colwise().mean();
    const RowVector sd = ((z.rowwise() - mean).array().square().colwise().mean()).sqrt();
    CHECK(mean.cwiseAbs().maxCoeff() < 1e-6);
    CHECK((sd.array() - 1.0).abs().maxCoeff() < 1e-6);
  }

  TEST_CASE("same seed gives a byte-identical dataset file") {
    const fs::path a = scratch("a.bin"), b = scratch("b.bin");
    generate_logged_dataset("pointmass", Behavior::mediocre_pd, 2000, 1).save(a);
    generate_logged_dataset("pointmass", Behavior::mediocre_pd, 2000, 1).save(b);
    CHECK(io::sha256_file(a) == io::sha256_file(b));
    generate_logged_dataset("pointmass", Behavior::mediocre_pd, 2000, 2).save(b);
    CHECK(io::sha256_file(a) != io::sha256_file(b));
  }

  TEST_CASE("dataset file round-trips exactly") {
    const LoggedDataset ds = generate_logged_dataset("pendulum", Behavior::mediocre_pd, 600, 3);
    const fs::path p = scratch("rt.bin");
    ds.save(p);
    const LoggedDataset back = LoggedDataset::load(p);
    CHECK(back.env_name == "pendulum");
    CHECK(back.behavior == "mediocre-pd");
    CHECK(back.states == ds.states);
    CHECK(back.actions == ds.actions);
    CHECK(back.rewards == ds.rewards);
    CHECK(back.next_states == ds.next_states);
    CHECK(back.dones == ds.dones);
    CHECK(back.log_probs == ds.log_probs);
    CHECK(back.stats.fingerprint() == ds.stats.fingerprint());
  }

  TEST_CASE("corrupt dataset files are rejected") {
    const fs::path p = scratch("bad.bin");
    io::BinaryWriter w;
    w.string("not a dataset");
    w.save(p);
    CHECK_THROWS_AS(LoggedDataset::load(p), IOError);
  }

  TEST_CASE("random behavior scores below the PD controller") {
    for (const std::string& name : env_names()) {
      const double random = mean_return(generate_logged_dataset(name, Behavior::random_uniform, 4000, 1));
      const double pd = mean_return(generate_logged_dataset(name, Behavior::mediocre_pd, 4000, 1));
      INFO(name);
      CHECK(random < pd);
    }
  }

  TEST_CASE("logged data mixes good and poor episodes") {
    const auto r = generate_logged_dataset("pointmass", Behavior::mediocre_pd, 5000, 1).episode_returns();
    const auto [lo, hi] = std::minmax_element(r.begin(), r.end());
    CHECK(*hi - *lo > 5.0);
  }

  TEST_CASE("empty dataset cannot train a prior") {
    const LoggedDataset ds = generate_logged_dataset("pointmass", Behavior::mediocre_pd, 0, 1);
    CHECK(ds.size() == 0);
    CHECK_THROWS_AS(make_prior(ds, PriorArchitecture{}, NoiseSchedule{}, 1), InsufficientData);
  }

  TEST_CASE("unknown names are configuration errors") {
    CHECK_THROWS_AS(make_env("cartpole", 1), ConfigError);
    CHECK_THROWS_AS(parse_behavior("oracle"), ConfigError);
  }
}
