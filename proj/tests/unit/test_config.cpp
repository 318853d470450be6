#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "ppodiff/config.hpp"

using namespace ppodiff;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> diff_without_mode(Mode a, Mode b) {
  ExperimentConfig x, y;
  x.mode = a;
  y.mode = b;
  auto d = config_diff(x.resolved(), y.resolved());
  d.erase(std::remove(d.begin(), d.end(), "mode"), d.end());
  std::sort(d.begin(), d.end());
  return d;
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("defaults validate and use the documented values") {
    const ExperimentConfig c;
    CHECK_NOTHROW(c.validate());
    CHECK(c.ppo.clip == 0.2);
    CHECK(c.ppo.gae_lambda == 0.95);
    CHECK(c.ppo.batch_size == 256);
    CHECK(c.ppo.kl_target == 0.02);
    CHECK(c.proposals_k == 10);
    CHECK(c.alpha_max == 0.3);
    CHECK(c.grad_cap == 0.1);
    CHECK(c.lambda_kl == 5e-3);
    CHECK(c.lambda_aux == 1e-2);
    CHECK(c.pet.rate == 10);
    CHECK(c.pet.lr == 1e-5);
    CHECK(c.filter.share_cap == 0.2);
  }

  TEST_CASE("ablation toggles change only their designated keys") {
    using V = std::vector<std::string>;
    CHECK(diff_without_mode(Mode::full, Mode::no_vg) == V{"guidance.alpha_max", "guidance.beta_final"});
    CHECK(diff_without_mode(Mode::full, Mode::no_pet) == V{"pet.rate"});
    CHECK(diff_without_mode(Mode::full, Mode::prior_kl_only) == V{"actor.lambda_aux"});
    CHECK(diff_without_mode(Mode::full, Mode::aux_bc_only) == V{"actor.lambda_kl"});
    CHECK(diff_without_mode(Mode::full, Mode::diffusion_no_vg) ==
          V{"guidance.alpha_max", "guidance.beta_final", "pet.rate"});
  }

  TEST_CASE("baseline modes switch every prior path off") {
    for (Mode m : {Mode::vanilla_ppo, Mode::bc_warmstart}) {
      ExperimentConfig c;
      c.mode = m;
      const ExperimentConfig r = c.resolved();
      CHECK_FALSE(r.uses_prior());
      CHECK(r.pet.rate == 0);
    }
    ExperimentConfig bc;
    bc.mode = Mode::bc_warmstart;
    CHECK(bc.resolved().warmstart_epochs > 0);
    CHECK(ExperimentConfig{}.resolved().uses_prior());
  }

  TEST_CASE("text form round-trips through a file") {
    ExperimentConfig c;
    c.env = "pendulum";
    c.mode = Mode::no_vg;
    c.seeds = {3, 5, 8};
    c.set("ppo.actor_lr", "0.000123");
    c.set("prior.hidden", "32,48");
    c.set("guidance.filter", "topk");
    const fs::path p = fs::temp_directory_path() / "ppodiff_unit_config.txt";
    {
      std::ofstream out(p);
      out << "# comment line\n" << c.to_text();
    }
    const ExperimentConfig back = ExperimentConfig::from_file(p);
    CHECK(back.to_text() == c.to_text());
    CHECK(back.hash() == c.hash());
    CHECK(back.ppo.actor_lr == 0.000123);
    CHECK(back.prior_arch.hidden == std::vector<Eigen::Index>{32, 48});
    CHECK(back.seeds == std::vector<std::uint64_t>{3, 5, 8});
  }

  TEST_CASE("bad keys and values are configuration errors") {
    ExperimentConfig c;
    CHECK_THROWS_AS(c.set("no.such.key", "1"), ConfigError);
    CHECK_THROWS_AS(c.set("ppo.clip", "abc"), ConfigError);
    CHECK_THROWS_AS(c.set("mode", "turbo"), ConfigError);
    c.set("pet.rate", "7");
    CHECK_THROWS_AS(c.validate(), ConfigError);
    ExperimentConfig d;
    d.set("guidance.share_cap", "0.5");
    CHECK_THROWS_AS(d.validate(), ConfigError);
    ExperimentConfig e;
    e.env = "cartpole";
    CHECK_THROWS_AS(e.validate(), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_file("/nonexistent/ppodiff.cfg"), IOError);
  }

  TEST_CASE("mode names round-trip") {
    CHECK(mode_names().size() == 8);
    for (const std::string& n : mode_names()) CHECK(mode_name(parse_mode(n)) == n);
  }
}
