// Command-line driver: make-dataset, train-prior, train-online, report.
// Exit codes: 0 success, 1 configuration or I/O error, 2 runtime divergence.

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <iostream>
#include <json.hpp>
#include <numeric>
#include <optional>

#include "ppodiff/config.hpp"
#include "ppodiff/envs.hpp"
#include "ppodiff/io.hpp"
#include "ppodiff/prior.hpp"
#include "ppodiff/report.hpp"
#include "ppodiff/runtime.hpp"
#include "ppodiff/trainer.hpp"

namespace fs = std::filesystem;
using namespace ppodiff;

namespace {

struct Common {
  std::string config_file;
  std::vector<std::string> overrides;
  std::string env, mode, seeds;
  std::int64_t budget = 0;

  void attach(CLI::App* cmd) {
    cmd->add_option("-c,--config", config_file, "key = value configuration file")->check(CLI::ExistingFile);
    cmd->add_option("--set", overrides, "override one key, as key=value (repeatable)");
    cmd->add_option("--env", env, "environment (pointmass, pendulum)");
    cmd->add_option("--mode", mode, "training mode");
    cmd->add_option("--seeds", seeds, "comma-separated seed list");
    cmd->add_option("--budget", budget, "online environment steps");
  }

  ExperimentConfig build() const {
    ExperimentConfig c = config_file.empty() ? ExperimentConfig{} : ExperimentConfig::from_file(config_file);
    for (const std::string& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      c.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!env.empty()) c.set("env", env);
    if (!mode.empty()) c.set("mode", mode);
    if (!seeds.empty()) c.set("seeds", seeds);
    if (budget != 0) c.set("budget", std::to_string(budget));
    return c.resolved();
  }
};

fs::path run_root(const std::string& flag) {
  if (const char* env = std::getenv("PPODIFF_RUN_ROOT"); env != nullptr && *env != '\0') return env;
  return flag;
}

int cmd_make_dataset(const Common& common, const std::string& out, const std::string& csv) {
  const ExperimentConfig cfg = common.build();
  if (cfg.dataset_size <= 0) throw ConfigError("refusing to write an empty dataset (dataset_size must be > 0)");
  const LoggedDataset ds = generate_logged_dataset(cfg.env, parse_behavior(cfg.behavior),
                                                   static_cast<std::size_t>(cfg.dataset_size), cfg.dataset_seed);
  const fs::path path(out);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  ds.save(path);
  if (!csv.empty()) ds.export_csv(csv);

  const std::vector<double> returns = ds.episode_returns();
  nlohmann::json side;
  side["env"] = ds.env_name;
  side["behavior"] = ds.behavior;
  side["seed"] = ds.seed;
  side["transitions"] = ds.size();
  side["episodes"] = returns.size();
  auto row = [](const RowVector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  side["state_mean"] = row(ds.stats.state_mean);
  side["state_std"] = row(ds.stats.state_std);
  side["action_mean"] = row(ds.stats.action_mean);
  side["action_std"] = row(ds.stats.action_std);
  side["sha256"] = io::sha256_file(path);
  std::cout << "wrote " << ds.size() << " transitions (" << returns.size() << " episodes) to " << path << '\n';
  if (!returns.empty()) {
    const BoxSummary b = box_summary(returns);
    const double mean = std::accumulate(returns.begin(), returns.end(), 0.0) / static_cast<double>(returns.size());
    side["return_mean"] = mean;
    side["return_quartiles"] = {b.min, b.q1, b.median, b.q3, b.max};
    std::cout << std::setprecision(4) << "episode return: mean " << mean << ", min " << b.min << ", median "
              << b.median << ", max " << b.max << '\n';
  }
  std::ofstream(path.string() + ".stats.json") << side.dump(2) << '\n';
  return 0;
}

int cmd_train_prior(const Common& common, const std::string& dataset, const std::string& out) {
  const ExperimentConfig cfg = common.build();
  const LoggedDataset ds = LoggedDataset::load(dataset);
  const auto probe = make_env(cfg.env, 0);
  if (ds.env_name != cfg.env || ds.states.cols() != probe->spec().state_dim ||
      ds.actions.cols() != probe->spec().action_dim) {
    throw ConfigError("dataset '" + dataset + "' (" + ds.env_name + ") does not match environment '" + cfg.env + "'");
  }
  DiffusionPrior prior = make_prior(ds, cfg.prior_arch, cfg.schedule, cfg.prior_seed);
  const PriorTrainingReport rep = train_prior(prior, ds, cfg.prior_train, cfg.prior_seed);
  const fs::path path(out);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  save_prior(prior, path, cfg.hash());
  {
    std::ofstream loss(path.string() + ".loss.csv");
    loss << "step,train_loss\n" << std::setprecision(17);
    for (std::size_t i = 0; i < rep.train_loss.size(); ++i) loss << i << ',' << rep.train_loss[i] << '\n';
    std::ofstream hold(path.string() + ".holdout.csv");
    hold << "step,holdout_loss\n" << std::setprecision(17);
    for (std::size_t i = 0; i < rep.holdout_loss.size(); ++i) {
      hold << rep.holdout_steps[i] << ',' << rep.holdout_loss[i] << '\n';
    }
  }
  std::cout << std::setprecision(5) << "held-out denoising loss " << rep.holdout_loss.front() << " -> "
            << rep.holdout_loss.back() << "\ncheckpoint " << path << " sha256 " << io::sha256_file(path) << '\n';
  return 0;
}

int cmd_train_online(const Common& common, const std::string& prior_path, const std::string& dataset,
                     const std::string& name, const std::string& root_flag) {
  const ExperimentConfig cfg = common.build();
  std::optional<LoggedDataset> ds;
  if (!dataset.empty()) ds = LoggedDataset::load(dataset);
  if (cfg.uses_prior() && prior_path.empty()) {
    throw ConfigError("mode '" + mode_name(cfg.mode) + "' needs --prior");
  }
  const fs::path arm = run_root(root_flag) / (name.empty() ? cfg.env + "_" + mode_name(cfg.mode) : name);
  for (std::uint64_t seed : cfg.seeds) {
    std::optional<DiffusionPrior> prior;
    if (!prior_path.empty()) prior = load_prior(prior_path);
    const fs::path dir = arm / ("seed_" + std::to_string(seed));
    RunOptions opts;
    opts.run_dir = dir;
    opts.dataset = ds ? &*ds : nullptr;
    const std::string digest_before = prior ? parameter_digest(*prior) : "";
    const std::string backbone_before = prior ? backbone_digest(*prior) : "";
    const RunResult res = run_online(cfg, seed, prior ? &*prior : nullptr, opts);
    if (prior) {
      save_prior(*prior, dir / "prior_final.ckpt", cfg.hash());
      std::ofstream d(dir / "digests.txt");
      d << "prior_initial " << digest_before << "\nprior_final " << parameter_digest(*prior)
        << "\nbackbone_initial " << backbone_before << "\nbackbone_final " << backbone_digest(*prior)
        << "\nadapters_final " << adapter_digest(*prior) << '\n';
    }
    const LearningCurve curve = res.learning_curve();
    std::ostringstream alc;
    try {
      alc << std::setprecision(5) << alc_at_t(curve, cfg.alc_fraction * static_cast<double>(cfg.budget));
    } catch (const InsufficientData&) {
      alc << "n/a (too few evaluations)";
    }
    std::cout << std::setprecision(5) << "seed " << seed << ": final return " << final_return(curve)
              << ", ALC@" << cfg.alc_fraction << " " << alc.str() << ", " << res.seconds_per_10k() << " s per 10k steps, " << res.pet_steps
              << " adapter steps -> " << dir << '\n';
  }
  return 0;
}

int cmd_report(const std::vector<std::string>& dirs, const std::string& out, const std::string& root_flag) {
  std::vector<ArmRuns> arms;
  for (const auto& d : dirs) arms.push_back(load_arm(d));
  const Report rep = build_report(arms);
  const fs::path out_dir = out.empty() ? run_root(root_flag) / "report" : fs::path(out);
  write_report(rep, arms, out_dir);
  std::ifstream md(out_dir / "summary.md");
  std::cout << md.rdbuf() << "\nreport written to " << out_dir << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Diffusion-prior PPO: logged pre-training and on-policy fine-tuning"};
  app.require_subcommand(1);
  std::string root = "runs";

  Common mk_common, tp_common, to_common;
  std::string mk_out, mk_csv, behavior;
  std::int64_t n = -1;
  std::uint64_t ds_seed = 0;
  auto* mk = app.add_subcommand("make-dataset", "generate a logged dataset with a scripted behavior policy");
  mk_common.attach(mk);
  mk->add_option("--behavior", behavior, "random-uniform, mediocre-pd or noisy-expert");
  mk->add_option("-n,--transitions", n, "number of transitions");
  mk->add_option("--seed", ds_seed, "dataset seed");
  mk->add_option("-o,--out", mk_out, "output dataset file")->required();
  mk->add_option("--csv", mk_csv, "also export as CSV");

  std::string tp_dataset, tp_out;
  auto* tp = app.add_subcommand("train-prior", "train the diffusion prior on a logged dataset");
  tp_common.attach(tp);
  tp->add_option("-d,--dataset", tp_dataset, "logged dataset")->required()->check(CLI::ExistingFile);
  tp->add_option("-o,--out", tp_out, "output checkpoint")->required();

  std::string to_prior, to_dataset, to_name;
  auto* to = app.add_subcommand("train-online", "on-policy fine-tuning, one run directory per seed");
  to_common.attach(to);
  to->add_option("-p,--prior", to_prior, "prior checkpoint")->check(CLI::ExistingFile);
  to->add_option("-d,--dataset", to_dataset, "logged dataset (supervised warm start)")->check(CLI::ExistingFile);
  to->add_option("--name", to_name, "arm directory name (default <env>_<mode>)");
  to->add_option("--run-root", root, "run directory root (PPODIFF_RUN_ROOT takes precedence)");

  std::vector<std::string> rp_dirs;
  std::string rp_out;
  auto* rp = app.add_subcommand("report", "aggregate arms into tables and figures");
  rp->add_option("arms", rp_dirs, "arm directories")->required()->check(CLI::ExistingDirectory);
  rp->add_option("-o,--out", rp_out, "output directory (default <run root>/report)");
  rp->add_option("--run-root", root, "run directory root (PPODIFF_RUN_ROOT takes precedence)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*mk) {
      if (!behavior.empty()) mk_common.overrides.push_back("behavior=" + behavior);
      if (n >= 0) mk_common.overrides.push_back("dataset_size=" + std::to_string(n));
      if (mk->count("--seed") > 0) mk_common.overrides.push_back("dataset_seed=" + std::to_string(ds_seed));
      return cmd_make_dataset(mk_common, mk_out, mk_csv);
    }
    if (*tp) return cmd_train_prior(tp_common, tp_dataset, tp_out);
    if (*to) return cmd_train_online(to_common, to_prior, to_dataset, to_name, root);
    if (*rp) return cmd_report(rp_dirs, rp_out, root);
  } catch (const Diverged& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return 2;
  } catch (const SamplerDiverged& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return 2;
  } catch (const NonFiniteValue& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
