#pragma once

// Experiment configuration: a flat key = value text format. Every field has a
// default; files and --set overrides are applied on top, then the mode toggles.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ppodiff/guidance.hpp"
#include "ppodiff/nets.hpp"
#include "ppodiff/pet.hpp"
#include "ppodiff/ppo.hpp"
#include "ppodiff/prior.hpp"

namespace ppodiff {

enum class Mode {
  vanilla_ppo,
  bc_warmstart,
  full,
  no_vg,
  no_pet,
  prior_kl_only,
  aux_bc_only,
  diffusion_no_vg
};

Mode parse_mode(const std::string& s);
std::string mode_name(Mode m);
std::vector<std::string> mode_names();

struct ExperimentConfig {
  // task and protocol
  std::string env = "pointmass";
  Mode mode = Mode::full;
  std::vector<std::uint64_t> seeds = {1};
  std::int64_t budget = 100000;  // online environment steps

  // logged stage
  std::string behavior = "mediocre-pd";
  std::int64_t dataset_size = 20000;
  std::uint64_t dataset_seed = 7;
  PriorArchitecture prior_arch;
  NoiseSchedule schedule;
  PriorTrainConfig prior_train;
  std::uint64_t prior_seed = 11;

  // online stage
  PPOConfig ppo;
  ActorCriticConfig nets;  // dims filled from the environment
  int proposals_k = 10;
  int proposal_passes = 1;
  int proposal_states = 32;
  double beta_final = 1.0;
  double beta_anneal = 0.3;
  double alpha_max = 0.3;
  double grad_cap = 0.1;
  FilterConfig filter;
  double lambda_kl = 5e-3;
  double lambda_aux = 1e-2;
  PetConfig pet;
  int monitor_states = 8;
  ProxyFitOptions proxy_fit;
  int warmstart_epochs = 0;
  double warmstart_lr = 1e-3;

  // evaluation
  double eval_every = 0.02;  // fraction of the budget
  int eval_episodes = 10;
  double alc_fraction = 0.4;

  /// Reads key = value lines; '#' starts a comment.
  static ExperimentConfig from_file(const std::filesystem::path& path);
  /// Applies one override; unknown keys and malformed values throw ConfigError.
  void set(const std::string& key, const std::string& value);
  /// All keys with their current values, in schema order.
  std::vector<std::pair<std::string, std::string>> entries() const;
  std::string to_text() const;
  /// Applies the mode toggles and validates.
  ExperimentConfig resolved() const;
  void validate() const;
  std::uint64_t hash() const;

  bool uses_prior() const;
};

/// Key-by-key differences between two resolved configs.
std::vector<std::string> config_diff(const ExperimentConfig& a, const ExperimentConfig& b);

}  // namespace ppodiff
