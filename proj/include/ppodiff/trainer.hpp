#pragma once

// The online loop: collect on-policy rollouts, propose and filter prior
// actions, update actor and critic, run scheduled adapter steps, log monitors.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ppodiff/config.hpp"
#include "ppodiff/envs.hpp"
#include "ppodiff/evalstats.hpp"
#include "ppodiff/ppo.hpp"
#include "ppodiff/prior.hpp"

namespace ppodiff {

struct RunResult {
  std::uint64_t seed = 0;
  std::vector<RunLogRow> log;
  std::vector<CurveRow> curve;
  std::vector<std::vector<double>> actor_losses;  // per iteration, per minibatch
  SourceCounters sources;
  std::int64_t pet_steps = 0;
  double loop_seconds = 0.0;  // rollout + update loop, evaluation excluded
  std::int64_t env_steps = 0;

  LearningCurve learning_curve() const;
  double seconds_per_10k() const;
};

struct RunOptions {
  /// Output directory; empty writes nothing.
  std::filesystem::path run_dir;
  /// Logged data for the supervised warm start.
  const LoggedDataset* dataset = nullptr;
  /// Called after every iteration.
  std::function<void(const RunLogRow&)> on_iteration;
};

/// Greedy (policy-mean) returns over `episodes` evaluation episodes, stepped
/// in lockstep. Start states come from fixed per-episode seeds.
std::pair<double, double> evaluate_policy(const ActorCritic& nets, const std::string& env,
                                          int episodes, std::uint64_t seed);

/// Runs one seed. `prior` is modified in place by adapter steps; it may be
/// null only when the resolved config does not use a prior.
RunResult run_online(const ExperimentConfig& resolved, std::uint64_t seed, DiffusionPrior* prior,
                     const RunOptions& options = {});

/// Writes config.txt and build.txt into `dir`.
void write_run_metadata(const std::filesystem::path& dir, const ExperimentConfig& resolved,
                        std::uint64_t seed);

std::string build_id();

}  // namespace ppodiff
