#pragma once

// Diffusion action prior: denoising training on logged data, adapter-only
// updates online, and the EDM ancestral sampler with an optional guidance hook.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ppodiff/envs.hpp"
#include "ppodiff/nets.hpp"
#include "ppodiff/optim.hpp"

namespace ppodiff {

/// Normalized (state, action) pairs tagged with the stats that produced them.
struct PriorBatch {
  Tensor states;
  Tensor actions;
  std::uint64_t stats_fingerprint = 0;

  Eigen::Index size() const { return states.rows(); }
};

PriorBatch normalized_batch(const NormalizationStats& stats, const Tensor& states,
                            const Tensor& actions);
PriorBatch dataset_batch(const LoggedDataset& ds, std::span<const Eigen::Index> rows);

enum class PriorScope { all, adapters_only };

struct PriorTrainConfig {
  int batch_size = 256;
  int steps = 3000;
  double lr = 1e-3;
  double holdout_fraction = 0.1;
  int holdout_every = 100;
};

/// Per-item noise levels (log-uniform on the schedule range) and noise draws.
struct NoiseDraw {
  Vector sigmas;
  Tensor noise;  // already scaled by sigma
};

NoiseDraw draw_noise(const DiffusionPrior& prior, Eigen::Index rows, std::mt19937_64& rng);

/// Weighted denoising loss mean_i lambda(sigma_i) * ||D(a_i + eps_i; sigma_i) - a_i||^2
/// with lambda = (sigma^2 + sigma_d^2) / (sigma sigma_d)^2.
ad::Var denoising_loss(ad::Graph& g, const DiffusionPrior& prior,
                       std::span<const ad::Var> backbone_bound,
                       std::span<const ad::Var> adapter_bound, const PriorBatch& batch,
                       const NoiseDraw& draw);

double denoising_loss_value(const DiffusionPrior& prior, const PriorBatch& batch,
                            const NoiseDraw& draw);

struct PriorStepResult {
  double loss = 0.0;
  StepStatus status = StepStatus::applied;
};

/// One optimizer step on the denoising loss. With adapters_only the backbone
/// is bound as constants and is never written.
PriorStepResult train_prior_step(DiffusionPrior& prior, const PriorBatch& batch,
                                 std::mt19937_64& rng, AdamState& state, double lr,
                                 PriorScope scope = PriorScope::all);

struct PriorTrainingReport {
  std::vector<double> train_loss;    // one per step
  std::vector<int> holdout_steps;
  std::vector<double> holdout_loss;  // fixed noise draws, comparable across steps
};

/// sigma_data from normalized logged actions (overall RMS, floored at 0.1).
double estimate_sigma_data(const LoggedDataset& ds);

DiffusionPrior make_prior(const LoggedDataset& ds, const PriorArchitecture& arch,
                          const NoiseSchedule& schedule, std::uint64_t seed);

/// Logged-stage training over all prior parameters with a held-out split.
PriorTrainingReport train_prior(DiffusionPrior& prior, const LoggedDataset& ds,
                                const PriorTrainConfig& config, std::uint64_t seed,
                                const std::function<void(int, double)>& on_step = {});

/// Additive term applied at each reverse step, in normalized action space.
class GuidanceHook {
 public:
  virtual ~GuidanceHook() = default;
  virtual Tensor term(const Tensor& states_raw, const Tensor& actions_norm, double sigma,
                      const DiffusionPrior& prior) const = 0;
};

/// Draws K candidates per state; row i*K + k belongs to state row i. Each row
/// uses its own engine derived from one master seed taken from `rng`.
/// Returns raw actions clipped to [-action_bound, action_bound].
Tensor sample_batch(const DiffusionPrior& prior, const Tensor& states_raw, int K,
                    std::mt19937_64& rng, const GuidanceHook* hook = nullptr,
                    double action_bound = 1.0);

RowVector sample(const DiffusionPrior& prior, const RowVector& state_raw, std::mt19937_64& rng,
                 const GuidanceHook* hook = nullptr, double action_bound = 1.0);

/// Sampler with an explicit master seed (no retry).
Tensor sample_with_seed(const DiffusionPrior& prior, const Tensor& states_raw, int K,
                        std::uint64_t master_seed, const GuidanceHook* hook,
                        double action_bound = 1.0);

struct ProxyFitOptions {
  int samples_per_state = 64;
  int steps = 50;
  double lr = 1e-2;
};

/// Refits the attached proxy head to sampler draws at `states_raw`.
/// Returns the final fit loss.
double refit_proxy(DiffusionPrior& prior, const Tensor& states_raw, const ProxyFitOptions& options,
                   std::uint64_t seed);

/// Proxy moments in raw action units.
GaussianMoments proxy_moments(const DiffusionPrior& prior, const Tensor& states_raw);

void save_prior(const DiffusionPrior& prior, const std::filesystem::path& path,
                std::uint64_t config_hash = 0);
DiffusionPrior load_prior(const std::filesystem::path& path);

/// SHA-256 over the exact parameter bytes.
std::string backbone_digest(const DiffusionPrior& prior);
std::string adapter_digest(const DiffusionPrior& prior);
/// Backbone and adapters together (the proxy head is a monitor, not part of p).
std::string parameter_digest(const DiffusionPrior& prior);

}  // namespace ppodiff
