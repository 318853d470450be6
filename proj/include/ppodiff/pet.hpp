#pragma once

// Online adapter updates on a fixed cadence and the prior-KL monitor.

#include <cstdint>
#include <random>

#include "ppodiff/prior.hpp"

namespace ppodiff {

enum class PetOptimizer { adam, sgd };

struct PetConfig {
  int rate = 10;  // PET steps per 100 actor updates; one of {0, 5, 10, 20}
  Eigen::Index rank = 8;
  double lr = 1e-5;
  int batch_size = 256;
  PetOptimizer optimizer = PetOptimizer::adam;
  double grad_clip = 0.0;  // global-norm clip on adapter gradients; 0 disables

  void validate() const;
};

/// True iff rate > 0 and index is a multiple of round(100 / rate).
/// Throws ConfigError for rates outside {0, 5, 10, 20} and for index < 1.
bool should_pet_step(std::int64_t actor_update_index, int rate);

struct PetStepResult {
  double delta_norm = 0.0;  // ||adapters_after - adapters_before||_2
  double loss = 0.0;
  bool applied = false;
};

/// One denoising step restricted to the adapters. An empty batch is a no-op
/// (applied = false).
PetStepResult pet_step(DiffusionPrior& prior, const PriorBatch& batch, std::mt19937_64& rng,
                       AdamState& state, const PetConfig& config);

/// Mean over states of KL(after || before) between the two fitted proxy heads.
double prior_kl_monitor(const DiffusionPrior& before, const DiffusionPrior& after,
                        const Tensor& states_raw);

}  // namespace ppodiff
