#include "ppodiff/pet.hpp"

#include <cmath>
#include <iostream>

#include "ppodiff/gaussian.hpp"

namespace ppodiff {

namespace {
bool allowed_rate(int rate) { return rate == 0 || rate == 5 || rate == 10 || rate == 20; }
}  // namespace

void PetConfig::validate() const {
  if (!allowed_rate(rate)) throw ConfigError("PET rate must be one of 0, 5, 10, 20");
  if (rank < 1) throw ConfigError("adapter rank must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("PET learning rate must be positive");
  if (batch_size < 1) throw ConfigError("PET batch size must be positive");
  if (grad_clip < 0.0) throw ConfigError("PET gradient clip must be >= 0");
}

bool should_pet_step(std::int64_t actor_update_index, int rate) {
  if (!allowed_rate(rate)) throw ConfigError("PET rate must be one of 0, 5, 10, 20");
  if (actor_update_index < 1) throw ConfigError("actor update index starts at 1");
  if (rate == 0) return false;
  const std::int64_t spacing = std::lround(100.0 / rate);
  return actor_update_index % spacing == 0;
}

PetStepResult pet_step(DiffusionPrior& prior, const PriorBatch& batch, std::mt19937_64& rng,
                       AdamState& state, const PetConfig& config) {
  PetStepResult out;
  if (batch.size() == 0) {
    std::cerr << "warning: PET step skipped on an empty batch\n";
    return out;
  }
  const std::vector<Tensor> before = prior.adapters.values;
  const NoiseDraw draw = draw_noise(prior, batch.size(), rng);
  ad::Graph g;
  auto bb = bind(g, prior.backbone, false);
  auto ab = bind(g, prior.adapters, true);
  ad::Var loss = denoising_loss(g, prior, bb, ab, batch, draw);
  g.backward(loss);
  out.loss = loss.scalar();
  std::vector<Tensor> grads = gradients(ab);
  if (config.grad_clip > 0.0) clip_grad_norm(grads, config.grad_clip);
  const StepStatus status = config.optimizer == PetOptimizer::adam
                                ? adam_step(prior.adapters, grads, state, config.lr)
                                : sgd_step(prior.adapters.values, grads, config.lr);
  out.applied = status == StepStatus::applied;
  double sq = 0.0;
  for (std::size_t i = 0; i < before.size(); ++i) {
    sq += (prior.adapters.values[i] - before[i]).squaredNorm();
  }
  out.delta_norm = std::sqrt(sq);
  return out;
}

double prior_kl_monitor(const DiffusionPrior& before, const DiffusionPrior& after,
                        const Tensor& states_raw) {
  if (!before.proxy.fitted() || !after.proxy.fitted()) {
    throw MonitorError("prior-KL monitor needs fitted proxy heads");
  }
  if (before.stats().fingerprint() != after.stats().fingerprint()) {
    throw MonitorError("prior snapshots use different normalization");
  }
  const Tensor s = after.stats().normalize_states(states_raw);
  const GaussianMoments p1 = after.proxy.predict(s);
  const GaussianMoments p0 = before.proxy.predict(s);
  return gaussian_kl_rows(p1.mean, p1.var, p0.mean, p0.var).mean();
}

}  // namespace ppodiff
