#pragma once

// On-policy PPO pieces: advantage estimation, clipped surrogate, critic and Q
// TD losses, and the actor objective with the prior-KL and auxiliary terms.

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "ppodiff/gaussian.hpp"
#include "ppodiff/guidance.hpp"
#include "ppodiff/nets.hpp"

namespace ppodiff {

enum class SampleSource : std::uint8_t { on_policy, logged, synthetic };

/// One iteration of fresh rollouts. `actions` are the policy draws (pre-clip,
/// so `old_logp` is exact); `executed` are the clipped actions the
/// environment applied.
struct RolloutBatch {
  Tensor states;
  Tensor actions;
  Tensor executed;
  Vector rewards;
  Tensor next_states;
  std::vector<std::uint8_t> dones;
  Vector old_logp;
  Vector values;      // V(s_t), plus the bootstrap value in `bootstrap`
  double bootstrap = 0.0;
  Vector advantages;  // normalized
  Vector returns;
  std::vector<SampleSource> sources;

  Eigen::Index size() const { return states.rows(); }
};

struct PPOConfig {
  double clip = 0.2;
  double gae_lambda = 0.95;
  double gamma = 0.99;
  int batch_size = 256;
  int epochs = 10;
  int minibatch = 64;
  double actor_lr = 3e-4;
  double critic_lr = 1e-3;
  double kl_target = 0.02;

  void validate() const;
};

struct GaeResult {
  Vector advantages;
  Vector returns;
};

/// `values` holds T + 1 entries: V(s_0..s_{T-1}) and the bootstrap V(s_T).
GaeResult compute_gae(const Vector& rewards, const Vector& values,
                      const std::vector<std::uint8_t>& dones, double gamma, double lambda);

/// Shift and scale to mean 0, std 1 (std floored at 1e-8).
Vector normalize_advantages(const Vector& advantages);

/// mean of -min(r A, clip(r, 1-eps, 1+eps) A), r = exp(new - old).
template <typename D1, typename D2, typename D3>
double ppo_clip_loss(const Eigen::MatrixBase<D1>& new_logp, const Eigen::MatrixBase<D2>& old_logp,
                     const Eigen::MatrixBase<D3>& advantages, double eps) {
  if (new_logp.size() != old_logp.size() || new_logp.size() != advantages.size()) {
    throw ShapeError("ppo_clip_loss: length mismatch");
  }
  const Eigen::ArrayXd r = (new_logp.derived().array() - old_logp.derived().array()).exp();
  const Eigen::ArrayXd a = advantages.derived().array();
  return -(r * a).min(r.cwiseMax(1.0 - eps).cwiseMin(1.0 + eps) * a).mean();
}

namespace ad {
Var ppo_clip_loss(Var new_logp, const Vector& old_logp, const Vector& advantages, double eps);
}

/// r + gamma V(s') (1 - done) with the current critic, no gradient.
Vector td_targets(const ActorCritic& nets, const RolloutBatch& batch, double gamma);

ad::Var value_loss(const ActorCritic& nets, std::span<const ad::Var> critic_bound,
                   const Tensor& states, const Vector& returns);
ad::Var q_loss(const ActorCritic& nets, std::span<const ad::Var> critic_bound, const Tensor& states,
               const Tensor& actions, const Vector& targets);

struct CriticLosses {
  double v_loss = 0.0;
  double q_loss = 0.0;
};

CriticLosses critic_losses(const RolloutBatch& batch, const ActorCritic& nets, double gamma);

/// Samples that entered the PPO surrogate, by origin.
struct SourceCounters {
  std::uint64_t on_policy = 0;
  std::uint64_t logged = 0;
  std::uint64_t synthetic = 0;
};

struct ActorInputs {
  const RolloutBatch* batch = nullptr;
  std::span<const Eigen::Index> rows;    // minibatch rows of `batch`
  const SyntheticBatch* dsyn = nullptr;  // may be null
  const GaussianMoments* proxy = nullptr;  // raw-unit proxy moments per batch row; may be null
  double clip = 0.2;
  double lambda_kl = 5e-3;
  double lambda_aux = 1e-2;
  double share_cap = 0.2;
  SourceCounters* counters = nullptr;
};

struct ActorTerms {
  ad::Var total;
  double ppo = 0.0;
  double prior_kl = 0.0;
  double aux = 0.0;
};

/// L_PPO + lambda_kl KL(pi || proxy) + lambda_aux mean(-log pi(a_syn | s_syn)).
/// The surrogate only reads on-policy rows; auxiliary items are the D_syn
/// entries whose origin row is in the minibatch.
ActorTerms actor_objective(ad::Graph& g, const ActorCritic& nets,
                           std::span<const ad::Var> actor_bound, const ActorInputs& in);

/// Mean over rows of KL(old || new) between diagonal-Gaussian policies.
double policy_kl(const PolicyMoments& old_policy, const PolicyMoments& new_policy);

/// Supervised warm start: policy mean regressed on logged actions, V on
/// discounted logged returns. Returns the final (policy, value) MSE.
std::pair<double, double> supervised_warmstart(ActorCritic& nets, const Tensor& states,
                                               const Tensor& actions, const Vector& returns,
                                               int epochs, int minibatch, double lr,
                                               std::mt19937_64& rng);

}  // namespace ppodiff
