#pragma once

// Network definitions: plain MLPs, the actor-critic with its shared critic
// trunk, the preconditioned conditional denoiser with low-rank adapters, and
// the diagonal-Gaussian proxy head attached to it.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ppodiff/autodiff.hpp"
#include "ppodiff/optim.hpp"

namespace ppodiff {

enum class Activation { identity, tanh, silu };

struct LinearLayer {
  std::size_t weight = 0;  // in x out
  std::size_t bias = 0;    // 1 x out
  Eigen::Index in = 0;
  Eigen::Index out = 0;
};

/// Low-rank pair attached to one linear layer: y += (x * down) * up.
struct LowRankPair {
  std::size_t down = 0;  // in x rank
  std::size_t up = 0;    // rank x out
  Eigen::Index rank = 0;
};

class Mlp {
 public:
  Mlp() = default;
  /// widths = {input, hidden..., output}. Weights ~ U(-1/sqrt(in), 1/sqrt(in)),
  /// the last layer scaled by `last_scale`; biases zero.
  Mlp(ParamSet& params, const std::string& prefix, std::vector<Eigen::Index> widths,
      Activation hidden, bool activate_output, std::mt19937_64& rng, double last_scale = 1.0);

  ad::Var forward(std::span<const ad::Var> bound, ad::Var x) const;
  /// Same network with a low-rank pair added to every layer.
  ad::Var forward(std::span<const ad::Var> bound, ad::Var x,
                  std::span<const LowRankPair> pairs, std::span<const ad::Var> pair_bound) const;

  const std::vector<LinearLayer>& layers() const { return layers_; }
  Eigen::Index input_dim() const { return layers_.front().in; }
  Eigen::Index output_dim() const { return layers_.back().out; }

 private:
  ad::Var activate(ad::Var x) const;

  std::vector<LinearLayer> layers_;
  Activation hidden_ = Activation::tanh;
  bool activate_output_ = false;
};

/// Attaches rank-min(r, in, out) pairs to every layer of `net`; down ~ uniform,
/// up = 0, so the adapted network starts as the plain one.
std::vector<LowRankPair> attach_low_rank(ParamSet& adapters, const Mlp& net, Eigen::Index rank,
                                         std::mt19937_64& rng);

struct ActorCriticConfig {
  Eigen::Index state_dim = 0;
  Eigen::Index action_dim = 0;
  std::vector<Eigen::Index> hidden = {64, 64};
  Eigen::Index q_hidden = 64;
  double init_logstd = -0.5;
};

struct PolicyHeads {
  ad::Var mean;
  ad::Var logstd;  // already clamped
};

struct PolicyMoments {
  Tensor mean;
  Tensor logstd;
};

class ActorCritic {
 public:
  static constexpr double kLogStdMin = -5.0;
  static constexpr double kLogStdMax = 2.0;

  ActorCritic(const ActorCriticConfig& config, std::uint64_t seed);

  PolicyHeads policy(std::span<const ad::Var> actor_bound, ad::Var states) const;
  ad::Var value(std::span<const ad::Var> critic_bound, ad::Var states) const;
  ad::Var q_value(std::span<const ad::Var> critic_bound, ad::Var states, ad::Var actions) const;

  PolicyMoments policy_moments(const Tensor& states) const;
  Vector values(const Tensor& states) const;
  Vector q_values(const Tensor& states, const Tensor& actions) const;
  /// d Q / d action for every row, holding the critic fixed.
  Tensor q_action_gradient(const Tensor& states, const Tensor& actions) const;

  const ActorCriticConfig& config() const { return config_; }

  ParamSet actor;
  ParamSet critic;

 private:
  ActorCriticConfig config_;
  Mlp policy_trunk_;
  Mlp mean_head_;
  Mlp logstd_head_;
  Mlp critic_trunk_;
  Mlp v_head_;
  Mlp q_head_;
};

struct NoiseSchedule {
  double sigma_min = 0.01;
  double sigma_max = 2.0;
  int steps = 20;

  void validate() const;
  /// Geometric ladder from sigma_max down to sigma_min with `steps` entries.
  std::vector<double> ladder() const;
};

struct NormalizationStats {
  RowVector state_mean;
  RowVector state_std;
  RowVector action_mean;
  RowVector action_std;

  Tensor normalize_states(const Tensor& states) const;
  Tensor normalize_actions(const Tensor& actions) const;
  Tensor denormalize_actions(const Tensor& actions) const;
  /// Hash of the exact bit patterns; two stats agree iff fingerprints agree.
  std::uint64_t fingerprint() const;
};

struct Preconditioning {
  double c_skip;
  double c_out;
  double c_in;
  double c_noise;
};

/// EDM coefficients for noise level sigma and data std sigma_data.
Preconditioning precondition(double sigma, double sigma_data);

/// sin/cos features of c_noise = ln(sigma)/4 at frequencies 2^k.
Tensor sigma_embedding(const Vector& sigmas, Eigen::Index dim);

struct PriorArchitecture {
  std::vector<Eigen::Index> hidden = {128, 128, 128};
  Eigen::Index embedding_dim = 16;
  Eigen::Index lora_rank = 8;
  Eigen::Index proxy_hidden = 32;
};

struct GaussianMoments {
  Tensor mean;
  Tensor var;
};

/// State-conditioned diagonal Gaussian N(mu(s), diag(sigma(s)^2)) over
/// normalized actions.
class GaussianProxy {
 public:
  static constexpr double kVarianceFloor = 1e-4;

  GaussianProxy() = default;
  GaussianProxy(Eigen::Index state_dim, Eigen::Index action_dim, Eigen::Index hidden,
                std::mt19937_64& rng);

  /// Maximum-likelihood fit by `steps` full-batch Adam steps. Row i*M + m of
  /// `samples` belongs to state row i. Returns the final mean NLL.
  double fit(const Tensor& states, const Tensor& samples, int per_state, int steps, double lr);

  GaussianMoments predict(const Tensor& states) const;
  bool fitted() const { return fitted_; }
  void mark_fitted(bool f) { fitted_ = f; }

  ParamSet params;

 private:
  PolicyHeads heads(std::span<const ad::Var> bound, ad::Var states) const;

  Mlp net_;
  Eigen::Index action_dim_ = 0;
  bool fitted_ = false;
};

class DiffusionPrior {
 public:
  DiffusionPrior(Eigen::Index state_dim, Eigen::Index action_dim, PriorArchitecture arch,
                 NoiseSchedule schedule, NormalizationStats stats, double sigma_data,
                 std::uint64_t seed);

  /// D(noisy; sigma) on normalized inputs, one sigma per row. Adapter vars may
  /// be empty, in which case the plain backbone runs.
  ad::Var denoise(ad::Graph& g, std::span<const ad::Var> backbone_bound,
                  std::span<const ad::Var> adapter_bound, ad::Var noisy,
                  const Tensor& states_norm, const Vector& sigmas) const;

  Tensor denoise(const Tensor& noisy, const Tensor& states_norm, const Vector& sigmas,
                 bool with_adapters = true) const;

  Eigen::Index state_dim() const { return state_dim_; }
  Eigen::Index action_dim() const { return action_dim_; }
  const PriorArchitecture& architecture() const { return arch_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  const NormalizationStats& stats() const { return stats_; }
  double sigma_data() const { return sigma_data_; }
  std::uint64_t seed() const { return seed_; }

  ParamSet backbone;
  ParamSet adapters;
  GaussianProxy proxy;

 private:
  void check_sigmas(const Vector& sigmas) const;

  Eigen::Index state_dim_;
  Eigen::Index action_dim_;
  PriorArchitecture arch_;
  NoiseSchedule schedule_;
  NormalizationStats stats_;
  double sigma_data_;
  std::uint64_t seed_;
  Mlp net_;
  std::vector<LowRankPair> pairs_;
};

}  // namespace ppodiff
