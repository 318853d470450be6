#pragma once

// Value-guided proposals: energy re-weighting of prior candidates, capped
// gradient guidance inside the reverse process, and filtering into D_syn.

#include <cstdint>
#include <random>
#include <vector>

#include "ppodiff/nets.hpp"
#include "ppodiff/prior.hpp"

namespace ppodiff {

/// Action-value function over raw states and raw actions.
class ActionValue {
 public:
  virtual ~ActionValue() = default;
  virtual Vector values(const Tensor& states, const Tensor& actions) const = 0;
  virtual Tensor action_gradient(const Tensor& states, const Tensor& actions) const = 0;
};

/// Reads the Q head of an actor-critic. The referenced network must not be
/// updated while a guidance pass is running.
class CriticQ final : public ActionValue {
 public:
  explicit CriticQ(const ActorCritic& nets) : nets_(&nets) {}
  Vector values(const Tensor& states, const Tensor& actions) const override {
    return nets_->q_values(states, actions);
  }
  Tensor action_gradient(const Tensor& states, const Tensor& actions) const override {
    return nets_->q_action_gradient(states, actions);
  }

 private:
  const ActorCritic* nets_;
};

/// softmax(beta * q) with max subtraction.
template <typename Derived>
Vector energy_weights(const Eigen::MatrixBase<Derived>& q, double beta) {
  if (q.size() < 1) throw ShapeError("energy_weights needs at least one candidate");
  if (!(beta >= 0.0)) throw DomainError("energy_weights needs beta >= 0");
  const Eigen::ArrayXd z = beta * q.derived().array().template cast<double>();
  Eigen::ArrayXd e = (z - z.maxCoeff()).exp();
  return (e / e.sum()).matrix();
}

/// alpha * dQ/da per row, rows with norm above `cap` rescaled to norm `cap`.
/// `chain` (per action column) converts the gradient to another action
/// parameterization before alpha and the cap are applied. Non-finite rows are
/// zeroed and counted in `non_finite_rows`.
Tensor guided_step_term(const ActionValue& q, const Tensor& states, const Tensor& actions,
                        double alpha, double cap, const RowVector* chain = nullptr,
                        std::size_t* non_finite_rows = nullptr);

/// Linear ramp to beta_final over the first `anneal_fraction` of training.
double beta_at(double progress, double beta_final = 1.0, double anneal_fraction = 0.3);

/// alpha_t = alpha_max * (1 - sigma/sigma_max), clamped to [0, alpha_max].
double guidance_alpha(double sigma, double sigma_max, double alpha_max);

/// Sampler hook adding the capped value gradient at every reverse step.
class ValueGuidance final : public GuidanceHook {
 public:
  ValueGuidance(const ActionValue& q, double alpha_max, double cap)
      : q_(&q), alpha_max_(alpha_max), cap_(cap) {}

  Tensor term(const Tensor& states_raw, const Tensor& actions_norm, double sigma,
              const DiffusionPrior& prior) const override;

  std::size_t non_finite_events() const { return non_finite_; }

 private:
  const ActionValue* q_;
  double alpha_max_;
  double cap_;
  mutable std::size_t non_finite_ = 0;
};

struct ProposalSet {
  Tensor states;                      // n x S, raw
  std::vector<Eigen::Index> origin;   // batch row of each state
  int K = 0;
  Tensor candidates;                  // nK x A, raw; row i*K + k belongs to state i
  Vector q;                           // nK
  Vector weights;                     // nK, sums to 1 within each state
  double beta = 0.0;

  Eigen::Index num_states() const { return states.rows(); }
};

/// Draws K candidates per state (optionally guided) and scores them.
ProposalSet make_proposals(const DiffusionPrior& prior, const ActionValue& q,
                           const Tensor& states_raw, std::vector<Eigen::Index> origin, int K,
                           double beta, const GuidanceHook* hook, std::mt19937_64& rng,
                           double action_bound = 1.0);

enum class FilterMode { resample, topk };

struct SyntheticBatch {
  Tensor states;
  Tensor actions;
  std::vector<Eigen::Index> origin;      // on-policy batch row
  std::vector<Eigen::Index> candidate;   // row in the proposal set
  Vector weights;

  Eigen::Index size() const { return states.rows(); }
};

struct FilterConfig {
  FilterMode mode = FilterMode::resample;
  int per_state = 2;         // draws (resample) or k (topk) per state
  double share_cap = 0.2;
};

/// Filters proposals to D_syn and truncates to floor(share_cap * batch_size)
/// items by descending weight (lowest index first on ties).
SyntheticBatch build_dsyn(const ProposalSet& proposals, const FilterConfig& config,
                          Eigen::Index batch_size, std::mt19937_64& rng);

struct ProposalStats {
  double q_mean_weighted = 0.0;  // sum_i w_i Q_i averaged over states
  double q_mean_uniform = 0.0;
  double acceptance = 0.0;       // |D_syn| / candidates
};

ProposalStats proposal_stats(const ProposalSet& proposals, const SyntheticBatch& dsyn);

}  // namespace ppodiff
