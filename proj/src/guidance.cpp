#include "ppodiff/guidance.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ppodiff {

Tensor guided_step_term(const ActionValue& q, const Tensor& states, const Tensor& actions,
                        double alpha, double cap, const RowVector* chain,
                        std::size_t* non_finite_rows) {
  if (!(cap > 0.0)) throw DomainError("guidance cap must be positive");
  if (alpha == 0.0) return Tensor::Zero(actions.rows(), actions.cols());
  Tensor g = q.action_gradient(states, actions);
  if (chain != nullptr) g = g.array().rowwise() * chain->array();
  g *= alpha;
  for (Eigen::Index i = 0; i < g.rows(); ++i) {
    if (!g.row(i).allFinite()) {
      g.row(i).setZero();
      if (non_finite_rows != nullptr) ++*non_finite_rows;
      continue;
    }
    const double n = g.row(i).norm();
    if (n > cap) g.row(i) *= cap / n;
  }
  return g;
}

double beta_at(double progress, double beta_final, double anneal_fraction) {
  if (anneal_fraction <= 0.0) return beta_final;
  return std::clamp(progress / anneal_fraction, 0.0, 1.0) * beta_final;
}

double guidance_alpha(double sigma, double sigma_max, double alpha_max) {
  return std::clamp(alpha_max * (1.0 - sigma / sigma_max), 0.0, alpha_max);
}

Tensor ValueGuidance::term(const Tensor& states_raw, const Tensor& actions_norm, double sigma,
                           const DiffusionPrior& prior) const {
  const double alpha = guidance_alpha(sigma, prior.schedule().sigma_max, alpha_max_);
  if (alpha == 0.0) return Tensor::Zero(actions_norm.rows(), actions_norm.cols());
  const Tensor actions_raw = prior.stats().denormalize_actions(actions_norm);
  // dQ/dx = dQ/da * action_std for a = mean + std * x.
  return guided_step_term(*q_, states_raw, actions_raw, alpha, cap_, &prior.stats().action_std,
                          &non_finite_);
}

ProposalSet make_proposals(const DiffusionPrior& prior, const ActionValue& q,
                           const Tensor& states_raw, std::vector<Eigen::Index> origin, int K,
                           double beta, const GuidanceHook* hook, std::mt19937_64& rng,
                           double action_bound) {
  if (static_cast<Eigen::Index>(origin.size()) != states_raw.rows()) {
    throw ShapeError("make_proposals: one origin per state required");
  }
  ProposalSet p;
  p.states = states_raw;
  p.origin = std::move(origin);
  p.K = K;
  p.beta = beta;
  p.candidates = sample_batch(prior, states_raw, K, rng, hook, action_bound);
  Tensor rep(p.candidates.rows(), states_raw.cols());
  for (Eigen::Index i = 0; i < states_raw.rows(); ++i) {
    rep.middleRows(i * K, K) = states_raw.row(i).replicate(K, 1);
  }
  p.q = q.values(rep, p.candidates);
  p.weights.resize(p.q.size());
  for (Eigen::Index i = 0; i < states_raw.rows(); ++i) {
    p.weights.segment(i * K, K) = energy_weights(p.q.segment(i * K, K), beta);
  }
  return p;
}

SyntheticBatch build_dsyn(const ProposalSet& p, const FilterConfig& config, Eigen::Index batch_size,
                          std::mt19937_64& rng) {
  if (config.per_state < 1) throw ConfigError("filter per_state must be >= 1");
  if (!(config.share_cap >= 0.0 && config.share_cap <= 1.0)) {
    throw ConfigError("share cap must lie in [0, 1]");
  }
  const Eigen::Index K = p.K;
  std::vector<Eigen::Index> picked;
  for (Eigen::Index i = 0; i < p.num_states(); ++i) {
    const Eigen::Index base = i * K;
    if (config.mode == FilterMode::resample) {
      std::vector<double> w(p.weights.data() + base, p.weights.data() + base + K);
      std::discrete_distribution<Eigen::Index> cat(w.begin(), w.end());
      for (int d = 0; d < config.per_state; ++d) picked.push_back(base + cat(rng));
    } else {
      std::vector<Eigen::Index> idx(static_cast<std::size_t>(K));
      std::iota(idx.begin(), idx.end(), Eigen::Index{0});
      std::stable_sort(idx.begin(), idx.end(),
                       [&](Eigen::Index a, Eigen::Index b) { return p.q(base + a) > p.q(base + b); });
      const auto k = std::min<Eigen::Index>(config.per_state, K);
      for (Eigen::Index j = 0; j < k; ++j) picked.push_back(base + idx[static_cast<std::size_t>(j)]);
    }
  }
  const auto limit = static_cast<std::size_t>(
      std::floor(config.share_cap * static_cast<double>(batch_size) + 1e-9));
  if (picked.size() > limit) {
    std::vector<std::size_t> order(picked.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return p.weights(picked[a]) > p.weights(picked[b]);
    });
    order.resize(limit);
    std::sort(order.begin(), order.end());
    std::vector<Eigen::Index> kept;
    kept.reserve(limit);
    for (std::size_t o : order) kept.push_back(picked[o]);
    picked = std::move(kept);
  }
  SyntheticBatch out;
  const auto n = static_cast<Eigen::Index>(picked.size());
  out.states.resize(n, p.states.cols());
  out.actions.resize(n, p.candidates.cols());
  out.weights.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const Eigen::Index c = picked[static_cast<std::size_t>(j)];
    out.states.row(j) = p.states.row(c / K);
    out.actions.row(j) = p.candidates.row(c);
    out.weights(j) = p.weights(c);
    out.origin.push_back(p.origin[static_cast<std::size_t>(c / K)]);
    out.candidate.push_back(c);
  }
  return out;
}

ProposalStats proposal_stats(const ProposalSet& p, const SyntheticBatch& dsyn) {
  ProposalStats s;
  if (p.q.size() == 0) return s;
  s.q_mean_uniform = p.q.mean();
  s.q_mean_weighted = p.q.dot(p.weights) / static_cast<double>(p.num_states());
  s.acceptance = static_cast<double>(dsyn.size()) / static_cast<double>(p.q.size());
  return s;
}

}  // namespace ppodiff
