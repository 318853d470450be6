#include "ppodiff/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ppodiff {

void PPOConfig::validate() const {
  if (!(clip > 0.0 && clip < 1.0)) throw ConfigError("PPO clip must lie in (0, 1)");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw ConfigError("GAE lambda must lie in [0, 1]");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in [0, 1]");
  if (batch_size < 1 || epochs < 1 || minibatch < 1) {
    throw ConfigError("batch size, epochs and minibatch must be positive");
  }
  if (!(actor_lr > 0.0) || !(critic_lr > 0.0)) throw ConfigError("learning rates must be positive");
  if (!(kl_target > 0.0)) throw ConfigError("KL target must be positive");
}

GaeResult compute_gae(const Vector& rewards, const Vector& values,
                      const std::vector<std::uint8_t>& dones, double gamma, double lambda) {
  const Eigen::Index T = rewards.size();
  if (values.size() != T + 1 || static_cast<Eigen::Index>(dones.size()) != T) {
    throw ShapeError("compute_gae: rewards, values (T+1) and dones must align");
  }
  GaeResult out{Vector(T), Vector(T)};
  double running = 0.0;
  for (Eigen::Index t = T - 1; t >= 0; --t) {
    const double live = dones[static_cast<std::size_t>(t)] ? 0.0 : 1.0;
    const double delta = rewards(t) + gamma * values(t + 1) * live - values(t);
    running = delta + gamma * lambda * live * running;
    out.advantages(t) = running;
  }
  out.returns = out.advantages + values.head(T);
  return out;
}

Vector normalize_advantages(const Vector& advantages) {
  if (advantages.size() == 0) return advantages;
  const double mu = advantages.mean();
  const double sd = std::sqrt((advantages.array() - mu).square().mean());
  return (advantages.array() - mu) / std::max(sd, 1e-8);
}

namespace ad {

Var ppo_clip_loss(Var new_logp, const Vector& old_logp, const Vector& advantages, double eps) {
  if (new_logp.rows() != old_logp.size() || new_logp.cols() != 1 ||
      advantages.size() != old_logp.size()) {
    throw ShapeError("ppo_clip_loss: length mismatch");
  }
  Graph& g = *new_logp.graph();
  Var ratio = exp(new_logp - g.constant(old_logp));
  Var unclipped = scale_rows(ratio, advantages);
  Var clipped = scale_rows(clip(ratio, 1.0 - eps, 1.0 + eps), advantages);
  return -mean(minimum(unclipped, clipped));
}

}  // namespace ad

Vector td_targets(const ActorCritic& nets, const RolloutBatch& batch, double gamma) {
  const Vector v_next = nets.values(batch.next_states);
  Vector out(batch.size());
  for (Eigen::Index i = 0; i < batch.size(); ++i) {
    const double live = batch.dones[static_cast<std::size_t>(i)] ? 0.0 : 1.0;
    out(i) = batch.rewards(i) + gamma * v_next(i) * live;
  }
  return out;
}

ad::Var value_loss(const ActorCritic& nets, std::span<const ad::Var> critic_bound,
                   const Tensor& states, const Vector& returns) {
  ad::Graph& g = *critic_bound.front().graph();
  ad::Var v = nets.value(critic_bound, g.constant(states));
  return ad::mean(ad::square(v - g.constant(returns)));
}

ad::Var q_loss(const ActorCritic& nets, std::span<const ad::Var> critic_bound, const Tensor& states,
               const Tensor& actions, const Vector& targets) {
  ad::Graph& g = *critic_bound.front().graph();
  ad::Var q = nets.q_value(critic_bound, g.constant(states), g.constant(actions));
  return ad::mean(ad::square(q - g.constant(targets)));
}

CriticLosses critic_losses(const RolloutBatch& batch, const ActorCritic& nets, double gamma) {
  const Vector v = nets.values(batch.states);
  const Vector q = nets.q_values(batch.states, batch.executed);
  const Vector y = td_targets(nets, batch, gamma);
  return {(v - batch.returns).squaredNorm() / static_cast<double>(batch.size()),
          (q - y).squaredNorm() / static_cast<double>(batch.size())};
}

ActorTerms actor_objective(ad::Graph& g, const ActorCritic& nets,
                           std::span<const ad::Var> actor_bound, const ActorInputs& in) {
  if (in.batch == nullptr) throw ConfigError("actor objective needs an on-policy batch");
  const RolloutBatch& batch = *in.batch;
  if (in.dsyn != nullptr) {
    const auto limit = static_cast<Eigen::Index>(
        std::floor(in.share_cap * static_cast<double>(batch.size()) + 1e-9));
    if (in.dsyn->size() > limit) {
      throw ConfigError("synthetic proposals exceed the allowed share of the batch");
    }
    for (Eigen::Index j = 0; j < in.dsyn->size(); ++j) {
      const Eigen::Index o = in.dsyn->origin[static_cast<std::size_t>(j)];
      if (o < 0 || o >= batch.size() || in.dsyn->states.row(j) != batch.states.row(o)) {
        throw ConfigError("synthetic proposal is not tagged with an on-policy state");
      }
    }
  }

  const auto n = static_cast<Eigen::Index>(in.rows.size());
  Tensor s(n, batch.states.cols()), a(n, batch.actions.cols());
  Vector old_logp(n), adv(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index r = in.rows[static_cast<std::size_t>(i)];
    if (batch.sources[static_cast<std::size_t>(r)] != SampleSource::on_policy) {
      throw ConfigError("PPO surrogate received a non on-policy sample");
    }
    s.row(i) = batch.states.row(r);
    a.row(i) = batch.actions.row(r);
    old_logp(i) = batch.old_logp(r);
    adv(i) = batch.advantages(r);
  }
  if (in.counters != nullptr) in.counters->on_policy += static_cast<std::uint64_t>(n);

  PolicyHeads heads = nets.policy(actor_bound, g.constant(s));
  ad::Var logp = ad::gaussian_log_prob(heads.mean, heads.logstd, g.constant(a));
  ad::Var ppo = ad::ppo_clip_loss(logp, old_logp, adv, in.clip);
  ActorTerms out;
  out.total = ppo;
  out.ppo = ppo.scalar();

  if (in.lambda_kl != 0.0 && in.proxy != nullptr) {
    Tensor m0(n, a.cols()), v0(n, a.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::Index r = in.rows[static_cast<std::size_t>(i)];
      m0.row(i) = in.proxy->mean.row(r);
      v0.row(i) = in.proxy->var.row(r);
    }
    ad::Var kl = ad::mean(ad::gaussian_kl_to_fixed(heads.mean, heads.logstd, m0, v0));
    out.prior_kl = kl.scalar();
    out.total = out.total + in.lambda_kl * kl;
  }

  if (in.lambda_aux != 0.0 && in.dsyn != nullptr && in.dsyn->size() > 0) {
    std::vector<Eigen::Index> sorted(in.rows.begin(), in.rows.end());
    std::sort(sorted.begin(), sorted.end());
    std::vector<Eigen::Index> items;
    for (Eigen::Index j = 0; j < in.dsyn->size(); ++j) {
      if (std::binary_search(sorted.begin(), sorted.end(), in.dsyn->origin[static_cast<std::size_t>(j)])) {
        items.push_back(j);
      }
    }
    if (!items.empty()) {
      const auto m = static_cast<Eigen::Index>(items.size());
      Tensor ss(m, s.cols()), sa(m, a.cols());
      for (Eigen::Index k = 0; k < m; ++k) {
        ss.row(k) = in.dsyn->states.row(items[static_cast<std::size_t>(k)]);
        sa.row(k) = in.dsyn->actions.row(items[static_cast<std::size_t>(k)]);
      }
      PolicyHeads syn = nets.policy(actor_bound, g.constant(ss));
      ad::Var aux = -ad::mean(ad::gaussian_log_prob(syn.mean, syn.logstd, g.constant(sa)));
      out.aux = aux.scalar();
      out.total = out.total + in.lambda_aux * aux;
    }
  }
  return out;
}

double policy_kl(const PolicyMoments& old_policy, const PolicyMoments& new_policy) {
  const Tensor v_old = (2.0 * old_policy.logstd.array()).exp().matrix();
  const Tensor v_new = (2.0 * new_policy.logstd.array()).exp().matrix();
  return gaussian_kl_rows(old_policy.mean, v_old, new_policy.mean, v_new).mean();
}

std::pair<double, double> supervised_warmstart(ActorCritic& nets, const Tensor& states,
                                               const Tensor& actions, const Vector& returns,
                                               int epochs, int minibatch, double lr,
                                               std::mt19937_64& rng) {
  const Eigen::Index n = states.rows();
  if (n == 0 || epochs <= 0) return {0.0, 0.0};
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  AdamState actor_state, critic_state;
  double last_pi = 0.0, last_v = 0.0;
  for (int e = 0; e < epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (Eigen::Index start = 0; start < n; start += minibatch) {
      const Eigen::Index m = std::min<Eigen::Index>(minibatch, n - start);
      Tensor s(m, states.cols()), a(m, actions.cols());
      Vector ret(m);
      for (Eigen::Index i = 0; i < m; ++i) {
        const Eigen::Index r = order[static_cast<std::size_t>(start + i)];
        s.row(i) = states.row(r);
        a.row(i) = actions.row(r);
        ret(i) = returns(r);
      }
      {
        ad::Graph g;
        auto bound = bind(g, nets.actor, true);
        PolicyHeads heads = nets.policy(bound, g.constant(s));
        ad::Var loss = ad::mean(ad::row_sum(ad::square(heads.mean - g.constant(a))));
        g.backward(loss);
        last_pi = loss.scalar();
        adam_step(nets.actor, gradients(bound), actor_state, lr);
      }
      {
        ad::Graph g;
        auto bound = bind(g, nets.critic, true);
        ad::Var loss = value_loss(nets, bound, s, ret);
        g.backward(loss);
        last_v = loss.scalar();
        adam_step(nets.critic, gradients(bound), critic_state, lr);
      }
    }
  }
  return {last_pi, last_v};
}

}  // namespace ppodiff
