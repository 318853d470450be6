#include "ppodiff/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "ppodiff/guidance.hpp"
#include "ppodiff/io.hpp"
#include "ppodiff/pet.hpp"
#include "ppodiff/rng.hpp"

namespace ppodiff {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Stream ids for the per-run random engines.
enum Stream : std::uint64_t {
  kEnv = 10,
  kPolicy = 11,
  kShuffle = 12,
  kProposal = 13,
  kFilter = 14,
  kPet = 15,
  kMonitor = 16,
  kEval = 17,
  kInit = 18,
  kWarmstart = 19,
};

std::vector<Eigen::Index> pick_rows(Eigen::Index n, Eigen::Index k, std::mt19937_64& rng) {
  std::vector<Eigen::Index> rows(static_cast<std::size_t>(n));
  std::iota(rows.begin(), rows.end(), Eigen::Index{0});
  k = std::min(k, n);
  for (Eigen::Index i = 0; i < k; ++i) {
    std::uniform_int_distribution<Eigen::Index> d(i, n - 1);
    std::swap(rows[static_cast<std::size_t>(i)], rows[static_cast<std::size_t>(d(rng))]);
  }
  rows.resize(static_cast<std::size_t>(k));
  std::sort(rows.begin(), rows.end());
  return rows;
}

Tensor gather_rows(const Tensor& m, std::span<const Eigen::Index> rows) {
  Tensor out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

Vector discounted_returns(const LoggedDataset& ds, double gamma) {
  Vector out(static_cast<Eigen::Index>(ds.size()));
  double running = 0.0;
  for (Eigen::Index t = out.size() - 1; t >= 0; --t) {
    if (ds.dones[static_cast<std::size_t>(t)]) running = 0.0;
    running = ds.rewards(t) + gamma * running;
    out(t) = running;
  }
  return out;
}

ProposalSet concat(ProposalSet a, const ProposalSet& b) {
  if (a.K == 0) return b;
  const Eigen::Index ns = a.states.rows(), nc = a.candidates.rows();
  a.states.conservativeResize(ns + b.states.rows(), Eigen::NoChange);
  a.states.bottomRows(b.states.rows()) = b.states;
  a.candidates.conservativeResize(nc + b.candidates.rows(), Eigen::NoChange);
  a.candidates.bottomRows(b.candidates.rows()) = b.candidates;
  a.q.conservativeResize(nc + b.q.size());
  a.q.tail(b.q.size()) = b.q;
  a.weights.conservativeResize(nc + b.weights.size());
  a.weights.tail(b.weights.size()) = b.weights;
  a.origin.insert(a.origin.end(), b.origin.begin(), b.origin.end());
  return a;
}

struct Collector {
  std::unique_ptr<Environment> env;
  RowVector state;
  std::mt19937_64 rng;

  RolloutBatch collect(const ActorCritic& nets, Eigen::Index n) {
    const EnvSpec& spec = env->spec();
    RolloutBatch b;
    b.states.resize(n, spec.state_dim);
    b.actions.resize(n, spec.action_dim);
    b.executed.resize(n, spec.action_dim);
    b.rewards.resize(n);
    b.next_states.resize(n, spec.state_dim);
    b.dones.assign(static_cast<std::size_t>(n), 0);
    b.old_logp.resize(n);
    b.sources.assign(static_cast<std::size_t>(n), SampleSource::on_policy);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index t = 0; t < n; ++t) {
      const PolicyMoments m = nets.policy_moments(state);
      RowVector a(spec.action_dim);
      for (Eigen::Index j = 0; j < spec.action_dim; ++j) {
        a(j) = m.mean(0, j) + std::exp(m.logstd(0, j)) * normal(rng);
      }
      b.old_logp(t) = gaussian_log_prob(m.mean, m.logstd, Tensor(a))(0);
      const StepResult r = env->step(a);
      b.states.row(t) = state;
      b.actions.row(t) = a;
      b.executed.row(t) = clip_action(a, spec.action_bound);
      b.rewards(t) = r.reward;
      b.next_states.row(t) = r.next_state;
      b.dones[static_cast<std::size_t>(t)] = r.done ? 1 : 0;
      state = r.done ? env->reset() : r.next_state;
    }
    return b;
  }
};

}  // namespace

LearningCurve RunResult::learning_curve() const {
  LearningCurve c;
  for (const CurveRow& r : curve) c.add(static_cast<double>(r.env_steps), r.mean_return);
  return c;
}

double RunResult::seconds_per_10k() const {
  return env_steps > 0 ? loop_seconds * 1e4 / static_cast<double>(env_steps) : 0.0;
}

std::pair<double, double> evaluate_policy(const ActorCritic& nets, const std::string& env_name,
                                          int episodes, std::uint64_t seed) {
  std::vector<std::unique_ptr<Environment>> envs;
  const auto E = static_cast<Eigen::Index>(episodes);
  for (int e = 0; e < episodes; ++e) {
    envs.push_back(make_env(env_name, derive_seed(seed, static_cast<std::uint64_t>(e))));
  }
  const EnvSpec& spec = envs.front()->spec();
  Tensor states(E, spec.state_dim);
  for (Eigen::Index e = 0; e < E; ++e) states.row(e) = envs[static_cast<std::size_t>(e)]->reset();
  Vector returns = Vector::Zero(E);
  for (int t = 0; t < spec.horizon; ++t) {
    const Tensor mean = nets.policy_moments(states).mean;
    for (Eigen::Index e = 0; e < E; ++e) {
      const StepResult r = envs[static_cast<std::size_t>(e)]->step(mean.row(e));
      returns(e) += r.reward;
      states.row(e) = r.next_state;
    }
  }
  const double mu = returns.mean();
  const double sd = std::sqrt((returns.array() - mu).square().mean());
  return {mu, sd};
}

RunResult run_online(const ExperimentConfig& cfg, std::uint64_t seed, DiffusionPrior* prior,
                     const RunOptions& options) {
  const bool use_prior = cfg.uses_prior();
  if (use_prior && prior == nullptr) throw ConfigError("mode '" + mode_name(cfg.mode) + "' needs a prior");
  Collector collector{make_env(cfg.env, derive_seed(seed, kEnv)), {}, make_stream(seed, kPolicy)};
  const EnvSpec spec = collector.env->spec();
  if (prior != nullptr &&
      (prior->state_dim() != spec.state_dim || prior->action_dim() != spec.action_dim)) {
    throw ConfigError("prior dimensions do not match environment '" + spec.name + "'");
  }
  ActorCriticConfig net_cfg = cfg.nets;
  net_cfg.state_dim = spec.state_dim;
  net_cfg.action_dim = spec.action_dim;
  ActorCritic nets(net_cfg, derive_seed(seed, kInit));

  if (cfg.warmstart_epochs > 0) {
    if (options.dataset == nullptr) throw ConfigError("supervised warm start needs a logged dataset");
    const LoggedDataset& ds = *options.dataset;
    if (ds.states.cols() != spec.state_dim || ds.actions.cols() != spec.action_dim) {
      throw ConfigError("dataset dimensions do not match the environment");
    }
    std::mt19937_64 ws = make_stream(seed, kWarmstart);
    supervised_warmstart(nets, ds.states, ds.actions, discounted_returns(ds, cfg.ppo.gamma),
                         cfg.warmstart_epochs, cfg.ppo.minibatch, cfg.warmstart_lr, ws);
  }

  std::mt19937_64 shuffle_rng = make_stream(seed, kShuffle);
  std::mt19937_64 proposal_rng = make_stream(seed, kProposal);
  std::mt19937_64 filter_rng = make_stream(seed, kFilter);
  std::mt19937_64 pet_rng = make_stream(seed, kPet);
  const std::uint64_t monitor_master = derive_seed(seed, kMonitor);
  const std::uint64_t eval_seed = derive_seed(seed, kEval);

  std::optional<RunLogWriter> writer;
  if (!options.run_dir.empty()) {
    std::filesystem::create_directories(options.run_dir);
    write_run_metadata(options.run_dir, cfg, seed);
    writer.emplace(options.run_dir / "runlog.csv");
  }

  RunResult res;
  res.seed = seed;
  const auto t_start = Clock::now();
  const std::int64_t eval_interval =
      std::max<std::int64_t>(1, std::llround(cfg.eval_every * static_cast<double>(cfg.budget)));
  std::int64_t next_eval = 0;
  auto maybe_eval = [&](bool force) {
    if (!force && res.env_steps < next_eval) return;
    const auto [mu, sd] = evaluate_policy(nets, cfg.env, cfg.eval_episodes, eval_seed);
    res.curve.push_back({res.env_steps, mu, sd, seconds_since(t_start)});
    while (next_eval <= res.env_steps) next_eval += eval_interval;
  };
  maybe_eval(true);

  collector.state = collector.env->reset();
  const bool need_proxy = use_prior && (cfg.lambda_kl > 0.0 || cfg.pet.rate > 0);
  AdamState actor_adam, critic_adam, pet_adam;
  int epochs = cfg.ppo.epochs;
  std::int64_t actor_updates = 0;

  for (std::int64_t iter = 1; res.env_steps < cfg.budget; ++iter) {
    const auto t_iter = Clock::now();
    RunLogRow row;
    row.iteration = iter;
    row.epochs = epochs;

    const Eigen::Index n = std::min<std::int64_t>(cfg.ppo.batch_size, cfg.budget - res.env_steps);
    RolloutBatch batch = collector.collect(nets, n);
    res.env_steps += n;
    row.env_steps = res.env_steps;
    const double progress = static_cast<double>(res.env_steps - n) / static_cast<double>(cfg.budget);

    {
      Vector v(n + 1);
      v.head(n) = nets.values(batch.states);
      v(n) = nets.values(batch.next_states.bottomRows(1))(0);
      batch.values = v.head(n);
      batch.bootstrap = v(n);
      GaeResult gae = compute_gae(batch.rewards, v, batch.dones, cfg.ppo.gamma, cfg.ppo.gae_lambda);
      batch.advantages = normalize_advantages(gae.advantages);
      batch.returns = gae.returns;
    }

    // Q quality on this batch before the critic sees it.
    const Vector td = td_targets(nets, batch, cfg.ppo.gamma);
    if (n >= 2) {
      const SpearmanResult sr = spearman_rho(nets.q_values(batch.states, batch.executed), td);
      row.spearman_rho = sr.rho;
      row.spearman_defined = sr.defined ? 1 : 0;
    }

    // Proposals and D_syn at on-policy states.
    SyntheticBatch dsyn;
    bool have_dsyn = false;
    if (use_prior && cfg.proposal_passes > 0) {
      const double beta = beta_at(progress, cfg.beta_final, cfg.beta_anneal);
      row.beta = beta;
      row.alpha_max = cfg.alpha_max;
      const CriticQ critic(nets);
      const ValueGuidance guide(critic, cfg.alpha_max, cfg.grad_cap);
      ProposalSet all;
      for (int pass = 0; pass < cfg.proposal_passes; ++pass) {
        const auto rows = pick_rows(n, cfg.proposal_states, proposal_rng);
        all = concat(std::move(all),
                     make_proposals(*prior, critic, gather_rows(batch.states, rows), rows,
                                    cfg.proposals_k, beta, cfg.alpha_max > 0.0 ? &guide : nullptr,
                                    proposal_rng, spec.action_bound));
      }
      dsyn = build_dsyn(all, cfg.filter, n, filter_rng);
      have_dsyn = true;
      const ProposalStats ps = proposal_stats(all, dsyn);
      row.proposals = all.candidates.rows();
      row.dsyn_size = dsyn.size();
      row.q_mean_weighted = ps.q_mean_weighted;
      row.q_mean_uniform = ps.q_mean_uniform;
      row.acceptance = ps.acceptance;
      row.guidance_non_finite = guide.non_finite_events();
    }

    // Proxy moments for the soft prior-KL.
    std::optional<GaussianMoments> proxy;
    if (need_proxy && !prior->proxy.fitted()) {
      std::mt19937_64 mrng(derive_seed(monitor_master, 0));
      const auto mrows = pick_rows(n, cfg.monitor_states, mrng);
      refit_proxy(*prior, gather_rows(batch.states, mrows), cfg.proxy_fit, derive_seed(monitor_master, 1));
    }
    if (use_prior && cfg.lambda_kl > 0.0) proxy = proxy_moments(*prior, batch.states);

    // Actor.
    const PolicyMoments before = nets.policy_moments(batch.states);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::vector<double> losses;
    double sum_ppo = 0.0, sum_kl = 0.0, sum_aux = 0.0;
    int pet_due = 0;
    for (int e = 0; e < epochs; ++e) {
      std::shuffle(order.begin(), order.end(), shuffle_rng);
      for (Eigen::Index start = 0; start < n; start += cfg.ppo.minibatch) {
        const Eigen::Index m = std::min<Eigen::Index>(cfg.ppo.minibatch, n - start);
        ActorInputs in;
        in.batch = &batch;
        in.rows = std::span<const Eigen::Index>(order.data() + start, static_cast<std::size_t>(m));
        in.dsyn = have_dsyn ? &dsyn : nullptr;
        in.proxy = proxy ? &*proxy : nullptr;
        in.clip = cfg.ppo.clip;
        in.lambda_kl = cfg.lambda_kl;
        in.lambda_aux = cfg.lambda_aux;
        in.share_cap = cfg.filter.share_cap;
        in.counters = &res.sources;
        ad::Graph g;
        auto bound = bind(g, nets.actor, true);
        ActorTerms terms = actor_objective(g, nets, bound, in);
        g.backward(terms.total);
        adam_step(nets.actor, gradients(bound), actor_adam, cfg.ppo.actor_lr);
        losses.push_back(terms.total.scalar());
        sum_ppo += terms.ppo;
        sum_kl += terms.prior_kl;
        sum_aux += terms.aux;
        ++actor_updates;
        if (use_prior && should_pet_step(actor_updates, cfg.pet.rate)) ++pet_due;
      }
    }
    const double nl = static_cast<double>(losses.size());
    row.actor_loss = std::accumulate(losses.begin(), losses.end(), 0.0) / nl;
    row.ppo_loss = sum_ppo / nl;
    row.prior_kl_loss = sum_kl / nl;
    row.aux_loss = sum_aux / nl;
    res.actor_losses.push_back(std::move(losses));

    row.k_policy = policy_kl(before, nets.policy_moments(batch.states));
    epochs = row.k_policy > cfg.ppo.kl_target ? std::max(1, cfg.ppo.epochs / 2) : cfg.ppo.epochs;

    // Critic: V on GAE returns, Q on one-step targets with V held fixed.
    double sum_v = 0.0, sum_q = 0.0;
    int critic_steps = 0;
    for (int e = 0; e < row.epochs; ++e) {
      std::shuffle(order.begin(), order.end(), shuffle_rng);
      for (Eigen::Index start = 0; start < n; start += cfg.ppo.minibatch) {
        const Eigen::Index m = std::min<Eigen::Index>(cfg.ppo.minibatch, n - start);
        std::span<const Eigen::Index> rows(order.data() + start, static_cast<std::size_t>(m));
        const Tensor s = gather_rows(batch.states, rows);
        const Tensor a = gather_rows(batch.executed, rows);
        Vector ret(m), y(m);
        for (Eigen::Index i = 0; i < m; ++i) {
          ret(i) = batch.returns(rows[static_cast<std::size_t>(i)]);
          y(i) = td(rows[static_cast<std::size_t>(i)]);
        }
        ad::Graph g;
        auto bound = bind(g, nets.critic, true);
        ad::Var lv = value_loss(nets, bound, s, ret);
        ad::Var lq = q_loss(nets, bound, s, a, y);
        g.backward(lv + lq);
        adam_step(nets.critic, gradients(bound), critic_adam, cfg.ppo.critic_lr);
        sum_v += lv.scalar();
        sum_q += lq.scalar();
        ++critic_steps;
      }
    }
    row.v_loss = sum_v / critic_steps;
    row.q_loss = sum_q / critic_steps;

    // Scheduled adapter steps and the prior-KL monitor.
    if (pet_due > 0) {
      std::mt19937_64 mrng(derive_seed(monitor_master, static_cast<std::uint64_t>(2 * iter)));
      const Tensor mstates = gather_rows(batch.states, pick_rows(n, cfg.monitor_states, mrng));
      const std::uint64_t fit_seed = derive_seed(monitor_master, static_cast<std::uint64_t>(2 * iter + 1));
      const std::vector<Tensor> proxy_init = prior->proxy.params.values;
      DiffusionPrior snapshot = *prior;
      refit_proxy(snapshot, mstates, cfg.proxy_fit, fit_seed);

      const Eigen::Index pn = std::min<Eigen::Index>(cfg.pet.batch_size, n);
      const PriorBatch pb = normalized_batch(prior->stats(), batch.states.bottomRows(pn),
                                             batch.executed.bottomRows(pn));
      double sq = 0.0;
      for (int k = 0; k < pet_due; ++k) {
        const PetStepResult r = pet_step(*prior, pb, pet_rng, pet_adam, cfg.pet);
        sq += r.delta_norm * r.delta_norm;
        ++res.pet_steps;
      }
      row.pet_events = pet_due;
      row.pet_delta_norm = std::sqrt(sq);

      prior->proxy.params.values = proxy_init;
      refit_proxy(*prior, mstates, cfg.proxy_fit, fit_seed);
      row.k_prior = prior_kl_monitor(snapshot, *prior, mstates);
    }

    res.loop_seconds += seconds_since(t_iter);
    row.wall_seconds = seconds_since(t_start);
    row.src_on_policy = res.sources.on_policy;
    row.src_logged = res.sources.logged;
    row.src_synthetic = res.sources.synthetic;

    if (!std::isfinite(row.k_policy) || !std::isfinite(row.k_prior) || !std::isfinite(row.actor_loss)) {
      if (!options.run_dir.empty()) {
        std::ofstream dump(options.run_dir / "diagnostic.txt");
        dump << "iteration " << iter << "\nenv_steps " << row.env_steps << "\nk_policy " << row.k_policy
             << "\nk_prior " << row.k_prior << "\nactor_loss " << row.actor_loss << "\nv_loss "
             << row.v_loss << "\nq_loss " << row.q_loss << '\n';
      }
      throw Diverged("non-finite monitor at iteration " + std::to_string(iter));
    }

    if (writer) writer->append(row);
    res.log.push_back(row);
    if (options.on_iteration) options.on_iteration(row);
    maybe_eval(res.env_steps >= cfg.budget);
  }

  if (!options.run_dir.empty()) {
    write_curve_csv(options.run_dir / "curve.csv", res.curve);
    io::TensorArchive ac;
    ac.kind = "actor_critic";
    ac.meta["env"] = cfg.env;
    ac.meta["seed"] = std::to_string(seed);
    ac.meta["config_hash"] = io::hex64(cfg.hash());
    for (std::size_t i = 0; i < nets.actor.size(); ++i) ac.tensors.emplace_back("actor/" + nets.actor.names[i], nets.actor.values[i]);
    for (std::size_t i = 0; i < nets.critic.size(); ++i) ac.tensors.emplace_back("critic/" + nets.critic.names[i], nets.critic.values[i]);
    ac.save(options.run_dir / "policy.ckpt");
    std::ofstream t(options.run_dir / "timing.txt");
    t << "loop_seconds " << res.loop_seconds << "\nenv_steps " << res.env_steps
      << "\nseconds_per_10k " << res.seconds_per_10k() << '\n';
  }
  return res;
}

std::string build_id() {
#ifdef PPODIFF_GIT_HASH
  return std::string("git ") + PPODIFF_GIT_HASH + ", built " + __DATE__ + " " + __TIME__;
#else
  return std::string("unknown, built ") + __DATE__ + " " + __TIME__;
#endif
}

void write_run_metadata(const std::filesystem::path& dir, const ExperimentConfig& resolved,
                        std::uint64_t seed) {
  std::ofstream c(dir / "config.txt");
  if (!c) throw IOError("cannot write into '" + dir.string() + "'");
  ExperimentConfig single = resolved;
  single.seeds = {seed};
  c << "# resolved configuration, all defaults materialized\n" << single.to_text();
  std::ofstream b(dir / "build.txt");
  b << build_id() << '\n';
}

}  // namespace ppodiff
