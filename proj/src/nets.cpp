#include "ppodiff/nets.hpp"

#include <bit>
#include <cmath>

#include "ppodiff/gaussian.hpp"

namespace ppodiff {

namespace {

Tensor uniform_tensor(Eigen::Index rows, Eigen::Index cols, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) t(i, j) = dist(rng);
  }
  return t;
}

ad::Var linear(std::span<const ad::Var> bound, const LinearLayer& layer, ad::Var x) {
  return ad::add_row(ad::matmul(x, bound[layer.weight]), bound[layer.bias]);
}

}  // namespace

Mlp::Mlp(ParamSet& params, const std::string& prefix, std::vector<Eigen::Index> widths,
         Activation hidden, bool activate_output, std::mt19937_64& rng, double last_scale)
    : hidden_(hidden), activate_output_(activate_output) {
  if (widths.size() < 2) throw ConfigError("Mlp needs at least input and output widths");
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const Eigen::Index in = widths[l], out = widths[l + 1];
    const bool last = l + 2 == widths.size();
    const double bound = (last ? last_scale : 1.0) / std::sqrt(static_cast<double>(in));
    LinearLayer layer;
    layer.in = in;
    layer.out = out;
    layer.weight =
        params.add(prefix + ".l" + std::to_string(l) + ".weight", uniform_tensor(in, out, bound, rng));
    layer.bias = params.add(prefix + ".l" + std::to_string(l) + ".bias", Tensor::Zero(1, out));
    layers_.push_back(layer);
  }
}

ad::Var Mlp::activate(ad::Var x) const {
  switch (hidden_) {
    case Activation::tanh:
      return ad::tanh(x);
    case Activation::silu:
      return ad::silu(x);
    case Activation::identity:
      break;
  }
  return x;
}

ad::Var Mlp::forward(std::span<const ad::Var> bound, ad::Var x) const {
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    x = linear(bound, layers_[l], x);
    if (l + 1 < layers_.size() || activate_output_) x = activate(x);
  }
  return x;
}

ad::Var Mlp::forward(std::span<const ad::Var> bound, ad::Var x,
                     std::span<const LowRankPair> pairs,
                     std::span<const ad::Var> pair_bound) const {
  if (pairs.size() != layers_.size()) throw ShapeError("Mlp: one low-rank pair per layer expected");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    ad::Var base = linear(bound, layers_[l], x);
    ad::Var delta = ad::matmul(ad::matmul(x, pair_bound[pairs[l].down]), pair_bound[pairs[l].up]);
    x = base + delta;
    if (l + 1 < layers_.size() || activate_output_) x = activate(x);
  }
  return x;
}

std::vector<LowRankPair> attach_low_rank(ParamSet& adapters, const Mlp& net, Eigen::Index rank,
                                         std::mt19937_64& rng) {
  if (rank < 1) throw ConfigError("low-rank adapters need rank >= 1");
  std::vector<LowRankPair> pairs;
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    const LinearLayer& layer = net.layers()[l];
    LowRankPair pair;
    pair.rank = std::min({rank, layer.in, layer.out});
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.in));
    pair.down = adapters.add("lora.l" + std::to_string(l) + ".down",
                             uniform_tensor(layer.in, pair.rank, bound, rng));
    pair.up = adapters.add("lora.l" + std::to_string(l) + ".up", Tensor::Zero(pair.rank, layer.out));
    pairs.push_back(pair);
  }
  return pairs;
}

// ---------------------------------------------------------------------------

ActorCritic::ActorCritic(const ActorCriticConfig& config, std::uint64_t seed) : config_(config) {
  if (config.state_dim < 1 || config.action_dim < 1 || config.hidden.empty()) {
    throw ConfigError("ActorCritic: invalid dimensions");
  }
  std::mt19937_64 rng(seed);
  std::vector<Eigen::Index> trunk_widths{config.state_dim};
  trunk_widths.insert(trunk_widths.end(), config.hidden.begin(), config.hidden.end());
  const Eigen::Index feat = config.hidden.back();

  policy_trunk_ = Mlp(actor, "policy.trunk", trunk_widths, Activation::tanh, true, rng);
  mean_head_ = Mlp(actor, "policy.mean", {feat, config.action_dim}, Activation::identity, false,
                   rng, 0.01);
  logstd_head_ = Mlp(actor, "policy.logstd", {feat, config.action_dim}, Activation::identity,
                     false, rng, 0.01);
  actor.values[logstd_head_.layers()[0].bias].setConstant(config.init_logstd);

  critic_trunk_ = Mlp(critic, "critic.trunk", trunk_widths, Activation::tanh, true, rng);
  v_head_ = Mlp(critic, "critic.v", {feat, 1}, Activation::identity, false, rng);
  q_head_ = Mlp(critic, "critic.q", {feat + config.action_dim, config.q_hidden, 1},
                Activation::tanh, false, rng);
}

PolicyHeads ActorCritic::policy(std::span<const ad::Var> actor_bound, ad::Var states) const {
  ad::Var h = policy_trunk_.forward(actor_bound, states);
  ad::Var mean = mean_head_.forward(actor_bound, h);
  ad::Var logstd = ad::clip(logstd_head_.forward(actor_bound, h), kLogStdMin, kLogStdMax);
  return {mean, logstd};
}

ad::Var ActorCritic::value(std::span<const ad::Var> critic_bound, ad::Var states) const {
  return v_head_.forward(critic_bound, critic_trunk_.forward(critic_bound, states));
}

ad::Var ActorCritic::q_value(std::span<const ad::Var> critic_bound, ad::Var states,
                             ad::Var actions) const {
  ad::Var h = critic_trunk_.forward(critic_bound, states);
  return q_head_.forward(critic_bound, ad::concat_cols({h, actions}));
}

PolicyMoments ActorCritic::policy_moments(const Tensor& states) const {
  ad::Graph g;
  auto bound = bind(g, actor, false);
  PolicyHeads heads = policy(bound, g.constant(states));
  return {heads.mean.value(), heads.logstd.value()};
}

Vector ActorCritic::values(const Tensor& states) const {
  ad::Graph g;
  auto bound = bind(g, critic, false);
  return value(bound, g.constant(states)).value().col(0);
}

Vector ActorCritic::q_values(const Tensor& states, const Tensor& actions) const {
  ad::Graph g;
  auto bound = bind(g, critic, false);
  return q_value(bound, g.constant(states), g.constant(actions)).value().col(0);
}

Tensor ActorCritic::q_action_gradient(const Tensor& states, const Tensor& actions) const {
  ad::Graph g;
  auto bound = bind(g, critic, false);
  ad::Var a = g.variable(actions);
  g.backward(ad::sum(q_value(bound, g.constant(states), a)));
  return a.grad();
}

// ---------------------------------------------------------------------------

void NoiseSchedule::validate() const {
  if (!(sigma_min > 0.0) || !(sigma_max > sigma_min) || steps < 1) {
    throw ConfigError("noise schedule needs 0 < sigma_min < sigma_max and steps >= 1");
  }
}

std::vector<double> NoiseSchedule::ladder() const {
  validate();
  std::vector<double> out(static_cast<std::size_t>(steps));
  if (steps == 1) {
    out[0] = sigma_max;
    return out;
  }
  const double log_hi = std::log(sigma_max), log_lo = std::log(sigma_min);
  for (int i = 0; i < steps; ++i) {
    out[static_cast<std::size_t>(i)] =
        std::exp(log_hi + (log_lo - log_hi) * static_cast<double>(i) / (steps - 1));
  }
  out.front() = sigma_max;
  out.back() = sigma_min;
  return out;
}

Tensor NormalizationStats::normalize_states(const Tensor& states) const {
  if (states.cols() != state_mean.size()) throw ShapeError("state width does not match stats");
  return (states.rowwise() - state_mean).array().rowwise() / state_std.array();
}

Tensor NormalizationStats::normalize_actions(const Tensor& actions) const {
  if (actions.cols() != action_mean.size()) throw ShapeError("action width does not match stats");
  return (actions.rowwise() - action_mean).array().rowwise() / action_std.array();
}

Tensor NormalizationStats::denormalize_actions(const Tensor& actions) const {
  if (actions.cols() != action_mean.size()) throw ShapeError("action width does not match stats");
  Tensor out = actions.array().rowwise() * action_std.array();
  return out.rowwise() + action_mean;
}

std::uint64_t NormalizationStats::fingerprint() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const RowVector& v) {
    h ^= static_cast<std::uint64_t>(v.size());
    h *= 1099511628211ULL;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      h ^= std::bit_cast<std::uint64_t>(v(i));
      h *= 1099511628211ULL;
    }
  };
  mix(state_mean);
  mix(state_std);
  mix(action_mean);
  mix(action_std);
  return h;
}

Preconditioning precondition(double sigma, double sigma_data) {
  const double s2 = sigma * sigma, d2 = sigma_data * sigma_data;
  const double root = std::sqrt(s2 + d2);
  return {d2 / (s2 + d2), sigma * sigma_data / root, 1.0 / root, 0.25 * std::log(sigma)};
}

Tensor sigma_embedding(const Vector& sigmas, Eigen::Index dim) {
  if (dim % 2 != 0) throw ConfigError("sigma embedding width must be even");
  const Eigen::Index half = dim / 2;
  Tensor out(sigmas.size(), dim);
  for (Eigen::Index i = 0; i < sigmas.size(); ++i) {
    const double c_noise = 0.25 * std::log(sigmas(i));
    for (Eigen::Index k = 0; k < half; ++k) {
      const double arg = c_noise * std::ldexp(1.0, static_cast<int>(k));
      out(i, k) = std::sin(arg);
      out(i, half + k) = std::cos(arg);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

GaussianProxy::GaussianProxy(Eigen::Index state_dim, Eigen::Index action_dim, Eigen::Index hidden,
                             std::mt19937_64& rng)
    : net_(params, "proxy", {state_dim, hidden, 2 * action_dim}, Activation::tanh, false, rng,
           0.01),
      action_dim_(action_dim) {}

PolicyHeads GaussianProxy::heads(std::span<const ad::Var> bound, ad::Var states) const {
  ad::Var out = net_.forward(bound, states);
  ad::Var mean = ad::slice_cols(out, 0, action_dim_);
  const double floor = 0.5 * std::log(kVarianceFloor);
  ad::Var logstd = ad::clip(ad::slice_cols(out, action_dim_, action_dim_), floor, 3.0);
  return {mean, logstd};
}

double GaussianProxy::fit(const Tensor& states, const Tensor& samples, int per_state, int steps,
                          double lr) {
  if (per_state < 1 || samples.rows() != states.rows() * per_state) {
    throw ShapeError("proxy fit: expected per_state samples for every state");
  }
  Tensor expanded(samples.rows(), states.cols());
  for (Eigen::Index i = 0; i < states.rows(); ++i) {
    expanded.middleRows(i * per_state, per_state) = states.row(i).replicate(per_state, 1);
  }
  AdamState adam;
  double loss = 0.0;
  for (int step = 0; step <= steps; ++step) {
    ad::Graph g;
    auto bound = bind(g, params, true);
    PolicyHeads h = heads(bound, g.constant(expanded));
    ad::Var nll = -ad::mean(ad::gaussian_log_prob(h.mean, h.logstd, g.constant(samples)));
    loss = nll.scalar();
    if (step == steps) break;
    g.backward(nll);
    adam_step(params, gradients(bound), adam, lr);
  }
  fitted_ = true;
  return loss;
}

GaussianMoments GaussianProxy::predict(const Tensor& states) const {
  ad::Graph g;
  auto bound = bind(g, params, false);
  PolicyHeads h = heads(bound, g.constant(states));
  return {h.mean.value(), (2.0 * h.logstd.value()).array().exp().matrix()};
}

// ---------------------------------------------------------------------------

DiffusionPrior::DiffusionPrior(Eigen::Index state_dim, Eigen::Index action_dim,
                               PriorArchitecture arch, NoiseSchedule schedule,
                               NormalizationStats stats, double sigma_data, std::uint64_t seed)
    : state_dim_(state_dim),
      action_dim_(action_dim),
      arch_(std::move(arch)),
      schedule_(schedule),
      stats_(std::move(stats)),
      sigma_data_(sigma_data),
      seed_(seed) {
  schedule_.validate();
  if (!(sigma_data_ > 0.0)) throw ConfigError("sigma_data must be positive");
  if (stats_.state_mean.size() != state_dim || stats_.action_mean.size() != action_dim) {
    throw ConfigError("normalization stats do not match prior dimensions");
  }
  std::mt19937_64 rng(seed);
  std::vector<Eigen::Index> widths{action_dim + state_dim + arch_.embedding_dim};
  widths.insert(widths.end(), arch_.hidden.begin(), arch_.hidden.end());
  widths.push_back(action_dim);
  net_ = Mlp(backbone, "denoiser", widths, Activation::silu, false, rng);
  pairs_ = attach_low_rank(adapters, net_, arch_.lora_rank, rng);
  proxy = GaussianProxy(state_dim, action_dim, arch_.proxy_hidden, rng);
}

void DiffusionPrior::check_sigmas(const Vector& sigmas) const {
  const double lo = schedule_.sigma_min * (1.0 - 1e-12);
  const double hi = schedule_.sigma_max * (1.0 + 1e-12);
  for (Eigen::Index i = 0; i < sigmas.size(); ++i) {
    if (!(sigmas(i) >= lo && sigmas(i) <= hi)) {
      throw DomainError("denoiser: sigma " + std::to_string(sigmas(i)) + " outside [" +
                        std::to_string(schedule_.sigma_min) + ", " +
                        std::to_string(schedule_.sigma_max) + "]");
    }
  }
}

ad::Var DiffusionPrior::denoise(ad::Graph& g, std::span<const ad::Var> backbone_bound,
                                std::span<const ad::Var> adapter_bound, ad::Var noisy,
                                const Tensor& states_norm, const Vector& sigmas) const {
  check_sigmas(sigmas);
  const Eigen::Index n = sigmas.size();
  if (noisy.rows() != n || states_norm.rows() != n) throw ShapeError("denoiser: row mismatch");
  Vector c_skip(n), c_out(n), c_in(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Preconditioning p = precondition(sigmas(i), sigma_data_);
    c_skip(i) = p.c_skip;
    c_out(i) = p.c_out;
    c_in(i) = p.c_in;
  }
  ad::Var input = ad::concat_cols({ad::scale_rows(noisy, c_in), g.constant(states_norm),
                                   g.constant(sigma_embedding(sigmas, arch_.embedding_dim))});
  ad::Var raw = adapter_bound.empty() ? net_.forward(backbone_bound, input)
                                      : net_.forward(backbone_bound, input, pairs_, adapter_bound);
  return ad::scale_rows(noisy, c_skip) + ad::scale_rows(raw, c_out);
}

Tensor DiffusionPrior::denoise(const Tensor& noisy, const Tensor& states_norm,
                               const Vector& sigmas, bool with_adapters) const {
  ad::Graph g;
  auto bb = bind(g, backbone, false);
  std::vector<ad::Var> ab;
  if (with_adapters) ab = bind(g, adapters, false);
  return denoise(g, bb, ab, g.constant(noisy), states_norm, sigmas).value();
}

}  // namespace ppodiff
