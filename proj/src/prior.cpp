#include "ppodiff/prior.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "ppodiff/io.hpp"
#include "ppodiff/rng.hpp"

namespace ppodiff {

PriorBatch normalized_batch(const NormalizationStats& stats, const Tensor& states,
                            const Tensor& actions) {
  if (states.rows() != actions.rows()) throw ShapeError("prior batch: row mismatch");
  return {stats.normalize_states(states), stats.normalize_actions(actions), stats.fingerprint()};
}

PriorBatch dataset_batch(const LoggedDataset& ds, std::span<const Eigen::Index> rows) {
  Tensor s(static_cast<Eigen::Index>(rows.size()), ds.states.cols());
  Tensor a(static_cast<Eigen::Index>(rows.size()), ds.actions.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    s.row(static_cast<Eigen::Index>(i)) = ds.states.row(rows[i]);
    a.row(static_cast<Eigen::Index>(i)) = ds.actions.row(rows[i]);
  }
  return normalized_batch(ds.stats, s, a);
}

NoiseDraw draw_noise(const DiffusionPrior& prior, Eigen::Index rows, std::mt19937_64& rng) {
  const NoiseSchedule& sch = prior.schedule();
  std::uniform_real_distribution<double> u(std::log(sch.sigma_min), std::log(sch.sigma_max));
  std::normal_distribution<double> n(0.0, 1.0);
  NoiseDraw d;
  d.sigmas.resize(rows);
  d.noise.resize(rows, prior.action_dim());
  for (Eigen::Index i = 0; i < rows; ++i) {
    d.sigmas(i) = std::clamp(std::exp(u(rng)), sch.sigma_min, sch.sigma_max);
    for (Eigen::Index j = 0; j < prior.action_dim(); ++j) d.noise(i, j) = d.sigmas(i) * n(rng);
  }
  return d;
}

ad::Var denoising_loss(ad::Graph& g, const DiffusionPrior& prior,
                       std::span<const ad::Var> backbone_bound,
                       std::span<const ad::Var> adapter_bound, const PriorBatch& batch,
                       const NoiseDraw& draw) {
  if (batch.stats_fingerprint != prior.stats().fingerprint()) {
    throw ConfigError("prior batch was normalized with different statistics than the prior");
  }
  if (batch.size() == 0) throw ShapeError("denoising loss on an empty batch");
  const double sd = prior.sigma_data();
  Vector weight(batch.size());
  for (Eigen::Index i = 0; i < batch.size(); ++i) {
    const double s = draw.sigmas(i);
    weight(i) = (s * s + sd * sd) / ((s * sd) * (s * sd));
  }
  ad::Var noisy = g.constant(batch.actions + draw.noise);
  ad::Var denoised =
      prior.denoise(g, backbone_bound, adapter_bound, noisy, batch.states, draw.sigmas);
  ad::Var residual = denoised - g.constant(batch.actions);
  ad::Var per_item = ad::row_sum(ad::square(residual));
  return ad::mean(ad::scale_rows(per_item, weight));
}

double denoising_loss_value(const DiffusionPrior& prior, const PriorBatch& batch,
                            const NoiseDraw& draw) {
  ad::Graph g;
  auto bb = bind(g, prior.backbone, false);
  auto ab = bind(g, prior.adapters, false);
  return denoising_loss(g, prior, bb, ab, batch, draw).scalar();
}

PriorStepResult train_prior_step(DiffusionPrior& prior, const PriorBatch& batch,
                                 std::mt19937_64& rng, AdamState& state, double lr,
                                 PriorScope scope) {
  const NoiseDraw draw = draw_noise(prior, batch.size(), rng);
  ad::Graph g;
  const bool all = scope == PriorScope::all;
  auto bb = bind(g, prior.backbone, all);
  auto ab = bind(g, prior.adapters, true);
  ad::Var loss = denoising_loss(g, prior, bb, ab, batch, draw);
  g.backward(loss);
  PriorStepResult result;
  result.loss = loss.scalar();
  if (all) {
    std::vector<Tensor> params;
    params.reserve(prior.backbone.size() + prior.adapters.size());
    for (Tensor& t : prior.backbone.values) params.push_back(std::move(t));
    for (Tensor& t : prior.adapters.values) params.push_back(std::move(t));
    std::vector<Tensor> grads = gradients(bb);
    for (Tensor& t : gradients(ab)) grads.push_back(std::move(t));
    result.status = adam_step(params, grads, state, lr);
    std::size_t k = 0;
    for (Tensor& t : prior.backbone.values) t = std::move(params[k++]);
    for (Tensor& t : prior.adapters.values) t = std::move(params[k++]);
  } else {
    result.status = adam_step(prior.adapters, gradients(ab), state, lr);
  }
  return result;
}

double estimate_sigma_data(const LoggedDataset& ds) {
  if (ds.size() == 0) throw InsufficientData("cannot estimate sigma_data from an empty dataset");
  const Tensor a = ds.stats.normalize_actions(ds.actions);
  return std::max(0.1, std::sqrt(a.array().square().mean()));
}

DiffusionPrior make_prior(const LoggedDataset& ds, const PriorArchitecture& arch,
                          const NoiseSchedule& schedule, std::uint64_t seed) {
  if (ds.size() == 0) throw InsufficientData("cannot build a prior from an empty dataset");
  return DiffusionPrior(ds.states.cols(), ds.actions.cols(), arch, schedule, ds.stats,
                        estimate_sigma_data(ds), seed);
}

PriorTrainingReport train_prior(DiffusionPrior& prior, const LoggedDataset& ds,
                                const PriorTrainConfig& config, std::uint64_t seed,
                                const std::function<void(int, double)>& on_step) {
  if (ds.size() < 2) throw InsufficientData("prior training needs at least two transitions");
  if (ds.states.cols() != prior.state_dim() || ds.actions.cols() != prior.action_dim()) {
    throw ConfigError("dataset dimensions do not match the prior");
  }
  std::mt19937_64 split_rng = make_stream(seed, 1);
  std::vector<Eigen::Index> order(ds.size());
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::shuffle(order.begin(), order.end(), split_rng);
  auto n_hold = static_cast<std::size_t>(config.holdout_fraction * static_cast<double>(ds.size()));
  n_hold = std::clamp<std::size_t>(n_hold, 1, ds.size() - 1);
  const std::vector<Eigen::Index> holdout(order.begin(), order.begin() + static_cast<long>(n_hold));
  std::vector<Eigen::Index> train(order.begin() + static_cast<long>(n_hold), order.end());

  const PriorBatch hold_batch = dataset_batch(ds, holdout);
  std::mt19937_64 hold_rng = make_stream(seed, 2);
  const NoiseDraw hold_draw = draw_noise(prior, hold_batch.size(), hold_rng);

  std::mt19937_64 batch_rng = make_stream(seed, 3);
  std::mt19937_64 noise_rng = make_stream(seed, 4);
  std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);
  AdamState adam;
  PriorTrainingReport report;
  std::vector<Eigen::Index> rows(static_cast<std::size_t>(config.batch_size));
  for (int step = 0; step < config.steps; ++step) {
    if (config.holdout_every > 0 && step % config.holdout_every == 0) {
      report.holdout_steps.push_back(step);
      report.holdout_loss.push_back(denoising_loss_value(prior, hold_batch, hold_draw));
    }
    for (auto& r : rows) r = train[pick(batch_rng)];
    const PriorBatch batch = dataset_batch(ds, rows);
    const PriorStepResult res = train_prior_step(prior, batch, noise_rng, adam, config.lr);
    report.train_loss.push_back(res.loss);
    if (on_step) on_step(step, res.loss);
  }
  report.holdout_steps.push_back(config.steps);
  report.holdout_loss.push_back(denoising_loss_value(prior, hold_batch, hold_draw));
  return report;
}

// ---------------------------------------------------------------------------

Tensor sample_with_seed(const DiffusionPrior& prior, const Tensor& states_raw, int K,
                        std::uint64_t master_seed, const GuidanceHook* hook,
                        double action_bound) {
  if (K < 1) throw ConfigError("sample_batch needs K >= 1");
  if (states_raw.cols() != prior.state_dim()) throw ShapeError("sampler: state width mismatch");
  const Eigen::Index n = states_raw.rows() * K;
  const Eigen::Index ad = prior.action_dim();

  Tensor s_raw(n, states_raw.cols());
  for (Eigen::Index i = 0; i < states_raw.rows(); ++i) {
    s_raw.middleRows(i * K, K) = states_raw.row(i).replicate(K, 1);
  }
  const Tensor s_norm = prior.stats().normalize_states(s_raw);

  std::vector<std::mt19937_64> engines;
  engines.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index r = 0; r < n; ++r) {
    engines.push_back(make_stream(master_seed, static_cast<std::uint64_t>(r)));
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  auto gaussian = [&](Tensor& z) {
    for (Eigen::Index r = 0; r < n; ++r) {
      auto& eng = engines[static_cast<std::size_t>(r)];
      for (Eigen::Index j = 0; j < ad; ++j) z(r, j) = normal(eng);
    }
  };

  const std::vector<double> ladder = prior.schedule().ladder();
  Tensor z(n, ad);
  gaussian(z);
  Tensor x = prior.schedule().sigma_max * z;
  for (std::size_t i = 0; i < ladder.size(); ++i) {
    const double sigma = ladder[i];
    const double sigma_next = i + 1 < ladder.size() ? ladder[i + 1] : 0.0;
    const Tensor denoised = prior.denoise(x, s_norm, Vector::Constant(n, sigma));
    double sigma_up = 0.0;
    if (sigma_next > 0.0) {
      sigma_up = std::min(sigma_next,
                          std::sqrt(sigma_next * sigma_next * (sigma * sigma - sigma_next * sigma_next) /
                                    (sigma * sigma)));
    }
    const double sigma_down = std::sqrt(std::max(0.0, sigma_next * sigma_next - sigma_up * sigma_up));
    Tensor next = x + ((x - denoised) / sigma) * (sigma_down - sigma);
    if (sigma_up > 0.0) {
      gaussian(z);
      next += sigma_up * z;
    }
    if (hook != nullptr) next += hook->term(s_raw, x, sigma, prior);
    if (!next.allFinite()) throw NonFiniteValue("sampler step", i);
    x = std::move(next);
  }
  Tensor out = prior.stats().denormalize_actions(x);
  return out.cwiseMax(-action_bound).cwiseMin(action_bound);
}

Tensor sample_batch(const DiffusionPrior& prior, const Tensor& states_raw, int K,
                    std::mt19937_64& rng, const GuidanceHook* hook, double action_bound) {
  const std::uint64_t first = rng();
  try {
    return sample_with_seed(prior, states_raw, K, first, hook, action_bound);
  } catch (const NonFiniteValue&) {
  }
  try {
    return sample_with_seed(prior, states_raw, K, rng(), hook, action_bound);
  } catch (const NonFiniteValue& e) {
    throw SamplerDiverged(std::string("sampler diverged twice: ") + e.what());
  }
}

RowVector sample(const DiffusionPrior& prior, const RowVector& state_raw, std::mt19937_64& rng,
                 const GuidanceHook* hook, double action_bound) {
  return sample_batch(prior, Tensor(state_raw), 1, rng, hook, action_bound).row(0);
}

double refit_proxy(DiffusionPrior& prior, const Tensor& states_raw, const ProxyFitOptions& options,
                   std::uint64_t seed) {
  const Tensor raw =
      sample_with_seed(prior, states_raw, options.samples_per_state, seed, nullptr);
  const Tensor samples = prior.stats().normalize_actions(raw);
  const Tensor states = prior.stats().normalize_states(states_raw);
  return prior.proxy.fit(states, samples, options.samples_per_state, options.steps, options.lr);
}

GaussianMoments proxy_moments(const DiffusionPrior& prior, const Tensor& states_raw) {
  if (!prior.proxy.fitted()) throw MonitorError("proxy head has not been fitted");
  GaussianMoments m = prior.proxy.predict(prior.stats().normalize_states(states_raw));
  m.mean = prior.stats().denormalize_actions(m.mean);
  m.var = m.var.array().rowwise() * prior.stats().action_std.array().square();
  return m;
}

// ---------------------------------------------------------------------------

namespace {

std::string join_widths(const std::vector<Eigen::Index>& w) {
  std::ostringstream os;
  for (std::size_t i = 0; i < w.size(); ++i) os << (i ? "," : "") << w[i];
  return os.str();
}

std::vector<Eigen::Index> parse_widths(const std::string& s) {
  std::vector<Eigen::Index> out;
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ',')) out.push_back(std::stol(tok));
  return out;
}

std::string exact(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::vector<std::uint8_t> param_bytes(const ParamSet& p) {
  io::BinaryWriter w;
  for (std::size_t i = 0; i < p.size(); ++i) {
    w.string(p.names[i]);
    w.tensor(p.values[i]);
  }
  return w.buffer();
}

}  // namespace

void save_prior(const DiffusionPrior& prior, const std::filesystem::path& path,
                std::uint64_t config_hash) {
  io::TensorArchive a;
  a.kind = "diffusion_prior";
  const PriorArchitecture& arch = prior.architecture();
  a.meta["state_dim"] = std::to_string(prior.state_dim());
  a.meta["action_dim"] = std::to_string(prior.action_dim());
  a.meta["hidden"] = join_widths(arch.hidden);
  a.meta["embedding_dim"] = std::to_string(arch.embedding_dim);
  a.meta["lora_rank"] = std::to_string(arch.lora_rank);
  a.meta["proxy_hidden"] = std::to_string(arch.proxy_hidden);
  a.meta["sigma_min"] = exact(prior.schedule().sigma_min);
  a.meta["sigma_max"] = exact(prior.schedule().sigma_max);
  a.meta["sampler_steps"] = std::to_string(prior.schedule().steps);
  a.meta["seed"] = std::to_string(prior.seed());
  a.meta["config_hash"] = io::hex64(config_hash);
  a.meta["proxy_fitted"] = prior.proxy.fitted() ? "1" : "0";
  a.tensors.emplace_back("sigma_data", Tensor::Constant(1, 1, prior.sigma_data()));
  a.tensors.emplace_back("stats.state_mean", Tensor(prior.stats().state_mean));
  a.tensors.emplace_back("stats.state_std", Tensor(prior.stats().state_std));
  a.tensors.emplace_back("stats.action_mean", Tensor(prior.stats().action_mean));
  a.tensors.emplace_back("stats.action_std", Tensor(prior.stats().action_std));
  auto put = [&a](const std::string& group, const ParamSet& p) {
    for (std::size_t i = 0; i < p.size(); ++i) a.tensors.emplace_back(group + p.names[i], p.values[i]);
  };
  put("backbone/", prior.backbone);
  put("adapters/", prior.adapters);
  put("proxy/", prior.proxy.params);
  a.save(path);
}

DiffusionPrior load_prior(const std::filesystem::path& path) {
  const io::TensorArchive a = io::TensorArchive::load(path);
  if (a.kind != "diffusion_prior") throw IOError("'" + path.string() + "' is not a prior checkpoint");
  PriorArchitecture arch;
  arch.hidden = parse_widths(a.meta_at("hidden"));
  arch.embedding_dim = std::stol(a.meta_at("embedding_dim"));
  arch.lora_rank = std::stol(a.meta_at("lora_rank"));
  arch.proxy_hidden = std::stol(a.meta_at("proxy_hidden"));
  NoiseSchedule sch;
  sch.sigma_min = std::stod(a.meta_at("sigma_min"));
  sch.sigma_max = std::stod(a.meta_at("sigma_max"));
  sch.steps = std::stoi(a.meta_at("sampler_steps"));
  NormalizationStats stats;
  stats.state_mean = a.at("stats.state_mean").row(0);
  stats.state_std = a.at("stats.state_std").row(0);
  stats.action_mean = a.at("stats.action_mean").row(0);
  stats.action_std = a.at("stats.action_std").row(0);
  DiffusionPrior prior(std::stol(a.meta_at("state_dim")), std::stol(a.meta_at("action_dim")), arch,
                       sch, stats, a.at("sigma_data")(0, 0), std::stoull(a.meta_at("seed")));
  auto get = [&a](const std::string& group, ParamSet& p) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      const Tensor& t = a.at(group + p.names[i]);
      if (t.rows() != p.values[i].rows() || t.cols() != p.values[i].cols()) {
        throw IOError("checkpoint tensor '" + p.names[i] + "' has the wrong shape");
      }
      p.values[i] = t;
    }
  };
  get("backbone/", prior.backbone);
  get("adapters/", prior.adapters);
  get("proxy/", prior.proxy.params);
  prior.proxy.mark_fitted(a.meta_at("proxy_fitted") == "1");
  return prior;
}

std::string backbone_digest(const DiffusionPrior& prior) {
  return io::sha256_hex(param_bytes(prior.backbone));
}

std::string adapter_digest(const DiffusionPrior& prior) {
  return io::sha256_hex(param_bytes(prior.adapters));
}

std::string parameter_digest(const DiffusionPrior& prior) {
  auto bytes = param_bytes(prior.backbone);
  const auto more = param_bytes(prior.adapters);
  bytes.insert(bytes.end(), more.begin(), more.end());
  return io::sha256_hex(bytes);
}

}  // namespace ppodiff
