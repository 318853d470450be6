#include "ppodiff/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "ppodiff/envs.hpp"
#include "ppodiff/io.hpp"

namespace ppodiff {

namespace {

const std::vector<std::pair<Mode, std::string>>& mode_table() {
  static const std::vector<std::pair<Mode, std::string>> t = {
      {Mode::vanilla_ppo, "vanilla_ppo"},     {Mode::bc_warmstart, "bc_warmstart"},
      {Mode::full, "full"},                   {Mode::no_vg, "no_vg"},
      {Mode::no_pet, "no_pet"},               {Mode::prior_kl_only, "prior_kl_only"},
      {Mode::aux_bc_only, "aux_bc_only"},     {Mode::diffusion_no_vg, "diffusion_no_vg"}};
  return t;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ConfigError("'" + key + "' expects a number, got '" + v + "'");
  return out;
}

template <typename Int>
Int to_int(const std::string& key, const std::string& v) {
  Int out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("'" + key + "' expects an integer, got '" + v + "'");
  }
  return out;
}

template <typename Int>
std::string join(const std::vector<Int>& xs) {
  std::ostringstream os;
  for (std::size_t i = 0; i < xs.size(); ++i) os << (i ? "," : "") << xs[i];
  return os.str();
}

template <typename Int>
std::vector<Int> to_list(const std::string& key, const std::string& v) {
  std::vector<Int> out;
  std::istringstream is(v);
  std::string tok;
  while (std::getline(is, tok, ',')) out.push_back(to_int<Int>(key, trim(tok)));
  if (out.empty()) throw ConfigError("'" + key + "' expects a comma-separated list");
  return out;
}

struct Field {
  std::string key;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

template <typename T>
Field num(const std::string& key, T& ref) {
  if constexpr (std::is_floating_point_v<T>) {
    return {key, [&ref] { return fmt(ref); }, [&ref, key](const std::string& v) { ref = to_double(key, v); }};
  } else {
    return {key, [&ref] { return std::to_string(ref); },
            [&ref, key](const std::string& v) { ref = to_int<T>(key, v); }};
  }
}

Field text(const std::string& key, std::string& ref) {
  return {key, [&ref] { return ref; }, [&ref](const std::string& v) { ref = v; }};
}

std::vector<Field> fields(ExperimentConfig& c) {
  std::vector<Field> f;
  f.push_back(text("env", c.env));
  f.push_back({"mode", [&c] { return mode_name(c.mode); },
               [&c](const std::string& v) { c.mode = parse_mode(v); }});
  f.push_back({"seeds", [&c] { return join(c.seeds); },
               [&c](const std::string& v) { c.seeds = to_list<std::uint64_t>("seeds", v); }});
  f.push_back(num("budget", c.budget));

  f.push_back(text("behavior", c.behavior));
  f.push_back(num("dataset_size", c.dataset_size));
  f.push_back(num("dataset_seed", c.dataset_seed));
  f.push_back({"prior.hidden", [&c] { return join(c.prior_arch.hidden); },
               [&c](const std::string& v) { c.prior_arch.hidden = to_list<Eigen::Index>("prior.hidden", v); }});
  f.push_back(num("prior.embedding_dim", c.prior_arch.embedding_dim));
  f.push_back(num("prior.proxy_hidden", c.prior_arch.proxy_hidden));
  f.push_back(num("prior.sigma_min", c.schedule.sigma_min));
  f.push_back(num("prior.sigma_max", c.schedule.sigma_max));
  f.push_back(num("prior.sampler_steps", c.schedule.steps));
  f.push_back(num("prior.batch_size", c.prior_train.batch_size));
  f.push_back(num("prior.steps", c.prior_train.steps));
  f.push_back(num("prior.lr", c.prior_train.lr));
  f.push_back(num("prior.holdout_fraction", c.prior_train.holdout_fraction));
  f.push_back(num("prior.holdout_every", c.prior_train.holdout_every));
  f.push_back(num("prior.seed", c.prior_seed));

  f.push_back(num("ppo.clip", c.ppo.clip));
  f.push_back(num("ppo.gae_lambda", c.ppo.gae_lambda));
  f.push_back(num("ppo.gamma", c.ppo.gamma));
  f.push_back(num("ppo.batch_size", c.ppo.batch_size));
  f.push_back(num("ppo.epochs", c.ppo.epochs));
  f.push_back(num("ppo.minibatch", c.ppo.minibatch));
  f.push_back(num("ppo.actor_lr", c.ppo.actor_lr));
  f.push_back(num("ppo.critic_lr", c.ppo.critic_lr));
  f.push_back(num("ppo.kl_target", c.ppo.kl_target));
  f.push_back({"nets.hidden", [&c] { return join(c.nets.hidden); },
               [&c](const std::string& v) { c.nets.hidden = to_list<Eigen::Index>("nets.hidden", v); }});
  f.push_back(num("nets.q_hidden", c.nets.q_hidden));
  f.push_back(num("nets.init_logstd", c.nets.init_logstd));

  f.push_back(num("guidance.k", c.proposals_k));
  f.push_back(num("guidance.passes", c.proposal_passes));
  f.push_back(num("guidance.states", c.proposal_states));
  f.push_back(num("guidance.beta_final", c.beta_final));
  f.push_back(num("guidance.beta_anneal", c.beta_anneal));
  f.push_back(num("guidance.alpha_max", c.alpha_max));
  f.push_back(num("guidance.grad_cap", c.grad_cap));
  f.push_back({"guidance.filter",
               [&c] { return std::string(c.filter.mode == FilterMode::resample ? "resample" : "topk"); },
               [&c](const std::string& v) {
                 if (v == "resample") c.filter.mode = FilterMode::resample;
                 else if (v == "topk") c.filter.mode = FilterMode::topk;
                 else throw ConfigError("guidance.filter must be 'resample' or 'topk'");
               }});
  f.push_back(num("guidance.per_state", c.filter.per_state));
  f.push_back(num("guidance.share_cap", c.filter.share_cap));
  f.push_back(num("actor.lambda_kl", c.lambda_kl));
  f.push_back(num("actor.lambda_aux", c.lambda_aux));

  f.push_back(num("pet.rate", c.pet.rate));
  f.push_back(num("pet.rank", c.prior_arch.lora_rank));
  f.push_back(num("pet.lr", c.pet.lr));
  f.push_back(num("pet.batch_size", c.pet.batch_size));
  f.push_back({"pet.optimizer",
               [&c] { return std::string(c.pet.optimizer == PetOptimizer::adam ? "adam" : "sgd"); },
               [&c](const std::string& v) {
                 if (v == "adam") c.pet.optimizer = PetOptimizer::adam;
                 else if (v == "sgd") c.pet.optimizer = PetOptimizer::sgd;
                 else throw ConfigError("pet.optimizer must be 'adam' or 'sgd'");
               }});
  f.push_back(num("pet.grad_clip", c.pet.grad_clip));
  f.push_back(num("monitor.states", c.monitor_states));
  f.push_back(num("monitor.samples", c.proxy_fit.samples_per_state));
  f.push_back(num("monitor.fit_steps", c.proxy_fit.steps));
  f.push_back(num("monitor.fit_lr", c.proxy_fit.lr));
  f.push_back(num("warmstart.epochs", c.warmstart_epochs));
  f.push_back(num("warmstart.lr", c.warmstart_lr));

  f.push_back(num("eval.every", c.eval_every));
  f.push_back(num("eval.episodes", c.eval_episodes));
  f.push_back(num("eval.alc_fraction", c.alc_fraction));
  return f;
}

}  // namespace

Mode parse_mode(const std::string& s) {
  for (const auto& [m, n] : mode_table()) {
    if (n == s) return m;
  }
  throw ConfigError("unknown mode '" + s + "'");
}

std::string mode_name(Mode m) {
  for (const auto& [mm, n] : mode_table()) {
    if (mm == m) return n;
  }
  return "?";
}

std::vector<std::string> mode_names() {
  std::vector<std::string> out;
  for (const auto& e : mode_table()) out.push_back(e.second);
  return out;
}

ExperimentConfig ExperimentConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IOError("cannot open config '" + path.string() + "'");
  ExperimentConfig c;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    }
    c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return c;
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  for (Field& f : fields(*this)) {
    if (f.key == key) {
      f.set(value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

std::vector<std::pair<std::string, std::string>> ExperimentConfig::entries() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (Field& f : fields(const_cast<ExperimentConfig&>(*this))) out.emplace_back(f.key, f.get());
  return out;
}

std::string ExperimentConfig::to_text() const {
  std::ostringstream os;
  for (const auto& [k, v] : entries()) os << k << " = " << v << '\n';
  return os.str();
}

ExperimentConfig ExperimentConfig::resolved() const {
  ExperimentConfig c = *this;
  switch (c.mode) {
    case Mode::vanilla_ppo:
    case Mode::bc_warmstart:
      c.proposal_passes = 0;
      c.pet.rate = 0;
      c.lambda_kl = 0.0;
      c.lambda_aux = 0.0;
      if (c.mode == Mode::bc_warmstart && c.warmstart_epochs == 0) c.warmstart_epochs = 20;
      break;
    case Mode::full:
      break;
    case Mode::no_vg:
      c.beta_final = 0.0;
      c.alpha_max = 0.0;
      break;
    case Mode::no_pet:
      c.pet.rate = 0;
      break;
    case Mode::prior_kl_only:
      c.lambda_aux = 0.0;
      break;
    case Mode::aux_bc_only:
      c.lambda_kl = 0.0;
      break;
    case Mode::diffusion_no_vg:
      c.beta_final = 0.0;
      c.alpha_max = 0.0;
      c.pet.rate = 0;
      break;
  }
  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  const auto envs = env_names();
  if (std::find(envs.begin(), envs.end(), env) == envs.end()) {
    throw ConfigError("unknown environment '" + env + "'");
  }
  parse_behavior(behavior);
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  if (budget <= 0) throw ConfigError("online budget must be positive");
  if (dataset_size < 0) throw ConfigError("dataset_size must be >= 0");
  schedule.validate();
  if (prior_arch.hidden.empty() || prior_arch.embedding_dim < 2 || prior_arch.embedding_dim % 2 != 0) {
    throw ConfigError("prior needs hidden layers and an even embedding dimension");
  }
  if (prior_train.batch_size < 1 || prior_train.steps < 0 || !(prior_train.lr > 0.0) ||
      !(prior_train.holdout_fraction > 0.0 && prior_train.holdout_fraction < 1.0)) {
    throw ConfigError("invalid prior training settings");
  }
  ppo.validate();
  if (proposals_k < 1 || proposal_passes < 0 || proposal_states < 1) {
    throw ConfigError("guidance needs k >= 1, passes >= 0, states >= 1");
  }
  if (!(beta_final >= 0.0) || !(beta_anneal >= 0.0)) throw ConfigError("beta settings must be >= 0");
  if (!(alpha_max >= 0.0) || !(grad_cap > 0.0)) throw ConfigError("alpha_max >= 0 and grad_cap > 0 required");
  if (filter.per_state < 1 || !(filter.share_cap >= 0.0 && filter.share_cap <= 0.2 + 1e-12)) {
    throw ConfigError("filter needs per_state >= 1 and share_cap in [0, 0.2]");
  }
  if (!(lambda_kl >= 0.0) || !(lambda_aux >= 0.0)) throw ConfigError("loss weights must be >= 0");
  PetConfig p = pet;
  p.rank = prior_arch.lora_rank;
  p.validate();
  if (monitor_states < 1 || proxy_fit.samples_per_state < 1 || proxy_fit.steps < 1 || !(proxy_fit.lr > 0.0)) {
    throw ConfigError("invalid monitor settings");
  }
  if (warmstart_epochs < 0 || !(warmstart_lr > 0.0)) throw ConfigError("invalid warm-start settings");
  if (!(eval_every > 0.0 && eval_every <= 1.0) || eval_episodes < 1 ||
      !(alc_fraction > 0.0 && alc_fraction <= 1.0)) {
    throw ConfigError("invalid evaluation settings");
  }
}

std::uint64_t ExperimentConfig::hash() const {
  return io::fnv1a(to_text());
}

bool ExperimentConfig::uses_prior() const {
  return proposal_passes > 0 || pet.rate > 0 || lambda_kl > 0.0 || lambda_aux > 0.0;
}

std::vector<std::string> config_diff(const ExperimentConfig& a, const ExperimentConfig& b) {
  const auto ea = a.entries(), eb = b.entries();
  std::vector<std::string> out;
  for (std::size_t i = 0; i < ea.size(); ++i) {
    if (ea[i].second != eb[i].second) out.push_back(ea[i].first);
  }
  return out;
}

}  // namespace ppodiff
