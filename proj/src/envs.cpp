#include "ppodiff/envs.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numbers>

#include "ppodiff/gaussian.hpp"
#include "ppodiff/io.hpp"

namespace ppodiff {

RowVector clip_action(const RowVector& action, double bound) {
  return action.cwiseMax(-bound).cwiseMin(bound);
}

RowVector Environment::reset() {
  state_ = initial_state(rng_);
  elapsed_ = 0;
  return state_;
}

StepResult Environment::step(const RowVector& action) {
  const EnvSpec& s = spec();
  if (action.size() != s.action_dim) throw ShapeError("step: action has wrong width");
  if (state_.size() == 0) throw ConfigError("step called before reset");
  auto [next, reward] = transition(state_, clip_action(action, s.action_bound));
  state_ = next;
  ++elapsed_;
  return {std::move(next), reward, elapsed_ >= s.horizon};
}

// ---------------------------------------------------------------------------

PointMass::PointMass(std::uint64_t seed) : Environment(seed) {
  spec_.name = "pointmass";
  spec_.state_dim = 4;
  spec_.action_dim = 2;
  spec_.horizon = 100;
  spec_.gamma = 0.99;
  spec_.reward_bound = kArena * std::sqrt(2.0) + 0.01 * 2.0;
}

std::unique_ptr<Environment> PointMass::clone() const { return std::make_unique<PointMass>(*this); }

RowVector PointMass::initial_state(std::mt19937_64& rng) const {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  RowVector s(4);
  s << u(rng), u(rng), 0.0, 0.0;
  return s;
}

std::pair<RowVector, double> PointMass::dynamics(const RowVector& state, const RowVector& action) {
  RowVector next = state;
  for (int k = 0; k < 2; ++k) {
    next(2 + k) = state(2 + k) + action(k) * kDt;
    next(k) = state(k) + next(2 + k) * kDt;
    if (std::abs(next(k)) > kArena) {
      next(k) = std::copysign(kArena, next(k));
      next(2 + k) = 0.0;
    }
  }
  const double reward = -next.head(2).norm() - 0.01 * action.squaredNorm();
  return {next, reward};
}

// ---------------------------------------------------------------------------

Pendulum::Pendulum(std::uint64_t seed) : Environment(seed) {
  spec_.name = "pendulum";
  spec_.state_dim = 3;
  spec_.action_dim = 1;
  spec_.horizon = 200;
  spec_.gamma = 0.99;
  spec_.reward_bound = std::numbers::pi * std::numbers::pi + 0.1 * kMaxSpeed * kMaxSpeed + 0.001;
}

std::unique_ptr<Environment> Pendulum::clone() const { return std::make_unique<Pendulum>(*this); }

double Pendulum::angle(const RowVector& state) { return std::atan2(state(1), state(0)); }

RowVector Pendulum::initial_state(std::mt19937_64& rng) const {
  std::uniform_real_distribution<double> th(-std::numbers::pi, std::numbers::pi);
  std::uniform_real_distribution<double> vel(-1.0, 1.0);
  const double theta = th(rng);
  RowVector s(3);
  s << std::cos(theta), std::sin(theta), vel(rng);
  return s;
}

std::pair<RowVector, double> Pendulum::dynamics(const RowVector& state, const RowVector& action) {
  const double theta = angle(state);
  const double thdot = state(2);
  const double a = action(0);
  const double reward = -(theta * theta + 0.1 * thdot * thdot + 0.001 * a * a);
  const double torque = kMaxTorque * a;
  double new_thdot = thdot + (1.5 * kGravity * std::sin(theta) + 3.0 * torque) * kDt;
  new_thdot = std::clamp(new_thdot, -kMaxSpeed, kMaxSpeed);
  const double new_theta = theta + new_thdot * kDt;
  RowVector next(3);
  next << std::cos(new_theta), std::sin(new_theta), new_thdot;
  return {next, reward};
}

std::unique_ptr<Environment> make_env(std::string_view name, std::uint64_t seed) {
  if (name == "pointmass") return std::make_unique<PointMass>(seed);
  if (name == "pendulum") return std::make_unique<Pendulum>(seed);
  throw ConfigError("unknown environment '" + std::string(name) + "'");
}

std::vector<std::string> env_names() { return {"pointmass", "pendulum"}; }

// ---------------------------------------------------------------------------

Behavior parse_behavior(std::string_view name) {
  if (name == "random" || name == "random-uniform" || name == "random_uniform")
    return Behavior::random_uniform;
  if (name == "mediocre-pd" || name == "mediocre_pd" || name == "pd") return Behavior::mediocre_pd;
  if (name == "noisy-expert" || name == "noisy_expert" || name == "expert")
    return Behavior::noisy_expert;
  throw ConfigError("unknown behavior policy '" + std::string(name) + "'");
}

std::string behavior_name(Behavior b) {
  switch (b) {
    case Behavior::random_uniform:
      return "random-uniform";
    case Behavior::mediocre_pd:
      return "mediocre-pd";
    case Behavior::noisy_expert:
      return "noisy-expert";
  }
  return "unknown";
}

BehaviorPolicy::BehaviorPolicy(Behavior kind, const EnvSpec& spec, std::mt19937_64& rng)
    : kind_(kind), spec_(spec) {
  // Per-episode noise so the log mixes good and poor trajectories.
  if (kind == Behavior::mediocre_pd) {
    noise_std_ = std::uniform_real_distribution<double>(0.2, 0.6)(rng);
  } else if (kind == Behavior::noisy_expert) {
    noise_std_ = std::uniform_real_distribution<double>(0.05, 0.2)(rng);
  }
}

RowVector BehaviorPolicy::nominal(const RowVector& s) const {
  RowVector a = RowVector::Zero(spec_.action_dim);
  if (kind_ == Behavior::random_uniform) return a;
  const bool expert = kind_ == Behavior::noisy_expert;
  if (spec_.name == "pointmass") {
    const double kp = expert ? 3.0 : 1.0;
    const double kd = expert ? 2.5 : 0.6;
    a = -kp * s.head(2) - kd * s.segment(2, 2);
  } else {
    const double theta = Pendulum::angle(s);
    const double thdot = s(2);
    if (!expert || std::abs(theta) < 0.6) {
      const double torque = -(10.0 * theta + 2.0 * thdot);
      a(0) = torque / Pendulum::kMaxTorque;
    } else {
      // Energy pumping toward the upright rest energy.
      const double energy = 0.5 * thdot * thdot + 1.5 * Pendulum::kGravity * std::cos(theta);
      const double target = 1.5 * Pendulum::kGravity;
      const double dir = thdot >= 0.0 ? 1.0 : -1.0;
      a(0) = 0.5 * (target - energy) * dir;
    }
  }
  return clip_action(a, spec_.action_bound);
}

std::pair<RowVector, double> BehaviorPolicy::act(const RowVector& state,
                                                 std::mt19937_64& rng) const {
  const auto d = static_cast<double>(spec_.action_dim);
  if (kind_ == Behavior::random_uniform) {
    std::uniform_real_distribution<double> u(-spec_.action_bound, spec_.action_bound);
    RowVector a(spec_.action_dim);
    for (Eigen::Index i = 0; i < a.size(); ++i) a(i) = u(rng);
    return {a, -d * std::log(2.0 * spec_.action_bound)};
  }
  const RowVector mean = nominal(state);
  std::normal_distribution<double> n(0.0, 1.0);
  RowVector a(spec_.action_dim);
  for (Eigen::Index i = 0; i < a.size(); ++i) a(i) = mean(i) + noise_std_ * n(rng);
  const RowVector logstd = RowVector::Constant(spec_.action_dim, std::log(noise_std_));
  return {a, gaussian_log_prob(mean, logstd, a)(0)};
}

// ---------------------------------------------------------------------------

NormalizationStats compute_stats(const Tensor& states, const Tensor& actions) {
  auto column_stats = [](const Tensor& x, RowVector& mean, RowVector& std) {
    if (x.rows() == 0) {
      mean = RowVector::Zero(x.cols());
      std = RowVector::Ones(x.cols());
      return;
    }
    mean = x.colwise().mean();
    const Tensor centered = x.rowwise() - mean;
    std = (centered.array().square().colwise().sum() / static_cast<double>(x.rows())).sqrt();
    std = std.cwiseMax(1e-6);
  };
  NormalizationStats s;
  column_stats(states, s.state_mean, s.state_std);
  column_stats(actions, s.action_mean, s.action_std);
  return s;
}

std::vector<double> LoggedDataset::episode_returns() const {
  std::vector<double> out;
  double acc = 0.0;
  for (std::size_t i = 0; i < size(); ++i) {
    acc += rewards(static_cast<Eigen::Index>(i));
    if (dones[i]) {
      out.push_back(acc);
      acc = 0.0;
    }
  }
  return out;
}

LoggedDataset generate_logged_dataset(std::string_view env_name, Behavior behavior,
                                      std::size_t n_transitions, std::uint64_t seed) {
  auto env = make_env(env_name, seed);
  const EnvSpec& spec = env->spec();
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const auto n = static_cast<Eigen::Index>(n_transitions);

  LoggedDataset ds;
  ds.env_name = spec.name;
  ds.behavior = behavior_name(behavior);
  ds.seed = seed;
  ds.states.resize(n, spec.state_dim);
  ds.actions.resize(n, spec.action_dim);
  ds.rewards.resize(n);
  ds.next_states.resize(n, spec.state_dim);
  ds.dones.resize(n_transitions);
  ds.log_probs.resize(n);

  RowVector s = env->reset();
  BehaviorPolicy policy(behavior, spec, rng);
  for (Eigen::Index i = 0; i < n; ++i) {
    auto [a, logp] = policy.act(s, rng);
    const RowVector clipped = clip_action(a, spec.action_bound);
    StepResult r = env->step(clipped);
    ds.states.row(i) = s;
    ds.actions.row(i) = clipped;
    ds.rewards(i) = r.reward;
    ds.next_states.row(i) = r.next_state;
    ds.dones[static_cast<std::size_t>(i)] = r.done ? 1 : 0;
    ds.log_probs(i) = logp;
    if (r.done) {
      s = env->reset();
      policy = BehaviorPolicy(behavior, spec, rng);
    } else {
      s = r.next_state;
    }
  }
  ds.stats = compute_stats(ds.states, ds.actions);
  return ds;
}

namespace {

constexpr char kDatasetMagic[8] = {'P', 'D', 'D', 'S', 'E', 'T', '0', '1'};
constexpr std::uint32_t kDatasetVersion = 1;

void write_raw_row(io::BinaryWriter& w, const RowVector& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) w.f64(v(i));
}

RowVector read_raw_row(io::BinaryReader& r, Eigen::Index n) {
  RowVector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = r.f64();
  return v;
}

}  // namespace

void LoggedDataset::save(const std::filesystem::path& path) const {
  const Eigen::Index sd = states.cols(), ad = actions.cols();
  io::BinaryWriter w;
  w.bytes(kDatasetMagic, sizeof kDatasetMagic);
  w.u32(kDatasetVersion);
  w.string(env_name);
  w.string(behavior);
  w.u32(static_cast<std::uint32_t>(sd));
  w.u32(static_cast<std::uint32_t>(ad));
  w.u64(size());
  w.u64(seed);
  write_raw_row(w, stats.state_mean);
  write_raw_row(w, stats.state_std);
  write_raw_row(w, stats.action_mean);
  write_raw_row(w, stats.action_std);
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(size()); ++i) {
    write_raw_row(w, states.row(i));
    write_raw_row(w, actions.row(i));
    w.f64(rewards(i));
    write_raw_row(w, next_states.row(i));
    w.u8(dones[static_cast<std::size_t>(i)]);
    w.f64(log_probs(i));
  }
  w.save(path);
}

LoggedDataset LoggedDataset::load(const std::filesystem::path& path) {
  io::BinaryReader r = io::BinaryReader::open(path);
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kDatasetMagic, sizeof magic) != 0) {
    throw IOError("'" + path.string() + "' is not a dataset file");
  }
  if (r.u32() != kDatasetVersion) throw IOError("unsupported dataset version");
  LoggedDataset ds;
  ds.env_name = r.string();
  ds.behavior = r.string();
  const Eigen::Index sd = r.u32(), ad = r.u32();
  const auto n = static_cast<Eigen::Index>(r.u64());
  ds.seed = r.u64();
  ds.stats.state_mean = read_raw_row(r, sd);
  ds.stats.state_std = read_raw_row(r, sd);
  ds.stats.action_mean = read_raw_row(r, ad);
  ds.stats.action_std = read_raw_row(r, ad);
  ds.states.resize(n, sd);
  ds.actions.resize(n, ad);
  ds.rewards.resize(n);
  ds.next_states.resize(n, sd);
  ds.dones.resize(static_cast<std::size_t>(n));
  ds.log_probs.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    ds.states.row(i) = read_raw_row(r, sd);
    ds.actions.row(i) = read_raw_row(r, ad);
    ds.rewards(i) = r.f64();
    ds.next_states.row(i) = read_raw_row(r, sd);
    ds.dones[static_cast<std::size_t>(i)] = r.u8();
    ds.log_probs(i) = r.f64();
  }
  if (!r.at_end()) throw IOError("trailing bytes in dataset file");
  return ds;
}

void LoggedDataset::export_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IOError("cannot open '" + path.string() + "' for writing");
  out << std::setprecision(17);
  const Eigen::Index sd = states.cols(), ad = actions.cols();
  for (Eigen::Index j = 0; j < sd; ++j) out << "s" << j << ",";
  for (Eigen::Index j = 0; j < ad; ++j) out << "a" << j << ",";
  out << "r,";
  for (Eigen::Index j = 0; j < sd; ++j) out << "next_s" << j << ",";
  out << "done,log_prob\n";
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(size()); ++i) {
    for (Eigen::Index j = 0; j < sd; ++j) out << states(i, j) << ",";
    for (Eigen::Index j = 0; j < ad; ++j) out << actions(i, j) << ",";
    out << rewards(i) << ",";
    for (Eigen::Index j = 0; j < sd; ++j) out << next_states(i, j) << ",";
    out << static_cast<int>(dones[static_cast<std::size_t>(i)]) << "," << log_probs(i) << "\n";
  }
}

}  // namespace ppodiff
