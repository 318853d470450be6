#pragma once

// Desk-scale continuous-control tasks and the logged-dataset generator.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "ppodiff/autodiff.hpp"
#include "ppodiff/nets.hpp"

namespace ppodiff {

struct EnvSpec {
  std::string name;
  Eigen::Index state_dim = 0;
  Eigen::Index action_dim = 0;
  double action_bound = 1.0;  // actions live in [-bound, bound]^d
  int horizon = 1;
  double gamma = 0.99;
  double reward_bound = 0.0;  // |r| <= reward_bound for every step
};

struct StepResult {
  RowVector next_state;
  double reward = 0.0;
  bool done = false;
};

RowVector clip_action(const RowVector& action, double bound);

/// Episodic environment. Dynamics are deterministic; the only randomness is in
/// reset(), drawn from an engine seeded at construction.
class Environment {
 public:
  virtual ~Environment() = default;

  virtual const EnvSpec& spec() const = 0;
  virtual std::unique_ptr<Environment> clone() const = 0;

  RowVector reset();
  /// Clips the action, advances one step, sets done at the horizon.
  StepResult step(const RowVector& action);

  const RowVector& state() const { return state_; }
  int elapsed() const { return elapsed_; }

 protected:
  explicit Environment(std::uint64_t seed) : rng_(seed) {}

  virtual RowVector initial_state(std::mt19937_64& rng) const = 0;
  /// Pure transition on a clipped action: returns (next_state, reward).
  virtual std::pair<RowVector, double> transition(const RowVector& state,
                                                  const RowVector& action) const = 0;

 private:
  std::mt19937_64 rng_;
  RowVector state_;
  int elapsed_ = 0;
};

/// 2-D double integrator steering toward the origin.
/// state = (px, py, vx, vy); v += a dt; p += v dt; positions held in [-2, 2].
class PointMass final : public Environment {
 public:
  static constexpr double kDt = 0.1;
  static constexpr double kArena = 2.0;

  explicit PointMass(std::uint64_t seed);
  const EnvSpec& spec() const override { return spec_; }
  std::unique_ptr<Environment> clone() const override;

  static std::pair<RowVector, double> dynamics(const RowVector& state, const RowVector& action);

 protected:
  RowVector initial_state(std::mt19937_64& rng) const override;
  std::pair<RowVector, double> transition(const RowVector& state,
                                          const RowVector& action) const override {
    return dynamics(state, action);
  }

 private:
  EnvSpec spec_;
};

/// Torque-limited swing-up; angle 0 is upright. state = (cos th, sin th, thdot).
class Pendulum final : public Environment {
 public:
  static constexpr double kDt = 0.05;
  static constexpr double kMaxTorque = 2.0;
  static constexpr double kMaxSpeed = 8.0;
  static constexpr double kGravity = 10.0;

  explicit Pendulum(std::uint64_t seed);
  const EnvSpec& spec() const override { return spec_; }
  std::unique_ptr<Environment> clone() const override;

  static std::pair<RowVector, double> dynamics(const RowVector& state, const RowVector& action);
  static double angle(const RowVector& state);

 protected:
  RowVector initial_state(std::mt19937_64& rng) const override;
  std::pair<RowVector, double> transition(const RowVector& state,
                                          const RowVector& action) const override {
    return dynamics(state, action);
  }

 private:
  EnvSpec spec_;
};

std::unique_ptr<Environment> make_env(std::string_view name, std::uint64_t seed);
std::vector<std::string> env_names();

enum class Behavior { random_uniform, mediocre_pd, noisy_expert };

Behavior parse_behavior(std::string_view name);
std::string behavior_name(Behavior b);

/// Scripted behavior policy for one episode; noise level fixed per episode.
class BehaviorPolicy {
 public:
  BehaviorPolicy(Behavior kind, const EnvSpec& spec, std::mt19937_64& rng);
  /// Returns (unclipped action, its log-density under the behavior).
  std::pair<RowVector, double> act(const RowVector& state, std::mt19937_64& rng) const;

 private:
  RowVector nominal(const RowVector& state) const;

  Behavior kind_;
  EnvSpec spec_;
  double noise_std_ = 0.0;
};

struct LoggedDataset {
  std::string env_name;
  std::string behavior;
  std::uint64_t seed = 0;
  Tensor states;       // n x S
  Tensor actions;      // n x A, clipped to bounds
  Vector rewards;      // n
  Tensor next_states;  // n x S
  std::vector<std::uint8_t> dones;
  Vector log_probs;  // behavior log-density of the pre-clip sample
  NormalizationStats stats;

  std::size_t size() const { return dones.size(); }
  /// Returns of the completed episodes, in order.
  std::vector<double> episode_returns() const;

  void save(const std::filesystem::path& path) const;
  static LoggedDataset load(const std::filesystem::path& path);
  void export_csv(const std::filesystem::path& path) const;
};

/// Per-column mean and population std (floored at 1e-6).
NormalizationStats compute_stats(const Tensor& states, const Tensor& actions);

LoggedDataset generate_logged_dataset(std::string_view env_name, Behavior behavior,
                                      std::size_t n_transitions, std::uint64_t seed);

}  // namespace ppodiff
