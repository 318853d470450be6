#include "ppodiff/optim.hpp"

#include <cmath>

namespace ppodiff {

std::size_t ParamSet::add(std::string name, Tensor value) {
  names.push_back(std::move(name));
  values.push_back(std::move(value));
  return values.size() - 1;
}

std::size_t ParamSet::index(std::string_view name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return i;
  }
  throw ConfigError("unknown parameter '" + std::string(name) + "'");
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const Tensor& t : values) n += static_cast<std::size_t>(t.size());
  return n;
}

bool ParamSet::operator==(const ParamSet& other) const {
  if (names != other.names || values.size() != other.values.size()) return false;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i].rows() != other.values[i].rows() || values[i].cols() != other.values[i].cols())
      return false;
    if (!(values[i].array() == other.values[i].array()).all()) return false;
  }
  return true;
}

std::vector<ad::Var> bind(ad::Graph& g, const ParamSet& params, bool trainable) {
  std::vector<ad::Var> out;
  out.reserve(params.size());
  for (const Tensor& t : params.values) out.push_back(trainable ? g.variable(t) : g.constant(t));
  return out;
}

std::vector<Tensor> gradients(const std::vector<ad::Var>& bound) {
  std::vector<Tensor> out;
  out.reserve(bound.size());
  for (const ad::Var& v : bound) out.push_back(v.grad());
  return out;
}

double global_norm(const std::vector<Tensor>& tensors) {
  double sq = 0.0;
  for (const Tensor& t : tensors) sq += t.squaredNorm();
  return std::sqrt(sq);
}

double clip_grad_norm(std::vector<Tensor>& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (Tensor& g : grads) g *= scale;
  }
  return norm;
}

namespace {

bool all_finite(const std::vector<Tensor>& grads) {
  for (const Tensor& g : grads) {
    if (!g.allFinite()) return false;
  }
  return true;
}

void require_aligned(const std::vector<Tensor>& params, const std::vector<Tensor>& grads) {
  if (params.size() != grads.size()) throw ShapeError("optimizer: param/grad count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].rows() != grads[i].rows() || params[i].cols() != grads[i].cols()) {
      throw ShapeError("optimizer: param/grad shape mismatch at index " + std::to_string(i));
    }
  }
}

}  // namespace

StepStatus adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
                     AdamState& state, double lr, const AdamOptions& options) {
  require_aligned(params, grads);
  if (!all_finite(grads)) return StepStatus::skipped_non_finite;
  if (state.first_moment.empty()) {
    for (const Tensor& p : params) {
      state.first_moment.push_back(Tensor::Zero(p.rows(), p.cols()));
      state.second_moment.push_back(Tensor::Zero(p.rows(), p.cols()));
    }
  } else if (state.first_moment.size() != params.size()) {
    throw ShapeError("optimizer: state does not match parameter list");
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(options.beta1, t);
  const double bias2 = 1.0 - std::pow(options.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    m = options.beta1 * m + (1.0 - options.beta1) * grads[i];
    v = options.beta2 * v + (1.0 - options.beta2) * grads[i].cwiseAbs2();
    params[i].array() -=
        lr * (m.array() / bias1) / ((v.array() / bias2).sqrt() + options.epsilon);
  }
  return StepStatus::applied;
}

StepStatus sgd_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, double lr) {
  require_aligned(params, grads);
  if (!all_finite(grads)) return StepStatus::skipped_non_finite;
  for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grads[i];
  return StepStatus::applied;
}

}  // namespace ppodiff
