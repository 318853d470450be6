#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "ppodiff/autodiff.hpp"

namespace ppodiff {

/// Named, ordered collection of parameter tensors.
struct ParamSet {
  std::vector<std::string> names;
  std::vector<Tensor> values;

  std::size_t add(std::string name, Tensor value);
  std::size_t index(std::string_view name) const;
  std::size_t size() const { return values.size(); }
  std::size_t scalar_count() const;
  bool operator==(const ParamSet& other) const;
};

/// Puts every tensor of `params` on the graph, as variables or as constants.
std::vector<ad::Var> bind(ad::Graph& g, const ParamSet& params, bool trainable);

/// Gradients of bound vars after Graph::backward.
std::vector<Tensor> gradients(const std::vector<ad::Var>& bound);

double global_norm(const std::vector<Tensor>& tensors);

/// Rescales `grads` in place so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(std::vector<Tensor>& grads, double max_norm);

struct AdamState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::int64_t step = 0;
};

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

enum class StepStatus { applied, skipped_non_finite };

/// One Adam update. Non-finite gradients leave params and state untouched.
StepStatus adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
                     AdamState& state, double lr, const AdamOptions& options = {});

inline StepStatus adam_step(ParamSet& params, const std::vector<Tensor>& grads, AdamState& state,
                            double lr, const AdamOptions& options = {}) {
  return adam_step(params.values, grads, state, lr, options);
}

/// Plain gradient descent, same skip rule.
StepStatus sgd_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, double lr);

}  // namespace ppodiff
