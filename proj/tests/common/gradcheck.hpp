#pragma once

// Central finite-difference checker shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "ppodiff/autodiff.hpp"

namespace testutil {

using ppodiff::Tensor;
namespace ad = ppodiff::ad;

/// Builds a scalar loss from bound inputs on a fresh graph.
using LossFn = std::function<ad::Var(ad::Graph&, const std::vector<ad::Var>&)>;

struct GradCheck {
  double max_error = 0.0;  // max |g - fd| / max(1, |g|)
  std::size_t checked = 0;
};

inline double eval_loss(const LossFn& f, const std::vector<Tensor>& inputs) {
  ad::Graph g;
  std::vector<ad::Var> vars;
  for (const Tensor& t : inputs) vars.push_back(g.constant(t));
  return f(g, vars).scalar();
}

inline GradCheck gradcheck(const LossFn& f, const std::vector<Tensor>& inputs, double h = 1e-5) {
  ad::Graph g;
  std::vector<ad::Var> vars;
  for (const Tensor& t : inputs) vars.push_back(g.variable(t));
  ad::Var loss = f(g, vars);
  g.backward(loss);

  GradCheck out;
  std::vector<Tensor> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor analytic = vars[k].grad();
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      const double x0 = probe[k](i);
      probe[k](i) = x0 + h;
      const double up = eval_loss(f, probe);
      probe[k](i) = x0 - h;
      const double down = eval_loss(f, probe);
      probe[k](i) = x0;
      const double fd = (up - down) / (2.0 * h);
      const double err = std::abs(analytic(i) - fd) / std::max(1.0, std::abs(analytic(i)));
      out.max_error = std::max(out.max_error, err);
      ++out.checked;
    }
  }
  return out;
}

inline Tensor uniform(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double lo = -1.0,
                      double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(r, c);
  for (Eigen::Index i = 0; i < t.size(); ++i) t(i) = u(rng);
  return t;
}

/// Entries uniform on [lo, hi] but at least `gap` away from each of `kinks`.
inline Tensor uniform_away(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double lo,
                           double hi, std::vector<double> kinks, double gap = 1e-3) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(r, c);
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    double v;
    do {
      v = u(rng);
    } while (std::any_of(kinks.begin(), kinks.end(), [&](double k) { return std::abs(v - k) < gap; }));
    t(i) = v;
  }
  return t;
}

}  // namespace testutil
