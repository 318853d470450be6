#include "ppodiff/gaussian.hpp"

namespace ppodiff::ad {

Var gaussian_log_prob(Var mean, Var logstd, Var action) {
  const double half_log_two_pi = 0.5 * std::log(2.0 * std::numbers::pi);
  const double d = static_cast<double>(mean.cols());
  Var z = hadamard(action - mean, exp(-logstd));
  Var quad = row_sum(square(z));
  return -0.5 * quad - row_sum(logstd) + (-half_log_two_pi * d);
}

Var gaussian_kl_to_fixed(Var mean1, Var logstd1, const Tensor& mean0, const Tensor& var0) {
  Graph& g = *mean1.graph();
  if ((var0.array() <= 0.0).any()) throw DomainError("gaussian_kl: variances must be positive");
  Var inv_var0 = g.constant(var0.cwiseInverse());
  Var log_var0 = g.constant(var0.array().log().matrix());
  Var mu0 = g.constant(mean0);
  Var log_var1 = 2.0 * logstd1;
  Var ratio = hadamard(exp(log_var1), inv_var0);
  Var shift = hadamard(square(mu0 - mean1), inv_var0);
  Var per_dim = ratio + shift + (log_var0 - log_var1) - 1.0;
  return 0.5 * row_sum(per_dim);
}

}  // namespace ppodiff::ad
