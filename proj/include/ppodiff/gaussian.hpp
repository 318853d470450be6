#pragma once

// Diagonal-Gaussian densities and divergences, in plain Eigen form (templated
// on the expression type) and as differentiable graph composites.

#include <Eigen/Dense>

#include <cmath>
#include <numbers>

#include "ppodiff/autodiff.hpp"

namespace ppodiff {

/// Row-wise log N(action | mean, diag(exp(logstd)^2)). All arguments n x d.
template <typename DerivedM, typename DerivedS, typename DerivedA>
Eigen::Matrix<typename DerivedM::Scalar, Eigen::Dynamic, 1> gaussian_log_prob(
    const Eigen::MatrixBase<DerivedM>& mean, const Eigen::MatrixBase<DerivedS>& logstd,
    const Eigen::MatrixBase<DerivedA>& action) {
  using Scalar = typename DerivedM::Scalar;
  if (mean.rows() != action.rows() || mean.cols() != action.cols() ||
      logstd.rows() != mean.rows() || logstd.cols() != mean.cols()) {
    throw ShapeError("gaussian_log_prob: shape mismatch");
  }
  const Scalar half_log_two_pi = Scalar(0.5) * std::log(Scalar(2) * std::numbers::pi_v<Scalar>);
  const auto z = ((action - mean).array() * (-logstd.array()).exp());
  return (Scalar(-0.5) * z.square() - logstd.array() - half_log_two_pi).matrix().rowwise().sum();
}

/// Row-wise KL(N1 || N0) for diagonal Gaussians given as means and variances.
template <typename D1, typename D2, typename D3, typename D4>
Eigen::Matrix<typename D1::Scalar, Eigen::Dynamic, 1> gaussian_kl_rows(
    const Eigen::MatrixBase<D1>& mean1, const Eigen::MatrixBase<D2>& var1,
    const Eigen::MatrixBase<D3>& mean0, const Eigen::MatrixBase<D4>& var0) {
  using Scalar = typename D1::Scalar;
  if (mean1.rows() != mean0.rows() || mean1.cols() != mean0.cols() ||
      var1.rows() != mean1.rows() || var1.cols() != mean1.cols() ||
      var0.rows() != mean1.rows() || var0.cols() != mean1.cols()) {
    throw ShapeError("gaussian_kl: shape mismatch");
  }
  if ((var1.array() <= Scalar(0)).any() || (var0.array() <= Scalar(0)).any()) {
    throw DomainError("gaussian_kl: variances must be positive");
  }
  const auto ratio = var1.array() / var0.array();
  const auto shift = (mean0 - mean1).array().square() / var0.array();
  return (Scalar(0.5) * (ratio + shift - Scalar(1) - ratio.log())).matrix().rowwise().sum();
}

/// KL(N1 || N0) summed over dimensions; a single-row (or single-vector) case.
template <typename D1, typename D2, typename D3, typename D4>
typename D1::Scalar gaussian_kl(const Eigen::MatrixBase<D1>& mean1,
                                const Eigen::MatrixBase<D2>& var1,
                                const Eigen::MatrixBase<D3>& mean0,
                                const Eigen::MatrixBase<D4>& var0) {
  return gaussian_kl_rows(mean1, var1, mean0, var0).sum();
}

namespace ad {

/// n x 1 log-densities; `action` may be a constant.
Var gaussian_log_prob(Var mean, Var logstd, Var action);

/// n x 1 KL(N(mean1, exp(2 logstd1)) || N(mean0, var0)) with the reference
/// distribution held constant.
Var gaussian_kl_to_fixed(Var mean1, Var logstd1, const Tensor& mean0, const Tensor& var0);

}  // namespace ad

}  // namespace ppodiff
