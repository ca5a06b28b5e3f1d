#pragma once

#include <cmath>
#include <numbers>
#include <random>

#include "mega/layers.hpp"

namespace mega {

/// tanh-squashed diagonal Gaussian sample, batched by column.
template <typename Scalar>
struct PolicySample {
  Matrix<Scalar> noise;     // standard-normal draw
  Matrix<Scalar> pre_tanh;  // mean + std * noise
  Matrix<Scalar> action;    // tanh(pre_tanh), in (-1, 1)
  Matrix<Scalar> log_prob;  // 1 x batch
};

template <typename Scalar>
Matrix<Scalar> standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix<Scalar> out(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) out(r, c) = static_cast<Scalar>(normal(rng));
  return out;
}

/// log(1 - tanh(u)^2), evaluated without cancellation for large |u|.
template <typename Scalar>
Scalar log_one_minus_tanh_sq(Scalar u) {
  using std::exp;
  using std::log1p;
  const Scalar x = Scalar(-2) * u;
  const Scalar softplus = x > Scalar(0) ? x + log1p(exp(-x)) : log1p(exp(x));
  return Scalar(2) * (Scalar(std::numbers::ln2) - u - softplus);
}

template <typename Scalar>
PolicySample<Scalar> squash_with_noise(const Matrix<Scalar>& mean, const Matrix<Scalar>& log_std,
                                       const Matrix<Scalar>& noise) {
  PolicySample<Scalar> s;
  s.noise = noise;
  s.pre_tanh = mean + (log_std.array().exp() * noise.array()).matrix();
  s.action = s.pre_tanh.array().tanh().matrix();
  const Scalar half_log_2pi = Scalar(0.5 * std::log(2.0 * std::numbers::pi));
  s.log_prob.resize(1, mean.cols());
  for (Eigen::Index c = 0; c < mean.cols(); ++c) {
    Scalar lp = 0;
    for (Eigen::Index r = 0; r < mean.rows(); ++r) {
      const Scalar xi = noise(r, c);
      lp += Scalar(-0.5) * xi * xi - log_std(r, c) - half_log_2pi - log_one_minus_tanh_sq(s.pre_tanh(r, c));
    }
    s.log_prob(0, c) = lp;
  }
  return s;
}

/// Reparameterized sample: action = tanh(mean + exp(log_std) * xi).
template <typename Scalar>
PolicySample<Scalar> sample_action(const Matrix<Scalar>& mean, const Matrix<Scalar>& log_std, Rng& rng) {
  return squash_with_noise(mean, log_std, standard_normal<Scalar>(mean.rows(), mean.cols(), rng));
}

template <typename Scalar>
struct SampleGrads {
  Matrix<Scalar> mean;
  Matrix<Scalar> log_std;
};

/// Pulls gradients on the action and on log_prob back to mean and log-std,
/// holding the noise fixed.
template <typename Scalar>
SampleGrads<Scalar> squash_backward(const PolicySample<Scalar>& s, const Matrix<Scalar>& log_std,
                                    const Matrix<Scalar>& grad_action, const Matrix<Scalar>& grad_log_prob) {
  const auto a = s.action.array();
  const auto dadu = Scalar(1) - a * a;
  const auto sigma_xi = log_std.array().exp() * s.noise.array();
  const auto glp = grad_log_prob.replicate(s.action.rows(), 1).array();
  // d log_prob / du = 2 tanh(u); d log_prob / d log_std has an extra -1.
  Matrix<Scalar> grad_u = (grad_action.array() * dadu + glp * Scalar(2) * a).matrix();
  SampleGrads<Scalar> g;
  g.mean = grad_u;
  g.log_std = (grad_u.array() * sigma_xi - glp).matrix();
  return g;
}

}  // namespace mega
