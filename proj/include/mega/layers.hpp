#pragma once

#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "mega/genotype.hpp"

namespace mega {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

enum class Activation { relu, identity };

/// Affine map y = W x + b applied column-wise to a batch.
template <typename Scalar>
struct DenseLayer {
  Matrix<Scalar> weight;  // out x in
  Vector<Scalar> bias;

  Eigen::Index in_dim() const { return weight.cols(); }
  Eigen::Index out_dim() const { return weight.rows(); }

  static DenseLayer zeros(Eigen::Index in, Eigen::Index out) {
    return {Matrix<Scalar>::Zero(out, in), Vector<Scalar>::Zero(out)};
  }

  /// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for weights and biases.
  static DenseLayer uniform(Eigen::Index in, Eigen::Index out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    DenseLayer layer = zeros(in, out);
    for (Eigen::Index c = 0; c < in; ++c)
      for (Eigen::Index r = 0; r < out; ++r) layer.weight(r, c) = static_cast<Scalar>(dist(rng));
    for (Eigen::Index r = 0; r < out; ++r) layer.bias[r] = static_cast<Scalar>(dist(rng));
    return layer;
  }

  DenseLayer zeros_like() const { return zeros(in_dim(), out_dim()); }

  template <typename Derived>
  Matrix<Scalar> apply(const Eigen::MatrixBase<Derived>& x) const {
    Matrix<Scalar> y = weight * x;
    y.colwise() += bias;
    return y;
  }

  bool operator==(const DenseLayer& o) const {
    return weight.rows() == o.weight.rows() && weight.cols() == o.weight.cols() && weight == o.weight &&
           bias == o.bias;
  }
};

template <typename Scalar>
Matrix<Scalar> activate(const Matrix<Scalar>& pre, Activation act) {
  if (act == Activation::identity) return pre;
  return pre.cwiseMax(Scalar(0));
}

/// Multiplies an upstream gradient by the activation derivative at `pre`.
template <typename Scalar>
Matrix<Scalar> activation_backward(const Matrix<Scalar>& grad, const Matrix<Scalar>& pre, Activation act) {
  if (act == Activation::identity) return grad;
  return (pre.array() > Scalar(0)).select(grad, Scalar(0));
}

/// Accumulates dL/dW, dL/db into `grads` and returns dL/dx.
template <typename Scalar>
Matrix<Scalar> dense_backward(const DenseLayer<Scalar>& layer, const Matrix<Scalar>& input,
                              const Matrix<Scalar>& grad_out, DenseLayer<Scalar>& grads) {
  grads.weight.noalias() += grad_out * input.transpose();
  grads.bias += grad_out.rowwise().sum();
  return layer.weight.transpose() * grad_out;
}

// Parameter containers expose their layers in declaration order through
// layers(); the helpers below work on any such container.

template <typename Params>
Params zeros_like(const Params& params) {
  Params out = params;
  for (auto* layer : out.layers()) {
    layer->weight.setZero();
    layer->bias.setZero();
  }
  return out;
}

/// target <- (1 - tau) target + tau online, elementwise.
template <typename Params>
void soft_update(const Params& online, Params& target, double tau) {
  auto src = online.layers();
  auto dst = target.layers();
  if (src.size() != dst.size()) throw StructuralError("soft_update: layer count mismatch");
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i]->weight.rows() != dst[i]->weight.rows() || src[i]->weight.cols() != dst[i]->weight.cols()) {
      throw StructuralError("soft_update: layer shape mismatch");
    }
    dst[i]->weight = (1.0 - tau) * dst[i]->weight + tau * src[i]->weight;
    dst[i]->bias = (1.0 - tau) * dst[i]->bias + tau * src[i]->bias;
  }
}

template <typename Params>
bool all_finite(const Params& params) {
  for (const auto* layer : params.layers()) {
    if (!layer->weight.allFinite() || !layer->bias.allFinite()) return false;
  }
  return true;
}

/// Plain multilayer perceptron: ReLU between layers, linear output.
template <typename Scalar>
struct Mlp {
  std::vector<DenseLayer<Scalar>> dense;

  static Mlp make(const std::vector<Eigen::Index>& widths, Rng& rng) {
    Mlp m;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
      m.dense.push_back(DenseLayer<Scalar>::uniform(widths[i], widths[i + 1], rng));
    }
    return m;
  }

  std::vector<DenseLayer<Scalar>*> layers() {
    std::vector<DenseLayer<Scalar>*> out;
    for (auto& l : dense) out.push_back(&l);
    return out;
  }
  std::vector<const DenseLayer<Scalar>*> layers() const {
    std::vector<const DenseLayer<Scalar>*> out;
    for (const auto& l : dense) out.push_back(&l);
    return out;
  }

  Eigen::Index in_dim() const { return dense.front().in_dim(); }
  Eigen::Index out_dim() const { return dense.back().out_dim(); }

  bool operator==(const Mlp&) const = default;

  struct Trace {
    std::vector<Matrix<Scalar>> inputs;  // input to each layer
    std::vector<Matrix<Scalar>> pre;     // pre-activation of each layer
  };

  Matrix<Scalar> forward(const Matrix<Scalar>& x, Trace* trace = nullptr) const {
    Matrix<Scalar> h = x;
    for (std::size_t i = 0; i < dense.size(); ++i) {
      Matrix<Scalar> pre = dense[i].apply(h);
      if (trace) {
        trace->inputs.push_back(std::move(h));
        trace->pre.push_back(pre);
      }
      h = (i + 1 < dense.size()) ? activate(pre, Activation::relu) : std::move(pre);
    }
    return h;
  }

  /// dL/dx alone, without forming parameter gradients.
  Matrix<Scalar> input_gradient(const Trace& trace, const Matrix<Scalar>& grad_out) const {
    Matrix<Scalar> g = grad_out;
    for (std::size_t k = dense.size(); k-- > 0;) {
      if (k + 1 < dense.size()) g = activation_backward(g, trace.pre[k], Activation::relu);
      g = dense[k].weight.transpose() * g;
    }
    return g;
  }

  /// Accumulates parameter gradients into `grads`, returns dL/dx.
  Matrix<Scalar> backward(const Trace& trace, const Matrix<Scalar>& grad_out, Mlp& grads) const {
    Matrix<Scalar> g = grad_out;
    for (std::size_t k = dense.size(); k-- > 0;) {
      if (k + 1 < dense.size()) g = activation_backward(g, trace.pre[k], Activation::relu);
      g = dense_backward(dense[k], trace.inputs[k], g, grads.dense[k]);
    }
    return g;
  }
};

/// Adam over any parameter container with layers().
template <typename Params>
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(Params& params, const Params& grads) {
    auto p = params.layers();
    auto g = grads.layers();
    if (p.size() != g.size()) throw StructuralError("Adam: gradient layer count mismatch");
    // Parameters may have grown since the last step; new layers start with
    // zero moments.
    while (first_.size() < p.size()) {
      first_.push_back(p[first_.size()]->zeros_like());
      second_.push_back(p[second_.size()]->zeros_like());
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < p.size(); ++i) {
      update(p[i]->weight, g[i]->weight, first_[i].weight, second_[i].weight, c1, c2);
      update(p[i]->bias, g[i]->bias, first_[i].bias, second_[i].bias, c1, c2);
    }
  }

  long steps() const { return t_; }

 private:
  using Layer = std::remove_pointer_t<typename decltype(std::declval<Params&>().layers())::value_type>;

  template <typename T>
  void update(T& param, const T& grad, T& m, T& v, double c1, double c2) {
    m = beta1_ * m + (1.0 - beta1_) * grad;
    v = beta2_ * v + (1.0 - beta2_) * grad.cwiseProduct(grad);
    param.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
  }

  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Layer> first_, second_;
};

/// Adam for a single scalar parameter (the entropy temperature).
class ScalarAdam {
 public:
  explicit ScalarAdam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(double& param, double grad) {
    ++t_;
    m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
    v_ = beta2_ * v_ + (1.0 - beta2_) * grad * grad;
    const double mhat = m_ / (1.0 - std::pow(beta1_, static_cast<double>(t_)));
    const double vhat = v_ / (1.0 - std::pow(beta2_, static_cast<double>(t_)));
    param -= lr_ * mhat / (std::sqrt(vhat) + eps_);
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  double m_ = 0.0, v_ = 0.0;
  long t_ = 0;
};

}  // namespace mega
