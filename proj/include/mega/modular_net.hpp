#pragma once

#include <string>
#include <vector>

#include "mega/genotype.hpp"
#include "mega/layers.hpp"

namespace mega {

/// Widths of the module-level actor. Module input and output share
/// `module_dim` so any module can consume any earlier output.
struct NetDims {
  int state_dim = 0;
  int action_dim = 0;
  int module_dim = 32;
  int embed_hidden = 32;
  int module_hidden = 16;

  bool operator==(const NetDims&) const = default;
};

template <typename Scalar>
struct ModuleParams {
  DenseLayer<Scalar> hidden;  // D -> h_m
  DenseLayer<Scalar> output;  // h_m -> D

  bool operator==(const ModuleParams&) const = default;
};

/// All trainable parameters of the actor. layers() lists the fixed layers
/// first (embedding, head) so positions stay stable as modules are appended.
template <typename Scalar>
struct ActorParams {
  DenseLayer<Scalar> embed_in;
  DenseLayer<Scalar> embed_out;
  std::vector<ModuleParams<Scalar>> modules;
  DenseLayer<Scalar> head;

  std::vector<DenseLayer<Scalar>*> layers() {
    std::vector<DenseLayer<Scalar>*> out{&embed_in, &embed_out, &head};
    for (auto& m : modules) {
      out.push_back(&m.hidden);
      out.push_back(&m.output);
    }
    return out;
  }
  std::vector<const DenseLayer<Scalar>*> layers() const {
    std::vector<const DenseLayer<Scalar>*> out{&embed_in, &embed_out, &head};
    for (const auto& m : modules) {
      out.push_back(&m.hidden);
      out.push_back(&m.output);
    }
    return out;
  }

  bool operator==(const ActorParams&) const = default;
};

template <typename Scalar>
using ParamGrads = ActorParams<Scalar>;

/// Cached activations of one batched forward pass. Columns are samples.
template <typename Scalar>
struct ForwardTrace {
  Matrix<Scalar> state;
  Matrix<Scalar> embed_hidden_pre;
  Matrix<Scalar> embed_hidden;
  Matrix<Scalar> embed_out_pre;
  std::vector<Matrix<Scalar>> outputs;        // m_0 .. m_K
  std::vector<Matrix<Scalar>> module_inputs;  // input to modules 1..K
  std::vector<Matrix<Scalar>> hidden_pre;
  std::vector<Matrix<Scalar>> hidden;
  std::vector<Matrix<Scalar>> output_pre;
  Matrix<Scalar> head_out;  // raw (mean, log-std) before clamping
  WeightPlan plan;

  int depth() const { return plan.depth(); }
};

template <typename Scalar>
struct ActorOutput {
  Matrix<Scalar> mean;     // action_dim x batch
  Matrix<Scalar> log_std;  // clamped, action_dim x batch
  ForwardTrace<Scalar> trace;
};

/// Growable module-level actor: embedding -> genotype-weighted DAG of
/// module MLPs -> Gaussian head.
template <typename Scalar>
class ModularActorNet {
 public:
  ModularActorNet() = default;

  ModularActorNet(const NetDims& dims, int module_count, Rng& rng, Activation activation = Activation::relu)
      : dims_(dims), activation_(activation) {
    if (dims.state_dim < 1 || dims.action_dim < 1 || dims.module_dim < 1 || dims.embed_hidden < 1 ||
        dims.module_hidden < 1) {
      throw ConfigError("ModularActorNet: all dimensions must be positive");
    }
    params_.embed_in = DenseLayer<Scalar>::uniform(dims.state_dim, dims.embed_hidden, rng);
    params_.embed_out = DenseLayer<Scalar>::uniform(dims.embed_hidden, dims.module_dim, rng);
    params_.head = DenseLayer<Scalar>::uniform(dims.module_dim, 2 * dims.action_dim, rng);
    for (int i = 0; i < module_count; ++i) add_module(rng);
  }

  const NetDims& dims() const { return dims_; }
  Activation activation() const { return activation_; }
  int module_count() const { return static_cast<int>(params_.modules.size()); }

  ActorParams<Scalar>& params() { return params_; }
  const ActorParams<Scalar>& params() const { return params_; }

  double log_std_min = -20.0;
  double log_std_max = 2.0;

  /// Appends one freshly initialized module. Existing parameters are left
  /// untouched; the new module draws only from `rng`.
  void add_module(Rng& rng) {
    ModuleParams<Scalar> m;
    m.hidden = DenseLayer<Scalar>::uniform(dims_.module_dim, dims_.module_hidden, rng);
    m.output = DenseLayer<Scalar>::uniform(dims_.module_hidden, dims_.module_dim, rng);
    params_.modules.push_back(std::move(m));
  }

  /// Batched forward pass; `state` is state_dim x batch.
  ActorOutput<Scalar> forward(const Matrix<Scalar>& state, const WeightPlan& plan) const {
    const int depth = plan.depth();
    if (depth < 1) throw StructuralError("forward: empty weight plan");
    if (depth > module_count()) {
      throw StructuralError("forward: plan addresses " + std::to_string(depth) + " modules but the network has " +
                            std::to_string(module_count()));
    }
    if (state.rows() != dims_.state_dim) throw StructuralError("forward: state dimension mismatch");

    ActorOutput<Scalar> out;
    auto& tr = out.trace;
    tr.plan = plan;
    tr.state = state;
    tr.embed_hidden_pre = params_.embed_in.apply(state);
    tr.embed_hidden = activate(tr.embed_hidden_pre, activation_);
    tr.embed_out_pre = params_.embed_out.apply(tr.embed_hidden);
    tr.outputs.push_back(activate(tr.embed_out_pre, activation_));

    for (int i = 1; i <= depth; ++i) {
      const auto& row = plan.rows[static_cast<std::size_t>(i - 1)];
      if (row.size() != i) throw StructuralError("forward: plan row has wrong width");
      Matrix<Scalar> input = static_cast<Scalar>(row[0]) * tr.outputs[0];
      for (int j = 1; j < i; ++j) input += static_cast<Scalar>(row[j]) * tr.outputs[static_cast<std::size_t>(j)];
      const auto& mod = params_.modules[static_cast<std::size_t>(i - 1)];
      Matrix<Scalar> hpre = mod.hidden.apply(input);
      Matrix<Scalar> h = activate(hpre, activation_);
      Matrix<Scalar> opre = mod.output.apply(h);
      tr.outputs.push_back(activate(opre, activation_));
      tr.module_inputs.push_back(std::move(input));
      tr.hidden_pre.push_back(std::move(hpre));
      tr.hidden.push_back(std::move(h));
      tr.output_pre.push_back(std::move(opre));
    }

    tr.head_out = params_.head.apply(tr.outputs.back());
    const auto a = dims_.action_dim;
    out.mean = tr.head_out.topRows(a);
    out.log_std = tr.head_out.bottomRows(a).cwiseMax(Scalar(log_std_min)).cwiseMin(Scalar(log_std_max));
    return out;
  }

  /// Gradient of sum(head_out .* grad_head_out) with respect to every
  /// parameter. `grad_head_out` is taken against the raw head output; use
  /// head_gradient() to fold in the log-std clamp. Plan weights are constants.
  ParamGrads<Scalar> backward(const ForwardTrace<Scalar>& tr, const Matrix<Scalar>& grad_head_out) const {
    const int depth = tr.depth();
    if (depth > module_count() || static_cast<int>(tr.outputs.size()) != depth + 1) {
      throw StructuralError("backward: trace does not belong to this network");
    }
    if (grad_head_out.rows() != 2 * dims_.action_dim || grad_head_out.cols() != tr.head_out.cols()) {
      throw StructuralError("backward: head gradient shape mismatch");
    }

    ParamGrads<Scalar> grads = zeros_like(params_);
    std::vector<Matrix<Scalar>> grad_m(static_cast<std::size_t>(depth + 1));
    for (auto& g : grad_m) g = Matrix<Scalar>::Zero(dims_.module_dim, grad_head_out.cols());

    grad_m.back() = dense_backward(params_.head, tr.outputs.back(), grad_head_out, grads.head);

    for (int i = depth; i >= 1; --i) {
      const auto k = static_cast<std::size_t>(i - 1);
      const auto& mod = params_.modules[k];
      auto& gmod = grads.modules[k];
      Matrix<Scalar> g = activation_backward(grad_m[static_cast<std::size_t>(i)], tr.output_pre[k], activation_);
      g = dense_backward(mod.output, tr.hidden[k], g, gmod.output);
      g = activation_backward(g, tr.hidden_pre[k], activation_);
      g = dense_backward(mod.hidden, tr.module_inputs[k], g, gmod.hidden);
      const auto& row = tr.plan.rows[k];
      for (int j = 0; j < i; ++j) {
        if (row[j] != 0.0) grad_m[static_cast<std::size_t>(j)] += static_cast<Scalar>(row[j]) * g;
      }
    }

    Matrix<Scalar> g = activation_backward(grad_m[0], tr.embed_out_pre, activation_);
    g = dense_backward(params_.embed_out, tr.embed_hidden, g, grads.embed_out);
    g = activation_backward(g, tr.embed_hidden_pre, activation_);
    dense_backward(params_.embed_in, tr.state, g, grads.embed_in);
    return grads;
  }

  /// Stacks mean/log-std gradients into a raw head gradient, zeroing the
  /// log-std entries that were clamped.
  Matrix<Scalar> head_gradient(const ForwardTrace<Scalar>& tr, const Matrix<Scalar>& grad_mean,
                               const Matrix<Scalar>& grad_log_std) const {
    const auto a = dims_.action_dim;
    Matrix<Scalar> g(2 * a, grad_mean.cols());
    g.topRows(a) = grad_mean;
    const auto raw = tr.head_out.bottomRows(a).array();
    g.bottomRows(a) = (raw > Scalar(log_std_min) && raw < Scalar(log_std_max)).select(grad_log_std.array(), Scalar(0));
    return g;
  }

  bool operator==(const ModularActorNet& o) const {
    return dims_ == o.dims_ && activation_ == o.activation_ && log_std_min == o.log_std_min &&
           log_std_max == o.log_std_max && params_ == o.params_;
  }

 private:
  NetDims dims_;
  Activation activation_ = Activation::relu;
  ActorParams<Scalar> params_;
};

}  // namespace mega
