#pragma once

// Dense numeric kernel: the adapter MLP with hand-written backpropagation and
// an Adam optimizer. Everything is templated on the scalar type; the rest of
// the library instantiates it with double.

#include <cmath>
#include <random>
#include <string>
#include <utility>

#include <Eigen/Dense>

#include "seqopt/errors.hpp"

namespace seqopt {

using Index = Eigen::Index;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using DenseMatrix = Matrix<double>;
using DenseVector = Vector<double>;

enum class Activation { relu, identity };

inline std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "identity"; }

/// Two affine maps with a nonlinearity in between, mapping R^dim to R^dim:
/// out = w2 * act(w1 * in + b1) + b2.
template <typename Scalar>
struct MlpParams {
  Matrix<Scalar> w1;  // hidden x dim
  Vector<Scalar> b1;  // hidden
  Matrix<Scalar> w2;  // dim x hidden
  Vector<Scalar> b2;  // dim
  Activation activation = Activation::relu;

  Index dim() const { return w1.cols(); }
  Index hidden() const { return w1.rows(); }

  static MlpParams zeros(Index dim, Index hidden, Activation act = Activation::relu) {
    MlpParams p;
    p.w1 = Matrix<Scalar>::Zero(hidden, dim);
    p.b1 = Vector<Scalar>::Zero(hidden);
    p.w2 = Matrix<Scalar>::Zero(dim, hidden);
    p.b2 = Vector<Scalar>::Zero(dim);
    p.activation = act;
    return p;
  }

  bool same_shape(const MlpParams& o) const {
    return w1.rows() == o.w1.rows() && w1.cols() == o.w1.cols() && w2.rows() == o.w2.rows() &&
           w2.cols() == o.w2.cols() && b1.size() == o.b1.size() && b2.size() == o.b2.size();
  }

  void validate() const {
    if (w1.rows() != b1.size() || w2.cols() != w1.rows() || w2.rows() != b2.size() ||
        w2.rows() != w1.cols()) {
      throw ConfigError("mlp: inconsistent parameter shapes (output dim must equal input dim)");
    }
  }

  Index parameter_count() const { return w1.size() + b1.size() + w2.size() + b2.size(); }
};

/// Applies `f` to corresponding tensors of one or more parameter sets, in the
/// fixed order w1, b1, w2, b2.
template <typename F, typename... Params>
void for_each_tensor(F&& f, Params&&... p) {
  f(p.w1...);
  f(p.b1...);
  f(p.w2...);
  f(p.b2...);
}

template <typename Scalar>
struct MlpCache {
  Vector<Scalar> input;
  Vector<Scalar> pre;     // w1 * input + b1
  Vector<Scalar> hidden;  // act(pre)
};

template <typename Scalar>
struct MlpForward {
  Vector<Scalar> output;
  MlpCache<Scalar> cache;
};

template <typename Scalar, typename Derived>
MlpForward<Scalar> mlp_forward(const MlpParams<Scalar>& params, const Eigen::MatrixBase<Derived>& input) {
  if (input.size() != params.dim()) {
    throw ConfigError("mlp_forward: input length " + std::to_string(input.size()) + " != dim " +
                      std::to_string(params.dim()));
  }
  MlpForward<Scalar> f;
  f.cache.input = input;
  f.cache.pre.noalias() = params.w1 * f.cache.input;
  f.cache.pre += params.b1;
  if (params.activation == Activation::relu) {
    f.cache.hidden = f.cache.pre.cwiseMax(Scalar(0));
  } else {
    f.cache.hidden = f.cache.pre;
  }
  f.output.noalias() = params.w2 * f.cache.hidden;
  f.output += params.b2;
  return f;
}

/// Gradients of dot(grad_output, output) with respect to every parameter.
/// The returned struct reuses the parameter layout.
template <typename Scalar, typename Derived>
MlpParams<Scalar> mlp_backward(const MlpParams<Scalar>& params, const MlpCache<Scalar>& cache,
                               const Eigen::MatrixBase<Derived>& grad_output) {
  if (cache.input.size() != params.dim() || cache.pre.size() != params.hidden() ||
      cache.hidden.size() != params.hidden()) {
    throw InternalError("mlp_backward: activation cache does not match parameter shapes");
  }
  if (grad_output.size() != params.dim()) {
    throw ConfigError("mlp_backward: grad_output length mismatch");
  }
  MlpParams<Scalar> g;
  g.activation = params.activation;
  g.b2 = grad_output;
  g.w2.noalias() = g.b2 * cache.hidden.transpose();
  Vector<Scalar> grad_hidden = params.w2.transpose() * g.b2;
  if (params.activation == Activation::relu) {
    g.b1 = (cache.pre.array() > Scalar(0)).select(grad_hidden, Scalar(0));
  } else {
    g.b1 = std::move(grad_hidden);
  }
  g.w1.noalias() = g.b1 * cache.input.transpose();
  return g;
}

// Column-batched forms: each column of the input is one sample. They compute
// the same quantities as the per-sample functions with matrix products.

template <typename Scalar>
struct MlpBatchCache {
  Matrix<Scalar> input;   // dim x n
  Matrix<Scalar> pre;     // hidden x n
  Matrix<Scalar> hidden;  // hidden x n
};

template <typename Scalar>
struct MlpBatchForward {
  Matrix<Scalar> output;  // dim x n
  MlpBatchCache<Scalar> cache;
};

template <typename Scalar, typename Derived>
MlpBatchForward<Scalar> mlp_forward_batch(const MlpParams<Scalar>& params, const Eigen::MatrixBase<Derived>& inputs) {
  if (inputs.rows() != params.dim()) {
    throw ConfigError("mlp_forward_batch: input rows " + std::to_string(inputs.rows()) + " != dim " +
                      std::to_string(params.dim()));
  }
  MlpBatchForward<Scalar> f;
  f.cache.input = inputs;
  f.cache.pre.noalias() = params.w1 * f.cache.input;
  f.cache.pre.colwise() += params.b1;
  if (params.activation == Activation::relu) {
    f.cache.hidden = f.cache.pre.cwiseMax(Scalar(0));
  } else {
    f.cache.hidden = f.cache.pre;
  }
  f.output.noalias() = params.w2 * f.cache.hidden;
  f.output.colwise() += params.b2;
  return f;
}

/// Gradients of sum_j dot(grad_outputs.col(j), output.col(j)).
template <typename Scalar, typename Derived>
MlpParams<Scalar> mlp_backward_batch(const MlpParams<Scalar>& params, const MlpBatchCache<Scalar>& cache,
                                     const Eigen::MatrixBase<Derived>& grad_outputs) {
  const Index n = cache.input.cols();
  if (cache.input.rows() != params.dim() || cache.pre.rows() != params.hidden() || cache.pre.cols() != n ||
      cache.hidden.rows() != params.hidden() || cache.hidden.cols() != n) {
    throw InternalError("mlp_backward_batch: activation cache does not match parameter shapes");
  }
  if (grad_outputs.rows() != params.dim() || grad_outputs.cols() != n) {
    throw ConfigError("mlp_backward_batch: grad_outputs shape mismatch");
  }
  MlpParams<Scalar> g;
  g.activation = params.activation;
  g.b2 = grad_outputs.rowwise().sum();
  g.w2.noalias() = grad_outputs * cache.hidden.transpose();
  Matrix<Scalar> grad_hidden = params.w2.transpose() * grad_outputs;
  if (params.activation == Activation::relu) {
    grad_hidden = (cache.pre.array() > Scalar(0)).select(grad_hidden, Scalar(0));
  }
  g.b1 = grad_hidden.rowwise().sum();
  g.w1.noalias() = grad_hidden * cache.input.transpose();
  return g;
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
template <typename Scalar, typename Rng>
MlpParams<Scalar> mlp_init_uniform(Index dim, Index hidden, Rng& rng, Activation act = Activation::relu) {
  auto p = MlpParams<Scalar>::zeros(dim, hidden, act);
  auto fill = [&rng](auto& t, Scalar bound) {
    std::uniform_real_distribution<Scalar> u(-bound, bound);
    for (Index i = 0; i < t.size(); ++i) t.data()[i] = u(rng);
  };
  const Scalar in_bound = Scalar(1) / std::sqrt(Scalar(dim));
  const Scalar hid_bound = Scalar(1) / std::sqrt(Scalar(hidden));
  fill(p.w1, in_bound);
  fill(p.b1, in_bound);
  fill(p.w2, hid_bound);
  fill(p.b2, hid_bound);
  return p;
}

/// Exact identity map. With ReLU the hidden layer carries [x; -x] and the
/// output recombines relu(x) - relu(-x), so hidden must be >= 2 * dim; with the
/// identity activation hidden >= dim suffices.
template <typename Scalar>
MlpParams<Scalar> mlp_identity(Index dim, Index hidden, Activation act = Activation::relu) {
  auto p = MlpParams<Scalar>::zeros(dim, hidden, act);
  if (act == Activation::relu) {
    if (hidden < 2 * dim) throw ConfigError("mlp_identity: relu identity needs hidden >= 2*dim");
    for (Index i = 0; i < dim; ++i) {
      p.w1(i, i) = 1;
      p.w1(dim + i, i) = -1;
      p.w2(i, i) = 1;
      p.w2(i, dim + i) = -1;
    }
  } else {
    if (hidden < dim) throw ConfigError("mlp_identity: needs hidden >= dim");
    for (Index i = 0; i < dim; ++i) {
      p.w1(i, i) = 1;
      p.w2(i, i) = 1;
    }
  }
  return p;
}

template <typename Scalar>
struct AdamState {
  MlpParams<Scalar> first_moment;
  MlpParams<Scalar> second_moment;
  long step_count = 0;
  Scalar learning_rate = Scalar(5e-5);
  Scalar beta1 = Scalar(0.9);
  Scalar beta2 = Scalar(0.999);
  Scalar epsilon = Scalar(1e-8);

  static AdamState for_params(const MlpParams<Scalar>& params, Scalar lr) {
    AdamState s;
    s.first_moment = MlpParams<Scalar>::zeros(params.dim(), params.hidden(), params.activation);
    s.second_moment = s.first_moment;
    s.learning_rate = lr;
    return s;
  }
};

template <typename Scalar>
bool all_finite(const MlpParams<Scalar>& p) {
  bool ok = true;
  for_each_tensor([&ok](const auto& t) { ok = ok && t.allFinite(); }, p);
  return ok;
}

/// One bias-corrected Adam update of `params` in place.
template <typename Scalar>
void adam_step(AdamState<Scalar>& state, MlpParams<Scalar>& params, const MlpParams<Scalar>& grads) {
  if (!params.same_shape(grads) || !params.same_shape(state.first_moment) ||
      !params.same_shape(state.second_moment)) {
    throw ConfigError("adam_step: shape mismatch between params, gradients and optimizer state");
  }
  if (!all_finite(grads)) throw NumericError("adam_step: non-finite gradient");

  ++state.step_count;
  const Scalar b1 = state.beta1, b2 = state.beta2;
  const Scalar c1 = Scalar(1) - std::pow(b1, Scalar(state.step_count));
  const Scalar c2 = Scalar(1) - std::pow(b2, Scalar(state.step_count));
  const Scalar lr = state.learning_rate, eps = state.epsilon;
  for_each_tensor(
      [&](auto& p, const auto& g, auto& m, auto& v) {
        m = b1 * m + (Scalar(1) - b1) * g;
        v = b2 * v + (Scalar(1) - b2) * g.cwiseAbs2();
        p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
      },
      params, grads, state.first_moment, state.second_moment);
}

}  // namespace seqopt
