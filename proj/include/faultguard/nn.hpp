#pragma once

// Small dense/recurrent building blocks with hand-written backward passes.
// Activations are column-major batches: one column per sample.

#include "faultguard/core.hpp"

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace faultguard::nn {

/// A trainable tensor and its accumulated gradient.
struct Param {
  std::string name;
  Matrix value;
  Matrix grad;

  Param() = default;
  Param(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)), value(Matrix::Zero(rows, cols)), grad(Matrix::Zero(rows, cols)) {}
};

using ParamRefs = std::vector<Param*>;
using ConstParamRefs = std::vector<const Param*>;

/// Uniform in +-1/sqrt(fan_in).
void init_uniform(Param& p, Eigen::Index fan_in, Rng& rng);
void zero_grads(const ParamRefs& params);
bool grads_finite(const ParamRefs& params);
/// Copies parameter values, in order, for serialization.
std::vector<Matrix> snapshot(const ConstParamRefs& params);
/// Restores values saved by snapshot; shapes must match.
void restore(const ParamRefs& params, const std::vector<Matrix>& values);

class Adam {
 public:
  explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const ParamRefs& params);
  long steps_taken() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Matrix> m_, v_;
};

enum class Activation { Identity, Relu, LeakyRelu, Sigmoid, Tanh };

Matrix activate(Activation act, const Matrix& pre);
/// Derivative given both pre-activation and activation output.
Matrix activation_grad(Activation act, const Matrix& pre, const Matrix& out, const Matrix& upstream);

class Dense {
 public:
  Dense() = default;
  Dense(std::string name, Eigen::Index in, Eigen::Index out, Rng& rng);

  Matrix forward(const Matrix& x) const;
  /// Returns d/dx; parameter gradients are added to `sink` when non-null.
  Matrix backward(const Matrix& x, const Matrix& dy, Dense* sink) const;

  Eigen::Index in_dim() const { return weight.value.cols(); }
  Eigen::Index out_dim() const { return weight.value.rows(); }

  Param weight;
  Param bias;
};

/// Stack of dense layers with one hidden activation and one output activation.
class Mlp {
 public:
  struct Cache {
    std::vector<Matrix> inputs;  // input to each layer
    std::vector<Matrix> pre;     // pre-activation of each layer
    Matrix output;
  };

  Mlp() = default;
  Mlp(const std::string& name, const std::vector<Eigen::Index>& widths, Activation hidden, Activation output,
      Rng& rng);

  Matrix forward(const Matrix& x) const;
  Matrix forward(const Matrix& x, Cache& cache) const;
  /// Backward from d(output), returns d(input). Parameter gradients go to `sink`
  /// (usually `this`) when non-null.
  Matrix backward(const Cache& cache, const Matrix& d_output, Mlp* sink) const;
  /// Backward from d(pre-activation of the last layer).
  Matrix backward_from_pre(const Cache& cache, const Matrix& d_last_pre, Mlp* sink) const;

  std::size_t num_layers() const { return layers_.size(); }
  const std::vector<Dense>& layers() const { return layers_; }
  Eigen::Index in_dim() const { return layers_.front().in_dim(); }
  Eigen::Index out_dim() const { return layers_.back().out_dim(); }
  ParamRefs params();
  ConstParamRefs params() const;

 private:
  std::vector<Dense> layers_;
  Activation hidden_ = Activation::Relu;
  Activation output_ = Activation::Identity;
};

/// One direction of a GRU layer using the reset-after-matmul formulation:
///   r = s(Wi_r x + bi_r + Wh_r h + bh_r)
///   z = s(Wi_z x + bi_z + Wh_z h + bh_z)
///   n = tanh(Wi_n x + bi_n + r * (Wh_n h + bh_n))
///   h' = (1 - z) * n + z * h
class GruDirection {
 public:
  struct Cache {
    Matrix inputs;               // F x (T*B), time-major blocks of B columns
    std::vector<Matrix> hidden;  // T+1 states, hidden[0] = 0, in processing order
    std::vector<Matrix> r, z, n, hn;
    Eigen::Index batch = 0;
  };

  GruDirection() = default;
  GruDirection(const std::string& name, Eigen::Index input_size, Eigen::Index hidden_size, Rng& rng);

  /// `inputs` holds T blocks of B columns already in processing order.
  Matrix forward(const Matrix& inputs, Eigen::Index batch, Cache* cache) const;
  /// Returns d(inputs) with the same block layout. Parameter gradients go to
  /// `sink` when non-null.
  Matrix backward(const Cache& cache, const Matrix& d_final, GruDirection* sink) const;

  Eigen::Index hidden_size() const { return w_hidden.value.cols(); }
  Eigen::Index input_size() const { return w_input.value.cols(); }
  ParamRefs params() { return {&w_input, &w_hidden, &b_input, &b_hidden}; }
  ConstParamRefs params() const { return {&w_input, &w_hidden, &b_input, &b_hidden}; }

  Param w_input;   // 3H x F
  Param w_hidden;  // 3H x H
  Param b_input;   // 3H x 1
  Param b_hidden;  // 3H x 1
};

/// Numerically stable softmax cross-entropy. Returns per-sample losses; writes
/// d(loss_i)/d(logits) scaled by `weights[i]` into `d_logits` when non-null.
Vector softmax_cross_entropy(const Matrix& logits, std::span<const int> labels, Matrix* d_logits = nullptr,
                             std::span<const double> weights = {});

/// Binary cross-entropy on logits against a constant target. Returns the mean
/// loss and writes the gradient of the mean into `d_logits`.
double bce_with_logits(const Matrix& logits, double target, Matrix* d_logits);

}  // namespace faultguard::nn
