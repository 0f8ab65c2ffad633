#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "paincast/matrix.hpp"

namespace paincast {
class Rng;
}

namespace paincast::nn {

/// Trainable array with its gradient and Adam moments.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  Matrix m;
  Matrix v;

  Parameter() = default;
  Parameter(std::string n, Matrix init);
  void zero_grad();
};

/// Uniform in +-sqrt(6 / (fan_in + fan_out)).
Matrix glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng, double gain = 1.0);

class Tape;

/// Handle to a node on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  std::size_t rows() const { return value().rows; }
  std::size_t cols() const { return value().cols; }
  double scalar() const { return value().data.at(0); }
  std::size_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records a computation for reverse-mode differentiation. Nodes live in a
/// deque so references stay valid while the tape grows.
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  Var constant(Matrix value);
  Var param(Parameter& p);
  Var push(Matrix value, Backward backward);

  /// Seeds d(loss)/d(loss) = 1 for a 1x1 loss and accumulates into the
  /// gradients of every parameter used on this tape.
  void backward(Var loss);

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  /// Gradient buffer of a node, allocated as zeros on first use.
  Matrix& grad(std::size_t id);
  bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    Parameter* param = nullptr;
  };
  std::deque<Node> nodes_;
};

Var matmul(Var a, Var b);
/// a * b^T
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
/// Adds a 1 x cols row to every row of a.
Var add_row(Var a, Var row);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var one_minus(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
Var relu(Var a);
Var exp(Var a);
Var sum(Var a);
Var mean(Var a);
/// Mean over all entries of (a - target)^2.
Var mse(Var a, const Matrix& target);
/// Sum over all entries of (a - target)^2.
Var sse(Var a, const Matrix& target);
Var concat_cols(std::span<const Var> parts);
Var slice_cols(Var a, std::size_t start, std::size_t count);
Var gather_rows(Var a, std::span<const std::size_t> rows);
/// Im2col for a causal 1-D convolution. a holds `batch` sequences of length
/// `length` stacked row-wise (row b*length + t). Output row b*T' + t' holds
/// input rows t'*stride + k - pad for k in [0, kernel), zero outside, so
/// T' = (length + pad - kernel) / stride + 1.
Var frames(Var a, std::size_t batch, std::size_t length, std::size_t kernel, std::size_t stride, std::size_t pad);
/// Mean softmax cross-entropy of each row against its target column.
Var softmax_xent(Var logits, std::span<const std::size_t> targets);

/// Adam with bias correction.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(std::span<Parameter* const> params);
  std::size_t steps() const noexcept { return t_; }

 private:
  double lr_;
  double beta1_;
  double beta2_;
  double eps_;
  std::size_t t_ = 0;
};

}  // namespace paincast::nn
