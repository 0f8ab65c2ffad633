#include "paincast/autodiff.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "paincast/error.hpp"
#include "paincast/rng.hpp"

namespace paincast::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Map = Eigen::Map<RowMat>;
using CMap = Eigen::Map<const RowMat>;

CMap view(const Matrix& m) {
  return {m.data.data(), static_cast<Eigen::Index>(m.rows), static_cast<Eigen::Index>(m.cols)};
}
Map view(Matrix& m) { return {m.data.data(), static_cast<Eigen::Index>(m.rows), static_cast<Eigen::Index>(m.cols)}; }

void require(bool ok, const char* what) {
  if (!ok) throw Error(ErrorCode::ShapeMismatch, what);
}

Tape& tape_of(Var a) { return *a.tape(); }

template <typename F>
Var unary(Var a, F f, std::function<void(const Matrix& x, const Matrix& y, const Matrix& g, Matrix& dx)> back) {
  const Matrix& x = a.value();
  Matrix y(x.rows, x.cols);
  for (std::size_t i = 0; i < x.data.size(); ++i) y.data[i] = f(x.data[i]);
  const std::size_t ia = a.id();
  return tape_of(a).push(std::move(y), [ia, back](Tape& t, std::size_t self) {
    back(t.value(ia), t.value(self), t.grad(self), t.grad(ia));
  });
}

}  // namespace

Parameter::Parameter(std::string n, Matrix init) : name(std::move(n)), value(std::move(init)) {
  grad = Matrix(value.rows, value.cols);
  m = Matrix(value.rows, value.cols);
  v = Matrix(value.rows, value.cols);
}

void Parameter::zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }

Matrix glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng, double gain) {
  const double limit = gain * std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Matrix w(fan_in, fan_out);
  for (double& x : w.data) x = rng.uniform(-limit, limit);
  return w;
}

const Matrix& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, nullptr});
  return {this, nodes_.size() - 1};
}

Var Tape::param(Parameter& p) {
  nodes_.push_back(Node{p.value, {}, nullptr, &p});
  return {this, nodes_.size() - 1};
}

Var Tape::push(Matrix value, Backward backward) {
  nodes_.push_back(Node{std::move(value), {}, std::move(backward), nullptr});
  return {this, nodes_.size() - 1};
}

Matrix& Tape::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Matrix(n.value.rows, n.value.cols);
  return n.grad;
}

void Tape::backward(Var loss) {
  require(loss.value().size() == 1, "backward needs a scalar loss");
  grad(loss.id()).data[0] = 1.0;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.grad.empty()) continue;
    if (n.backward) n.backward(*this, id);
    if (n.param != nullptr) {
      for (std::size_t i = 0; i < n.grad.data.size(); ++i) n.param->grad.data[i] += n.grad.data[i];
    }
  }
}

Var matmul(Var a, Var b) {
  require(a.cols() == b.rows(), "matmul inner dimensions differ");
  Matrix y(a.rows(), b.cols());
  view(y).noalias() = view(a.value()) * view(b.value());
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  return tape_of(a).push(std::move(y), [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    view(t.grad(ia)).noalias() += view(g) * view(t.value(ib)).transpose();
    view(t.grad(ib)).noalias() += view(t.value(ia)).transpose() * view(g);
  });
}

Var matmul_nt(Var a, Var b) {
  require(a.cols() == b.cols(), "matmul_nt widths differ");
  Matrix y(a.rows(), b.rows());
  view(y).noalias() = view(a.value()) * view(b.value()).transpose();
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  return tape_of(a).push(std::move(y), [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    view(t.grad(ia)).noalias() += view(g) * view(t.value(ib));
    view(t.grad(ib)).noalias() += view(g).transpose() * view(t.value(ia));
  });
}

Var add(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add shapes differ");
  Matrix y = a.value();
  view(y) += view(b.value());
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  return tape_of(a).push(std::move(y), [ia, ib](Tape& t, std::size_t self) {
    view(t.grad(ia)) += view(t.grad(self));
    view(t.grad(ib)) += view(t.grad(self));
  });
}

Var add_row(Var a, Var row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row needs a 1 x cols row");
  Matrix y = a.value();
  view(y).rowwise() += view(row.value()).row(0);
  const std::size_t ia = a.id();
  const std::size_t ir = row.id();
  return tape_of(a).push(std::move(y), [ia, ir](Tape& t, std::size_t self) {
    view(t.grad(ia)) += view(t.grad(self));
    view(t.grad(ir)).row(0) += view(t.grad(self)).colwise().sum();
  });
}

Var sub(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sub shapes differ");
  Matrix y = a.value();
  view(y) -= view(b.value());
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  return tape_of(a).push(std::move(y), [ia, ib](Tape& t, std::size_t self) {
    view(t.grad(ia)) += view(t.grad(self));
    view(t.grad(ib)) -= view(t.grad(self));
  });
}

Var mul(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "mul shapes differ");
  Matrix y = a.value();
  view(y).array() *= view(b.value()).array();
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  return tape_of(a).push(std::move(y), [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    view(t.grad(ia)).array() += view(g).array() * view(t.value(ib)).array();
    view(t.grad(ib)).array() += view(g).array() * view(t.value(ia)).array();
  });
}

Var scale(Var a, double s) {
  Matrix y = a.value();
  view(y) *= s;
  const std::size_t ia = a.id();
  return tape_of(a).push(std::move(y), [ia, s](Tape& t, std::size_t self) { view(t.grad(ia)) += s * view(t.grad(self)); });
}

Var one_minus(Var a) {
  Matrix y = a.value();
  for (double& v : y.data) v = 1.0 - v;
  const std::size_t ia = a.id();
  return tape_of(a).push(std::move(y), [ia](Tape& t, std::size_t self) { view(t.grad(ia)) -= view(t.grad(self)); });
}

Var sigmoid(Var a) {
  return unary(
      a, [](double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
      [](const Matrix&, const Matrix& y, const Matrix& g, Matrix& dx) {
        for (std::size_t i = 0; i < y.data.size(); ++i) dx.data[i] += g.data[i] * y.data[i] * (1.0 - y.data[i]);
      });
}

Var tanh(Var a) {
  return unary(
      a, [](double x) { return std::tanh(x); },
      [](const Matrix&, const Matrix& y, const Matrix& g, Matrix& dx) {
        for (std::size_t i = 0; i < y.data.size(); ++i) dx.data[i] += g.data[i] * (1.0 - y.data[i] * y.data[i]);
      });
}

Var relu(Var a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](const Matrix& x, const Matrix&, const Matrix& g, Matrix& dx) {
        for (std::size_t i = 0; i < x.data.size(); ++i) {
          if (x.data[i] > 0.0) dx.data[i] += g.data[i];
        }
      });
}

Var exp(Var a) {
  return unary(
      a, [](double x) { return std::exp(x); },
      [](const Matrix&, const Matrix& y, const Matrix& g, Matrix& dx) {
        for (std::size_t i = 0; i < y.data.size(); ++i) dx.data[i] += g.data[i] * y.data[i];
      });
}

Var sum(Var a) {
  Matrix y(1, 1, view(a.value()).sum());
  const std::size_t ia = a.id();
  return tape_of(a).push(std::move(y), [ia](Tape& t, std::size_t self) {
    view(t.grad(ia)).array() += t.grad(self).data[0];
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var sse(Var a, const Matrix& target) {
  require(a.rows() == target.rows && a.cols() == target.cols, "loss target shape differs");
  Matrix diff = a.value();
  view(diff) -= view(target);
  Matrix y(1, 1, view(diff).squaredNorm());
  const std::size_t ia = a.id();
  return tape_of(a).push(std::move(y), [ia, diff = std::move(diff)](Tape& t, std::size_t self) {
    view(t.grad(ia)) += (2.0 * t.grad(self).data[0]) * view(diff);
  });
}

Var mse(Var a, const Matrix& target) { return scale(sse(a, target), 1.0 / static_cast<double>(target.size())); }

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat of nothing");
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    require(p.rows() == rows, "concat row counts differ");
    cols += p.cols();
  }
  Matrix y(rows, cols);
  std::vector<std::size_t> ids;
  std::size_t offset = 0;
  for (const Var& p : parts) {
    view(y).middleCols(static_cast<Eigen::Index>(offset), static_cast<Eigen::Index>(p.cols())) = view(p.value());
    offset += p.cols();
    ids.push_back(p.id());
  }
  return tape_of(parts.front()).push(std::move(y), [ids](Tape& t, std::size_t self) {
    std::size_t off = 0;
    for (std::size_t id : ids) {
      const auto c = static_cast<Eigen::Index>(t.value(id).cols);
      view(t.grad(id)) += view(t.grad(self)).middleCols(static_cast<Eigen::Index>(off), c);
      off += static_cast<std::size_t>(c);
    }
  });
}

Var slice_cols(Var a, std::size_t start, std::size_t count) {
  require(start + count <= a.cols(), "slice_cols out of range");
  Matrix y(a.rows(), count);
  view(y) = view(a.value()).middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(count));
  const std::size_t ia = a.id();
  return tape_of(a).push(std::move(y), [ia, start, count](Tape& t, std::size_t self) {
    view(t.grad(ia)).middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(count)) +=
        view(t.grad(self));
  });
}

Var gather_rows(Var a, std::span<const std::size_t> rows) {
  const Matrix& x = a.value();
  Matrix y(rows.size(), x.cols);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require(rows[r] < x.rows, "gather_rows index out of range");
    std::copy_n(x.data.begin() + static_cast<std::ptrdiff_t>(rows[r] * x.cols), x.cols,
                y.data.begin() + static_cast<std::ptrdiff_t>(r * x.cols));
  }
  const std::size_t ia = a.id();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return tape_of(a).push(std::move(y), [ia, idx = std::move(idx)](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix& dx = t.grad(ia);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      for (std::size_t c = 0; c < g.cols; ++c) dx.data[idx[r] * g.cols + c] += g.data[r * g.cols + c];
    }
  });
}

Var frames(Var a, std::size_t batch, std::size_t length, std::size_t kernel, std::size_t stride, std::size_t pad) {
  const Matrix& x = a.value();
  require(x.rows == batch * length, "frames: rows must equal batch * length");
  require(stride >= 1 && kernel >= 1 && length + pad >= kernel, "frames: sequence shorter than the kernel");
  const std::size_t out_len = (length + pad - kernel) / stride + 1;
  const std::size_t c = x.cols;
  Matrix y(batch * out_len, kernel * c);
  // Source row of each (output row, tap), or npos for padding.
  constexpr std::size_t npos = static_cast<std::size_t>(-1);
  std::vector<std::size_t> src(batch * out_len * kernel, npos);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < out_len; ++t) {
      for (std::size_t k = 0; k < kernel; ++k) {
        const std::size_t pos = t * stride + k;
        if (pos < pad || pos - pad >= length) continue;
        const std::size_t row = b * length + pos - pad;
        const std::size_t out_row = b * out_len + t;
        src[out_row * kernel + k] = row;
        std::copy_n(x.data.begin() + static_cast<std::ptrdiff_t>(row * c), c,
                    y.data.begin() + static_cast<std::ptrdiff_t>(out_row * kernel * c + k * c));
      }
    }
  }
  const std::size_t ia = a.id();
  return tape_of(a).push(std::move(y), [ia, c, kernel, src = std::move(src)](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix& dx = t.grad(ia);
    for (std::size_t s = 0; s < src.size(); ++s) {
      if (src[s] == npos) continue;
      const std::size_t out_row = s / kernel;
      const std::size_t k = s % kernel;
      const double* gp = g.data.data() + out_row * kernel * c + k * c;
      double* dp = dx.data.data() + src[s] * c;
      for (std::size_t j = 0; j < c; ++j) dp[j] += gp[j];
    }
  });
}

Var softmax_xent(Var logits, std::span<const std::size_t> targets) {
  const Matrix& x = logits.value();
  require(targets.size() == x.rows, "softmax_xent: one target per row");
  Matrix prob(x.rows, x.cols);
  double loss = 0.0;
  for (std::size_t r = 0; r < x.rows; ++r) {
    require(targets[r] < x.cols, "softmax_xent: target out of range");
    double mx = x(r, 0);
    for (std::size_t c = 1; c < x.cols; ++c) mx = std::max(mx, x(r, c));
    double z = 0.0;
    for (std::size_t c = 0; c < x.cols; ++c) {
      prob(r, c) = std::exp(x(r, c) - mx);
      z += prob(r, c);
    }
    for (std::size_t c = 0; c < x.cols; ++c) prob(r, c) /= z;
    loss += -(x(r, targets[r]) - mx - std::log(z));
  }
  const double n = static_cast<double>(x.rows);
  const std::size_t ia = logits.id();
  std::vector<std::size_t> tg(targets.begin(), targets.end());
  return tape_of(logits).push(Matrix(1, 1, loss / n), [ia, n, prob = std::move(prob), tg = std::move(tg)](
                                                           Tape& t, std::size_t self) {
    const double g = t.grad(self).data[0] / n;
    Matrix& dx = t.grad(ia);
    for (std::size_t r = 0; r < prob.rows; ++r) {
      for (std::size_t c = 0; c < prob.cols; ++c) {
        dx(r, c) += g * (prob(r, c) - (c == tg[r] ? 1.0 : 0.0));
      }
    }
  });
}

void Adam::step(std::span<Parameter* const> params) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (Parameter* p : params) {
    for (std::size_t i = 0; i < p->value.data.size(); ++i) {
      const double g = p->grad.data[i];
      double& m = p->m.data[i];
      double& v = p->v.data[i];
      m = beta1_ * m + (1.0 - beta1_) * g;
      v = beta2_ * v + (1.0 - beta2_) * g * g;
      p->value.data[i] -= lr_ * (m / c1) / (std::sqrt(v / c2) + eps_);
    }
  }
}

}  // namespace paincast::nn
