#include "paincast/neural.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "paincast/error.hpp"
#include "paincast/rng.hpp"

namespace paincast::nn {

namespace {

std::vector<const Matrix*> pointers_of(std::span<const Matrix> windows, std::span<const std::size_t> idx) {
  std::vector<const Matrix*> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(&windows[i]);
  return out;
}

void check_windows(std::span<const Matrix* const> windows, std::size_t features) {
  if (windows.empty()) throw Error(ErrorCode::EmptyTrainingSet, "no windows");
  const std::size_t len = windows.front()->rows;
  for (const Matrix* w : windows) {
    if (w->rows != len || w->cols != features) {
      throw Error(ErrorCode::ShapeMismatch, "windows must share length and feature width (" +
                                                std::to_string(features) + " features expected)");
    }
  }
}

Matrix stack_rows(std::span<const Matrix* const> windows) {
  const std::size_t len = windows.front()->rows;
  const std::size_t cols = windows.front()->cols;
  Matrix out(windows.size() * len, cols);
  for (std::size_t b = 0; b < windows.size(); ++b) {
    std::copy(windows[b]->data.begin(), windows[b]->data.end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(b * len * cols));
  }
  return out;
}

// Mini-batch Adam loop shared by all models. `step` returns the batch loss.
template <typename Step>
TrainTrace train_loop(Module& model, std::size_t n, const TrainConfig& cfg, std::size_t min_batch, Step step) {
  cfg.validate();
  Adam adam(cfg.lr);
  std::vector<Parameter*> params = model.pointers();
  std::vector<std::size_t> order(n);
  TrainTrace trace;
  double best = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, {epoch}));
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    double total = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch) {
      const std::size_t count = std::min(cfg.batch, n - start);
      if (count < min_batch) continue;
      std::span<const std::size_t> idx(order.data() + start, count);
      Tape tape;
      model.zero_grad();
      const Var loss = step(tape, idx, rng);
      const double value = loss.scalar();
      if (!std::isfinite(value)) {
        throw Error(ErrorCode::NonFiniteLoss, "training loss became non-finite at epoch " + std::to_string(epoch));
      }
      tape.backward(loss);
      adam.step(params);
      total += value * static_cast<double>(count);
      seen += count;
    }
    const double epoch_loss = seen > 0 ? total / static_cast<double>(seen) : 0.0;
    trace.loss.push_back(epoch_loss);
    if (cfg.patience) {
      if (epoch_loss < best) {
        best = epoch_loss;
        stale = 0;
      } else if (++stale >= *cfg.patience) {
        break;
      }
    }
  }
  return trace;
}

Matrix zeros_like_bias(std::size_t n) { return Matrix(1, n); }

nlohmann::json cells_json(const std::vector<GatedCell>& cells) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& c : cells) j.push_back({{"in", c.in}, {"hidden", c.hidden}});
  return j;
}

}  // namespace

void TrainConfig::validate() const {
  if (batch < 1) throw Error(ErrorCode::InvalidConfig, "batch size must be >= 1");
  if (!(lr > 0.0)) throw Error(ErrorCode::InvalidConfig, "learning rate must be > 0");
}

std::size_t Module::add_param(std::string name, Matrix init) {
  params.emplace_back(std::move(name), std::move(init));
  return params.size() - 1;
}

std::vector<Parameter*> Module::pointers() {
  std::vector<Parameter*> out;
  for (auto& p : params) out.push_back(&p);
  return out;
}

void Module::zero_grad() {
  for (auto& p : params) p.zero_grad();
}

std::size_t Module::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.value.size();
  return n;
}

nlohmann::json Module::weights_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& p : params) {
    arr.push_back({{"name", p.name}, {"shape", {p.value.rows, p.value.cols}}, {"data", p.value.data}});
  }
  return arr;
}

void Module::load_weights(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != params.size()) {
    throw Error(ErrorCode::ShapeMismatch, "weight list does not match the model");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = j[i];
    Parameter& p = params[i];
    const auto shape = e.at("shape").get<std::vector<std::size_t>>();
    if (e.at("name").get<std::string>() != p.name || shape.size() != 2 || shape[0] != p.value.rows ||
        shape[1] != p.value.cols) {
      throw Error(ErrorCode::ShapeMismatch, "weight entry " + p.name + " has a different name or shape");
    }
    p.value.data = e.at("data").get<std::vector<double>>();
    if (p.value.data.size() != p.value.rows * p.value.cols) {
      throw Error(ErrorCode::ShapeMismatch, "weight entry " + p.name + " has the wrong element count");
    }
  }
}

Linear Linear::make(Module& m, const std::string& name, std::size_t in, std::size_t out, Rng& rng, double gain) {
  Linear l;
  l.in = in;
  l.out = out;
  l.w = m.add_param(name + ".w", glorot_uniform(in, out, rng, gain));
  l.b = m.add_param(name + ".b", zeros_like_bias(out));
  return l;
}

Var Linear::forward(Tape& tape, Module& m, Var x) const {
  return add_row(matmul(x, tape.param(m.params[w])), tape.param(m.params[b]));
}

std::string to_string(CellKind k) { return k == CellKind::Lstm ? "lstm" : "gru"; }

CellKind cell_kind_from_string(const std::string& s) {
  if (s == "lstm") return CellKind::Lstm;
  if (s == "gru") return CellKind::Gru;
  throw Error(ErrorCode::InvalidConfig, "unknown cell kind '" + s + "' (expected lstm or gru)");
}

GatedCell GatedCell::make(Module& m, const std::string& name, CellKind kind, std::size_t in, std::size_t hidden,
                          Rng& rng) {
  GatedCell c;
  c.kind = kind;
  c.in = in;
  c.hidden = hidden;
  const std::size_t gates = kind == CellKind::Lstm ? 4 : 3;
  c.w = m.add_param(name + ".w", glorot_uniform(in, gates * hidden, rng));
  c.u = m.add_param(name + ".u", glorot_uniform(hidden, gates * hidden, rng));
  c.b = m.add_param(name + ".b", zeros_like_bias(gates * hidden));
  return c;
}

GatedCell::Bound GatedCell::bind(Tape& tape, Module& m) const {
  return {tape.param(m.params[w]), tape.param(m.params[u]), tape.param(m.params[b])};
}

GatedCell::State GatedCell::zero_state(Tape& tape, std::size_t batch) const {
  State s;
  s.h = tape.constant(Matrix(batch, hidden));
  if (kind == CellKind::Lstm) s.c = tape.constant(Matrix(batch, hidden));
  return s;
}

GatedCell::State GatedCell::step(const Bound& p, Var x, const State& s) const {
  const std::size_t h = hidden;
  if (kind == CellKind::Lstm) {
    const Var gates = add_row(add(matmul(x, p.w), matmul(s.h, p.u)), p.b);
    const Var i = sigmoid(slice_cols(gates, 0, h));
    const Var f = sigmoid(slice_cols(gates, h, h));
    const Var g = tanh(slice_cols(gates, 2 * h, h));
    const Var o = sigmoid(slice_cols(gates, 3 * h, h));
    State next;
    next.c = add(mul(f, s.c), mul(i, g));
    next.h = mul(o, tanh(next.c));
    return next;
  }
  const Var xs = add_row(matmul(x, p.w), p.b);
  const Var hs = matmul(s.h, p.u);
  const Var r = sigmoid(add(slice_cols(xs, 0, h), slice_cols(hs, 0, h)));
  const Var z = sigmoid(add(slice_cols(xs, h, h), slice_cols(hs, h, h)));
  const Var n = tanh(add(slice_cols(xs, 2 * h, h), mul(r, slice_cols(hs, 2 * h, h))));
  State next;
  next.h = add(mul(one_minus(z), n), mul(z, s.h));
  return next;
}

Matrix batch_step(std::span<const Matrix* const> windows, std::size_t t) {
  const std::size_t cols = windows.front()->cols;
  Matrix out(windows.size(), cols);
  for (std::size_t b = 0; b < windows.size(); ++b) {
    std::copy_n(windows[b]->data.begin() + static_cast<std::ptrdiff_t>(t * cols), cols,
                out.data.begin() + static_cast<std::ptrdiff_t>(b * cols));
  }
  return out;
}

// ---------------------------------------------------------------------------

MlpRegressor::MlpRegressor(std::vector<std::size_t> sizes, std::uint64_t seed) : sizes_(std::move(sizes)) {
  if (sizes_.size() < 2) throw Error(ErrorCode::InvalidConfig, "MLP needs input and output sizes");
  for (std::size_t s : sizes_) {
    if (s == 0) throw Error(ErrorCode::InvalidConfig, "MLP layer sizes must be positive");
  }
  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    layers_.push_back(Linear::make(*this, "dense" + std::to_string(l), sizes_[l], sizes_[l + 1], rng));
  }
}

Var MlpRegressor::forward(Tape& tape, Var x) {
  if (x.cols() != sizes_.front()) throw Error(ErrorCode::ShapeMismatch, "MLP input width differs from the model");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    x = layers_[l].forward(tape, *this, x);
    if (l + 1 < layers_.size()) x = relu(x);
  }
  return x;
}

Matrix MlpRegressor::predict(const Matrix& x) {
  Tape tape;
  return forward(tape, tape.constant(x)).value();
}

nlohmann::json MlpRegressor::to_json() const {
  return {{"type", "mlp"}, {"sizes", sizes_}, {"params", weights_json()}};
}

MlpRegressor MlpRegressor::from_json(const nlohmann::json& j) {
  MlpRegressor m(j.at("sizes").get<std::vector<std::size_t>>(), 0);
  m.load_weights(j.at("params"));
  return m;
}

TrainTrace mlp_train(MlpRegressor& model, const Matrix& x, std::span<const double> y, const TrainConfig& cfg) {
  if (x.rows == 0) throw Error(ErrorCode::EmptyTrainingSet, "MLP training set is empty");
  if (x.rows != y.size()) throw Error(ErrorCode::ShapeMismatch, "MLP inputs and targets differ in count");
  if (x.cols != model.sizes().front()) throw Error(ErrorCode::ShapeMismatch, "MLP input width differs from the model");
  return train_loop(model, x.rows, cfg, 1, [&](Tape& tape, std::span<const std::size_t> idx, Rng&) {
    Matrix xb(idx.size(), x.cols);
    Matrix yb(idx.size(), 1);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      std::copy_n(x.data.begin() + static_cast<std::ptrdiff_t>(idx[r] * x.cols), x.cols,
                  xb.data.begin() + static_cast<std::ptrdiff_t>(r * x.cols));
      yb.data[r] = y[idx[r]];
    }
    return mse(model.forward(tape, tape.constant(std::move(xb))), yb);
  });
}

TrainTrace mlp_train_classifier(MlpRegressor& model, const Matrix& x, std::span<const int> labels,
                                const TrainConfig& cfg) {
  if (x.rows == 0) throw Error(ErrorCode::EmptyTrainingSet, "MLP training set is empty");
  if (x.rows != labels.size()) throw Error(ErrorCode::ShapeMismatch, "MLP inputs and labels differ in count");
  if (x.cols != model.sizes().front()) throw Error(ErrorCode::ShapeMismatch, "MLP input width differs from the model");
  const std::size_t k = model.sizes().back();
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= k) throw Error(ErrorCode::ShapeMismatch, "label outside the output layer");
  }
  return train_loop(model, x.rows, cfg, 1, [&](Tape& tape, std::span<const std::size_t> idx, Rng&) {
    Matrix xb(idx.size(), x.cols);
    std::vector<std::size_t> targets(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      std::copy_n(x.data.begin() + static_cast<std::ptrdiff_t>(idx[r] * x.cols), x.cols,
                  xb.data.begin() + static_cast<std::ptrdiff_t>(r * x.cols));
      targets[r] = static_cast<std::size_t>(labels[idx[r]]);
    }
    return softmax_xent(model.forward(tape, tape.constant(std::move(xb))), targets);
  });
}

Matrix mlp_predict_proba(MlpRegressor& model, const Matrix& x) {
  Matrix out = model.predict(x);
  for (std::size_t r = 0; r < out.rows; ++r) {
    auto row = out.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double& v : row) {
      v = std::exp(v - mx);
      z += v;
    }
    for (double& v : row) v /= z;
  }
  return out;
}

// ---------------------------------------------------------------------------

RnnRegressor::RnnRegressor(std::size_t features, std::size_t hidden, std::size_t layers, CellKind kind,
                           std::uint64_t seed)
    : features_(features), hidden_(hidden), kind_(kind) {
  if (features == 0 || hidden == 0 || layers == 0) {
    throw Error(ErrorCode::InvalidConfig, "recurrent model sizes must be positive");
  }
  Rng rng(seed);
  for (std::size_t l = 0; l < layers; ++l) {
    cells_.push_back(GatedCell::make(*this, "cell" + std::to_string(l), kind, l == 0 ? features : hidden, hidden, rng));
  }
  head_ = Linear::make(*this, "head", hidden, 1, rng);
}

Var RnnRegressor::forward(Tape& tape, std::span<const Matrix* const> windows) {
  check_windows(windows, features_);
  std::vector<GatedCell::Bound> bound;
  std::vector<GatedCell::State> state;
  for (const auto& c : cells_) {
    bound.push_back(c.bind(tape, *this));
    state.push_back(c.zero_state(tape, windows.size()));
  }
  for (std::size_t t = 0; t < windows.front()->rows; ++t) {
    Var x = tape.constant(batch_step(windows, t));
    for (std::size_t l = 0; l < cells_.size(); ++l) {
      state[l] = cells_[l].step(bound[l], x, state[l]);
      x = state[l].h;
    }
  }
  return head_.forward(tape, *this, state.back().h);
}

std::vector<double> RnnRegressor::predict(std::span<const Matrix> windows) {
  std::vector<double> out;
  constexpr std::size_t kChunk = 256;
  for (std::size_t start = 0; start < windows.size(); start += kChunk) {
    std::vector<const Matrix*> ptrs;
    for (std::size_t i = start; i < std::min(windows.size(), start + kChunk); ++i) ptrs.push_back(&windows[i]);
    Tape tape;
    const Matrix& y = forward(tape, ptrs).value();
    out.insert(out.end(), y.data.begin(), y.data.end());
  }
  return out;
}

nlohmann::json RnnRegressor::to_json() const {
  return {{"type", "rnn"},          {"features", features_}, {"hidden", hidden_}, {"layers", cells_.size()},
          {"cell", to_string(kind_)}, {"params", weights_json()}};
}

RnnRegressor RnnRegressor::from_json(const nlohmann::json& j) {
  RnnRegressor m(j.at("features").get<std::size_t>(), j.at("hidden").get<std::size_t>(),
                 j.at("layers").get<std::size_t>(), cell_kind_from_string(j.at("cell").get<std::string>()), 0);
  m.load_weights(j.at("params"));
  return m;
}

TrainTrace rnn_train(RnnRegressor& model, std::span<const Matrix> windows, std::span<const double> y,
                     const TrainConfig& cfg) {
  if (windows.empty()) throw Error(ErrorCode::EmptyTrainingSet, "recurrent training set is empty");
  if (windows.size() != y.size()) throw Error(ErrorCode::ShapeMismatch, "windows and targets differ in count");
  return train_loop(model, windows.size(), cfg, 1, [&](Tape& tape, std::span<const std::size_t> idx, Rng&) {
    const auto ptrs = pointers_of(windows, idx);
    Matrix yb(idx.size(), 1);
    for (std::size_t r = 0; r < idx.size(); ++r) yb.data[r] = y[idx[r]];
    return mse(model.forward(tape, ptrs), yb);
  });
}

// ---------------------------------------------------------------------------

void CpcConfig::validate() const {
  if (channels.empty() || channels.size() != kernels.size() || channels.size() != strides.size()) {
    throw Error(ErrorCode::InvalidConfig, "CPC encoder lists (channels, kernels, strides) must have equal length");
  }
  for (std::size_t l = 0; l < channels.size(); ++l) {
    if (channels[l] == 0 || strides[l] == 0 || kernels[l] < strides[l]) {
      throw Error(ErrorCode::InvalidConfig, "CPC layer " + std::to_string(l) + " needs channels > 0 and kernel >= stride >= 1");
    }
  }
  if (hidden == 0) throw Error(ErrorCode::InvalidConfig, "CPC hidden size must be positive");
  if (k_max < 1) throw Error(ErrorCode::InvalidConfig, "CPC k_max must be >= 1");
}

std::size_t CpcConfig::downsampling() const {
  std::size_t f = 1;
  for (std::size_t s : strides) f *= s;
  return f;
}

std::size_t CpcConfig::latent_length(std::size_t window) const {
  std::size_t len = window;
  for (std::size_t s : strides) len /= s;
  return len;
}

nlohmann::json to_json(const CpcConfig& c) {
  return {{"channels", c.channels}, {"kernels", c.kernels}, {"strides", c.strides},
          {"hidden", c.hidden},     {"k_max", c.k_max},     {"cell", to_string(c.cell)}};
}

CpcConfig cpc_config_from_json(const nlohmann::json& j) {
  CpcConfig c;
  if (j.contains("channels")) j.at("channels").get_to(c.channels);
  if (j.contains("kernels")) j.at("kernels").get_to(c.kernels);
  if (j.contains("strides")) j.at("strides").get_to(c.strides);
  if (j.contains("hidden")) j.at("hidden").get_to(c.hidden);
  if (j.contains("k_max")) j.at("k_max").get_to(c.k_max);
  if (j.contains("cell")) c.cell = cell_kind_from_string(j.at("cell").get<std::string>());
  c.validate();
  return c;
}

Cpc::Cpc(std::size_t features, CpcConfig cfg, std::uint64_t seed) : features_(features), cfg_(std::move(cfg)) {
  cfg_.validate();
  if (features == 0) throw Error(ErrorCode::InvalidConfig, "CPC needs at least one input feature");
  Rng rng(seed);
  std::size_t in = features;
  for (std::size_t l = 0; l < cfg_.channels.size(); ++l) {
    conv_.push_back(Linear::make(*this, "conv" + std::to_string(l), cfg_.kernels[l] * in, cfg_.channels[l], rng));
    in = cfg_.channels[l];
  }
  cell_ = GatedCell::make(*this, "aggregator", cfg_.cell, in, cfg_.hidden, rng);
  for (std::size_t k = 1; k <= cfg_.k_max; ++k) {
    predictors_.push_back(add_param("predict" + std::to_string(k), glorot_uniform(cfg_.hidden, in, rng)));
  }
}

Cpc::Forward Cpc::forward(Tape& tape, std::span<const Matrix* const> windows) {
  check_windows(windows, features_);
  const std::size_t batch = windows.size();
  std::size_t len = windows.front()->rows;
  if (cfg_.latent_length(len) < 1) {
    throw Error(ErrorCode::WindowTooShort, "window of " + std::to_string(len) + " hours is shorter than the encoder's " +
                                               std::to_string(cfg_.downsampling()) + "x downsampling");
  }
  Var x = tape.constant(stack_rows(windows));
  for (std::size_t l = 0; l < conv_.size(); ++l) {
    const std::size_t k = cfg_.kernels[l];
    const std::size_t s = cfg_.strides[l];
    x = relu(conv_[l].forward(tape, *this, frames(x, batch, len, k, s, k - s)));
    len = len / s;
  }
  Forward out;
  out.z = x;
  out.latent_length = len;
  const auto bound = cell_.bind(tape, *this);
  GatedCell::State state = cell_.zero_state(tape, batch);
  std::vector<std::size_t> rows(batch);
  for (std::size_t t = 0; t < len; ++t) {
    for (std::size_t b = 0; b < batch; ++b) rows[b] = b * len + t;
    state = cell_.step(bound, gather_rows(x, rows), state);
    out.ctx.push_back(state.h);
  }
  return out;
}

Var Cpc::info_nce(Tape& tape, std::span<const Matrix* const> windows) {
  const std::size_t batch = windows.size();
  if (batch < 2) throw Error(ErrorCode::BatchTooSmall, "InfoNCE needs at least two windows per batch");
  const Forward f = forward(tape, windows);
  const std::size_t len = f.latent_length;
  std::vector<std::size_t> targets(batch);
  std::iota(targets.begin(), targets.end(), 0);
  std::vector<std::size_t> rows(batch);
  std::vector<Var> terms;
  for (std::size_t k = 1; k <= cfg_.k_max; ++k) {
    const Var w = tape.param(params[predictors_[k - 1]]);
    for (std::size_t t = 0; t + k < len; ++t) {
      for (std::size_t b = 0; b < batch; ++b) rows[b] = b * len + t + k;
      const Var scores = matmul_nt(matmul(f.ctx[t], w), gather_rows(f.z, rows));
      terms.push_back(softmax_xent(scores, targets));
    }
  }
  if (terms.empty()) {
    throw Error(ErrorCode::WindowTooShort, "window yields " + std::to_string(len) + " latent steps; no prediction pairs");
  }
  Var total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
  return scale(total, 1.0 / static_cast<double>(terms.size()));
}

std::vector<double> Cpc::embed(const Matrix& window) {
  const Matrix* ptr = &window;
  Tape tape;
  const Forward f = forward(tape, std::span<const Matrix* const>(&ptr, 1));
  return f.ctx.back().value().data;
}

Matrix Cpc::embed_batch(std::span<const Matrix> windows) {
  Matrix out(windows.size(), cfg_.hidden);
  constexpr std::size_t kChunk = 256;
  std::size_t start = 0;
  while (start < windows.size()) {
    std::size_t end = start + 1;
    while (end < windows.size() && end - start < kChunk && windows[end].rows == windows[start].rows) ++end;
    std::vector<const Matrix*> ptrs;
    for (std::size_t i = start; i < end; ++i) ptrs.push_back(&windows[i]);
    Tape tape;
    const Forward f = forward(tape, ptrs);
    const Matrix& h = f.ctx.back().value();
    std::copy(h.data.begin(), h.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(start * cfg_.hidden));
    start = end;
  }
  return out;
}

nlohmann::json Cpc::to_json() const {
  return {{"type", "cpc"}, {"features", features_}, {"config", paincast::nn::to_json(cfg_)}, {"params", weights_json()}};
}

Cpc Cpc::from_json(const nlohmann::json& j) {
  Cpc m(j.at("features").get<std::size_t>(), cpc_config_from_json(j.at("config")), 0);
  m.load_weights(j.at("params"));
  return m;
}

TrainTrace cpc_pretrain(Cpc& model, std::span<const Matrix> windows, const TrainConfig& cfg) {
  if (windows.size() < 2 || cfg.batch < 2) {
    throw Error(ErrorCode::BatchTooSmall, "CPC needs batches of at least two windows");
  }
  const CpcConfig& c = model.config();
  const std::size_t need = c.downsampling() * (c.k_max + 1);
  for (const auto& w : windows) {
    if (w.rows < need) {
      throw Error(ErrorCode::WindowTooShort, "CPC pretraining windows need >= " + std::to_string(need) + " hours (got " +
                                                 std::to_string(w.rows) + ")");
    }
  }
  return train_loop(model, windows.size(), cfg, 2, [&](Tape& tape, std::span<const std::size_t> idx, Rng&) {
    const auto ptrs = pointers_of(windows, idx);
    return model.info_nce(tape, ptrs);
  });
}

// ---------------------------------------------------------------------------

void VaeConfig::validate() const {
  if (hidden == 0 || layers == 0) throw Error(ErrorCode::InvalidConfig, "VAE hidden size and layers must be positive");
  if (latent < 1) throw Error(ErrorCode::InvalidConfig, "VAE latent dimension must be >= 1");
  if (outputs == 0) throw Error(ErrorCode::InvalidConfig, "VAE must reconstruct at least one column");
  if (!(kl_weight >= 0.0)) throw Error(ErrorCode::InvalidConfig, "VAE KL weight must be >= 0");
}

nlohmann::json to_json(const VaeConfig& c) {
  return {{"hidden", c.hidden},   {"layers", c.layers},       {"latent", c.latent},
          {"outputs", c.outputs}, {"kl_weight", c.kl_weight}, {"cell", to_string(c.cell)}};
}

VaeConfig vae_config_from_json(const nlohmann::json& j) {
  VaeConfig c;
  if (j.contains("hidden")) j.at("hidden").get_to(c.hidden);
  if (j.contains("layers")) j.at("layers").get_to(c.layers);
  if (j.contains("latent")) j.at("latent").get_to(c.latent);
  if (j.contains("outputs")) j.at("outputs").get_to(c.outputs);
  if (j.contains("kl_weight")) j.at("kl_weight").get_to(c.kl_weight);
  if (j.contains("cell")) c.cell = cell_kind_from_string(j.at("cell").get<std::string>());
  c.validate();
  return c;
}

Vae::Vae(std::size_t features, VaeConfig cfg, std::uint64_t seed) : features_(features), cfg_(std::move(cfg)) {
  cfg_.validate();
  if (cfg_.outputs > features) throw Error(ErrorCode::InvalidConfig, "VAE reconstructs more columns than it reads");
  Rng rng(seed);
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    encoder_.push_back(GatedCell::make(*this, "enc" + std::to_string(l), cfg_.cell, l == 0 ? features : cfg_.hidden,
                                       cfg_.hidden, rng));
  }
  mu_head_ = Linear::make(*this, "mu", cfg_.hidden, cfg_.latent, rng);
  logvar_head_ = Linear::make(*this, "logvar", cfg_.hidden, cfg_.latent, rng);
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    decoder_.push_back(GatedCell::make(*this, "dec" + std::to_string(l), cfg_.cell, l == 0 ? cfg_.latent : cfg_.hidden,
                                       cfg_.hidden, rng));
  }
  out_head_ = Linear::make(*this, "out", cfg_.hidden, cfg_.outputs, rng);
}

Vae::Encoded Vae::encode(Tape& tape, std::span<const Matrix* const> windows) {
  check_windows(windows, features_);
  std::vector<GatedCell::Bound> bound;
  std::vector<GatedCell::State> state;
  for (const auto& c : encoder_) {
    bound.push_back(c.bind(tape, *this));
    state.push_back(c.zero_state(tape, windows.size()));
  }
  for (std::size_t t = 0; t < windows.front()->rows; ++t) {
    Var x = tape.constant(batch_step(windows, t));
    for (std::size_t l = 0; l < encoder_.size(); ++l) {
      state[l] = encoder_[l].step(bound[l], x, state[l]);
      x = state[l].h;
    }
  }
  const Var h = state.back().h;
  return {mu_head_.forward(tape, *this, h), logvar_head_.forward(tape, *this, h)};
}

Var gaussian_kl(Var mu, Var logvar) {
  const Matrix& m = mu.value();
  const Matrix& lv = logvar.value();
  if (m.rows != lv.rows || m.cols != lv.cols) throw Error(ErrorCode::ShapeMismatch, "KL mean and log-variance differ");
  const double rows = static_cast<double>(m.rows);
  double kl = 0.0;
  for (std::size_t i = 0; i < m.data.size(); ++i) {
    kl += std::max(0.0, std::expm1(lv.data[i]) - lv.data[i]) + m.data[i] * m.data[i];
  }
  const std::size_t im = mu.id();
  const std::size_t il = logvar.id();
  return mu.tape()->push(Matrix(1, 1, 0.5 * kl / rows), [im, il, rows](Tape& t, std::size_t self) {
    const double g = t.grad(self).data[0] / rows;
    const Matrix& mv = t.value(im);
    const Matrix& lvv = t.value(il);
    Matrix& dm = t.grad(im);
    for (std::size_t i = 0; i < mv.data.size(); ++i) dm.data[i] += g * mv.data[i];
    Matrix& dl = t.grad(il);
    for (std::size_t i = 0; i < lvv.data.size(); ++i) dl.data[i] += g * 0.5 * std::expm1(lvv.data[i]);
  });
}

Vae::Loss Vae::loss(Tape& tape, std::span<const Matrix* const> windows, const Matrix& noise) {
  const Encoded enc = encode(tape, windows);
  const std::size_t batch = windows.size();
  if (noise.rows != batch || noise.cols != cfg_.latent) throw Error(ErrorCode::ShapeMismatch, "VAE noise shape differs");
  const Var z = add(enc.mu, mul(exp(scale(enc.logvar, 0.5)), tape.constant(noise)));

  std::vector<GatedCell::Bound> bound;
  std::vector<GatedCell::State> state;
  for (const auto& c : decoder_) {
    bound.push_back(c.bind(tape, *this));
    state.push_back(c.zero_state(tape, batch));
  }
  std::vector<Var> errors;
  Matrix target(batch, cfg_.outputs);
  for (std::size_t t = 0; t < windows.front()->rows; ++t) {
    Var x = z;
    for (std::size_t l = 0; l < decoder_.size(); ++l) {
      state[l] = decoder_[l].step(bound[l], x, state[l]);
      x = state[l].h;
    }
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t c = 0; c < cfg_.outputs; ++c) target(b, c) = (*windows[b])(t, c);
    }
    errors.push_back(sse(out_head_.forward(tape, *this, x), target));
  }
  Var recon = errors.front();
  for (std::size_t i = 1; i < errors.size(); ++i) recon = add(recon, errors[i]);
  recon = scale(recon, 1.0 / static_cast<double>(batch));
  const Var kl = gaussian_kl(enc.mu, enc.logvar);
  return {add(recon, scale(kl, cfg_.kl_weight)), recon, kl};
}

std::vector<double> Vae::embed(const Matrix& window) {
  const Matrix* ptr = &window;
  Tape tape;
  return encode(tape, std::span<const Matrix* const>(&ptr, 1)).mu.value().data;
}

Matrix Vae::embed_batch(std::span<const Matrix> windows) {
  Matrix out(windows.size(), cfg_.latent);
  constexpr std::size_t kChunk = 256;
  std::size_t start = 0;
  while (start < windows.size()) {
    std::size_t end = start + 1;
    while (end < windows.size() && end - start < kChunk && windows[end].rows == windows[start].rows) ++end;
    std::vector<const Matrix*> ptrs;
    for (std::size_t i = start; i < end; ++i) ptrs.push_back(&windows[i]);
    Tape tape;
    const Matrix& mu = encode(tape, ptrs).mu.value();
    std::copy(mu.data.begin(), mu.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(start * cfg_.latent));
    start = end;
  }
  return out;
}

nlohmann::json Vae::to_json() const {
  return {{"type", "vae"}, {"features", features_}, {"config", paincast::nn::to_json(cfg_)}, {"params", weights_json()}};
}

Vae Vae::from_json(const nlohmann::json& j) {
  Vae m(j.at("features").get<std::size_t>(), vae_config_from_json(j.at("config")), 0);
  m.load_weights(j.at("params"));
  return m;
}

TrainTrace vae_train(Vae& model, std::span<const Matrix> windows, const TrainConfig& cfg) {
  if (windows.empty()) throw Error(ErrorCode::EmptyTrainingSet, "VAE training set is empty");
  const std::size_t latent = model.config().latent;
  return train_loop(model, windows.size(), cfg, 1, [&](Tape& tape, std::span<const std::size_t> idx, Rng& rng) {
    Matrix noise(idx.size(), latent);
    for (double& v : noise.data) v = rng.normal();
    const auto ptrs = pointers_of(windows, idx);
    return model.loss(tape, ptrs, noise).total;
  });
}

}  // namespace paincast::nn
