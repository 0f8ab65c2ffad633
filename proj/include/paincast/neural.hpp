#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "paincast/autodiff.hpp"
#include "paincast/matrix.hpp"

namespace paincast::nn {

struct TrainConfig {
  std::size_t batch = 128;
  std::size_t epochs = 30;
  double lr = 1e-3;
  std::uint64_t seed = 1;
  std::optional<std::size_t> patience;  // epochs without improvement of the training loss

  void validate() const;
};

struct TrainTrace {
  std::vector<double> loss;  // mean batch loss per epoch
};

/// Named parameter list shared by every model. Sub-layers refer to
/// parameters by index so models stay copyable.
class Module {
 public:
  std::vector<Parameter> params;

  std::size_t add_param(std::string name, Matrix init);
  std::vector<Parameter*> pointers();
  void zero_grad();
  std::size_t parameter_count() const;

  /// {"params": [{"name", "shape": [r, c], "data": [...]}, ...]}
  nlohmann::json weights_json() const;
  /// Throws ShapeMismatch when names or shapes differ from this module.
  void load_weights(const nlohmann::json& j);
};

struct Linear {
  std::size_t w = 0;
  std::size_t b = 0;
  std::size_t in = 0;
  std::size_t out = 0;

  static Linear make(Module& m, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                     double gain = 1.0);
  Var forward(Tape& tape, Module& m, Var x) const;
};

enum class CellKind { Lstm, Gru };

std::string to_string(CellKind k);
CellKind cell_kind_from_string(const std::string& s);

/// Gated recurrent cell. With x the input row, h the previous state:
///   LSTM: [i f g o] = x W + h U + b; c' = sig(f) c + sig(i) tanh(g);
///         h' = sig(o) tanh(c')
///   GRU:  [r z] = sig(x W_rz + h U_rz + b_rz); n = tanh(x W_n + b_n + r (h U_n));
///         h' = (1 - z) n + z h
struct GatedCell {
  CellKind kind = CellKind::Lstm;
  std::size_t in = 0;
  std::size_t hidden = 0;
  std::size_t w = 0;
  std::size_t u = 0;
  std::size_t b = 0;

  struct State {
    Var h;
    Var c;  // LSTM only
  };
  struct Bound {
    Var w, u, b;
  };

  static GatedCell make(Module& m, const std::string& name, CellKind kind, std::size_t in, std::size_t hidden,
                        Rng& rng);
  Bound bind(Tape& tape, Module& m) const;
  State zero_state(Tape& tape, std::size_t batch) const;
  State step(const Bound& p, Var x, const State& s) const;
};

/// Rows of `windows` at hour t stacked into a batch x features matrix.
Matrix batch_step(std::span<const Matrix* const> windows, std::size_t t);

// ---------------------------------------------------------------------------
// MLP regressor

class MlpRegressor : public Module {
 public:
  MlpRegressor() = default;
  /// sizes = {inputs, hidden..., outputs}; hidden layers use ReLU.
  MlpRegressor(std::vector<std::size_t> sizes, std::uint64_t seed);

  Var forward(Tape& tape, Var x);
  Matrix predict(const Matrix& x);
  const std::vector<std::size_t>& sizes() const noexcept { return sizes_; }
  nlohmann::json to_json() const;
  static MlpRegressor from_json(const nlohmann::json& j);

 private:
  std::vector<std::size_t> sizes_;
  std::vector<Linear> layers_;
};

/// MSE regression with Adam. Throws ShapeMismatch, EmptyTrainingSet or
/// NonFiniteLoss.
TrainTrace mlp_train(MlpRegressor& model, const Matrix& x, std::span<const double> y, const TrainConfig& cfg);

/// Softmax cross-entropy training; the output layer width is the class count.
TrainTrace mlp_train_classifier(MlpRegressor& model, const Matrix& x, std::span<const int> labels,
                                const TrainConfig& cfg);
/// Row-wise softmax of the network output.
Matrix mlp_predict_proba(MlpRegressor& model, const Matrix& x);

// ---------------------------------------------------------------------------
// Recurrent regressor

class RnnRegressor : public Module {
 public:
  RnnRegressor() = default;
  RnnRegressor(std::size_t features, std::size_t hidden, std::size_t layers, CellKind kind, std::uint64_t seed);

  /// windows: equal-length hour x feature matrices. Output batch x 1.
  Var forward(Tape& tape, std::span<const Matrix* const> windows);
  std::vector<double> predict(std::span<const Matrix> windows);
  std::size_t features() const noexcept { return features_; }
  nlohmann::json to_json() const;
  static RnnRegressor from_json(const nlohmann::json& j);

 private:
  std::size_t features_ = 0;
  std::size_t hidden_ = 0;
  CellKind kind_ = CellKind::Lstm;
  std::vector<GatedCell> cells_;
  Linear head_;
};

TrainTrace rnn_train(RnnRegressor& model, std::span<const Matrix> windows, std::span<const double> y,
                     const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Contrastive predictive coding

struct CpcConfig {
  std::vector<std::size_t> channels{32, 32, 64};
  std::vector<std::size_t> kernels{4, 4, 4};
  std::vector<std::size_t> strides{2, 2, 2};
  std::size_t hidden = 64;
  std::size_t k_max = 4;
  CellKind cell = CellKind::Gru;

  void validate() const;
  std::size_t downsampling() const;
  /// Length after the encoder: floor(T / stride) per layer.
  std::size_t latent_length(std::size_t window) const;
};

nlohmann::json to_json(const CpcConfig& c);
CpcConfig cpc_config_from_json(const nlohmann::json& j);

class Cpc : public Module {
 public:
  Cpc() = default;
  Cpc(std::size_t features, CpcConfig cfg, std::uint64_t seed);

  const CpcConfig& config() const noexcept { return cfg_; }
  std::size_t features() const noexcept { return features_; }

  struct Forward {
    Var z;                 // (batch * T') x channels.back(), sample-major
    std::vector<Var> ctx;  // per latent step, batch x hidden
    std::size_t latent_length = 0;
  };
  Forward forward(Tape& tape, std::span<const Matrix* const> windows);
  /// Mean InfoNCE over anchors t and steps k with t + k < T'; negatives are
  /// the other windows of the batch.
  Var info_nce(Tape& tape, std::span<const Matrix* const> windows);
  /// Final aggregator state. Throws WindowTooShort.
  std::vector<double> embed(const Matrix& window);
  Matrix embed_batch(std::span<const Matrix> windows);

  nlohmann::json to_json() const;
  static Cpc from_json(const nlohmann::json& j);

 private:
  std::size_t features_ = 0;
  CpcConfig cfg_;
  std::vector<Linear> conv_;
  GatedCell cell_;
  std::vector<std::size_t> predictors_;
};

/// Throws BatchTooSmall or WindowTooShort.
TrainTrace cpc_pretrain(Cpc& model, std::span<const Matrix> windows, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Variational autoencoder

struct VaeConfig {
  std::size_t hidden = 4;
  std::size_t layers = 2;
  std::size_t latent = 4;
  std::size_t outputs = 7;  // leading columns of the window to reconstruct
  double kl_weight = 1.0;
  CellKind cell = CellKind::Lstm;

  void validate() const;
};

nlohmann::json to_json(const VaeConfig& c);
VaeConfig vae_config_from_json(const nlohmann::json& j);

class Vae : public Module {
 public:
  Vae() = default;
  Vae(std::size_t features, VaeConfig cfg, std::uint64_t seed);

  const VaeConfig& config() const noexcept { return cfg_; }
  std::size_t features() const noexcept { return features_; }

  struct Encoded {
    Var mu;
    Var logvar;
  };
  struct Loss {
    Var total;
    Var reconstruction;  // per-window sum of squared errors, averaged over the batch
    Var kl;              // 0.5 sum(exp(lv) + mu^2 - 1 - lv), averaged over the batch
  };
  Encoded encode(Tape& tape, std::span<const Matrix* const> windows);
  /// noise is batch x latent.
  Loss loss(Tape& tape, std::span<const Matrix* const> windows, const Matrix& noise);
  std::vector<double> embed(const Matrix& window);
  Matrix embed_batch(std::span<const Matrix> windows);

  nlohmann::json to_json() const;
  static Vae from_json(const nlohmann::json& j);

 private:
  std::size_t features_ = 0;
  VaeConfig cfg_;
  std::vector<GatedCell> encoder_;
  Linear mu_head_;
  Linear logvar_head_;
  std::vector<GatedCell> decoder_;
  Linear out_head_;
};

/// KL(N(mu, exp(lv)) || N(0, I)) per row, summed and divided by rows.
Var gaussian_kl(Var mu, Var logvar);

TrainTrace vae_train(Vae& model, std::span<const Matrix> windows, const TrainConfig& cfg);

}  // namespace paincast::nn
