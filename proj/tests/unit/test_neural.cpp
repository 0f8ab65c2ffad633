#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "catch2/catch_amalgamated.hpp"
#include "paincast/error.hpp"
#include "paincast/ingest.hpp"
#include "paincast/neural.hpp"
#include "paincast/pipeline.hpp"
#include "paincast/rng.hpp"
#include "paincast/synth.hpp"

using namespace paincast;
using namespace paincast::nn;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double sd = 1.0) {
  Matrix m(r, c);
  for (double& v : m.data) v = sd * rng.normal();
  return m;
}

// Largest relative error between backprop and central differences over every
// parameter entry. Relative to max(|a|, |n|, floor) so vanishing gradients do
// not divide by zero.
double gradient_error(Module& model, const std::function<Var(Tape&)>& loss_fn, double floor = 1e-6) {
  model.zero_grad();
  {
    Tape tape;
    tape.backward(loss_fn(tape));
  }
  std::vector<Matrix> analytic;
  for (const auto& p : model.params) analytic.push_back(p.grad);
  const double eps = 1e-5;
  double worst = 0.0;
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    auto& value = model.params[i].value.data;
    for (std::size_t j = 0; j < value.size(); ++j) {
      const double keep = value[j];
      value[j] = keep + eps;
      Tape up;
      const double fp = loss_fn(up).scalar();
      value[j] = keep - eps;
      Tape down;
      const double fm = loss_fn(down).scalar();
      value[j] = keep;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic[i].data[j];
      worst = std::max(worst, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor}));
    }
  }
  return worst;
}

std::vector<Matrix> random_windows(std::size_t n, std::size_t len, std::size_t features, Rng& rng) {
  std::vector<Matrix> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_matrix(len, features, rng));
  return out;
}

std::vector<const Matrix*> ptrs(const std::vector<Matrix>& w) {
  std::vector<const Matrix*> p;
  for (const auto& m : w) p.push_back(&m);
  return p;
}

// Noisy sinusoids with a random phase and one of a few periods.
std::vector<Matrix> sine_windows(std::size_t n, std::size_t len, std::size_t features, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Matrix> out;
  for (std::size_t i = 0; i < n; ++i) {
    Matrix w(len, features);
    const double period = 6.0 + 4.0 * static_cast<double>(rng.index(4));
    const double phase = rng.uniform(0.0, 6.283);
    for (std::size_t t = 0; t < len; ++t) {
      for (std::size_t c = 0; c < features; ++c) {
        w(t, c) = std::sin(6.283 * t / period + phase + 0.5 * c) + 0.1 * rng.normal();
      }
    }
    out.push_back(std::move(w));
  }
  return out;
}

// Model-input windows cut from a synthetic cohort, as the pipeline builds them.
std::vector<Matrix> cohort_windows(std::size_t n, std::size_t len) {
  SynthConfig cfg = SynthConfig::defaults();
  cfg.n_patients = 50;
  cfg.n_years = 1;
  const CohortDataset data = interpolate_cohort(generate_cohort(cfg).dataset);
  const ChannelStats st = channel_stats(data);
  std::vector<Matrix> out;
  for (const auto& [id, years] : data.patients) {
    const PatientYear& py = years.at(1);
    for (const auto& [b, e] : py.grid.visit_ranges()) {
      for (std::size_t r = b; r + len <= e && out.size() < n; r += len) out.push_back(pipeline::window_at(py, r, len, st));
    }
  }
  REQUIRE(out.size() == n);
  return out;
}

struct Ops : Module {
  Ops(Rng& rng) {
    add_param("a", random_matrix(3, 4, rng));
    add_param("b", random_matrix(4, 2, rng));
    add_param("r", random_matrix(1, 2, rng));
    add_param("c", random_matrix(3, 2, rng));
  }
};

}  // namespace

TEST_CASE("elementary operations pass gradient checks") {
  Rng rng(1);
  Ops m(rng);
  const std::vector<std::size_t> targets{1, 0, 1};
  const std::vector<std::size_t> pick{2, 0, 2};
  auto loss = [&](Tape& t) {
    const Var a = t.param(m.params[0]), b = t.param(m.params[1]);
    const Var r = t.param(m.params[2]), c = t.param(m.params[3]);
    const Var h = add_row(matmul(a, b), r);               // 3x2
    const Var g = mul(sigmoid(h), tanh(sub(c, h)));       // 3x2
    const Var e = scale(exp(scale(c, 0.3)), 0.5);         // 3x2
    const std::vector<Var> parts{g, e, one_minus(h)};
    const Var cat = concat_cols(parts);                   // 3x6
    const Var sl = slice_cols(cat, 1, 4);                 // 3x4
    const Var nt = matmul_nt(sl, a);                      // 3x3
    const Var rows = gather_rows(nt, pick);
    Matrix target(3, 3, 0.25);
    Matrix target2(3, 2, -0.5);
    const Var fr = frames(sl, 1, 3, 2, 1, 1);
    return add(add(add(softmax_xent(rows, targets), mse(nt, target)), mean(fr)),
               add(scale(sum(relu(h)), 0.1), scale(sse(e, target2), 0.01)));
  };
  CHECK(gradient_error(m, loss) < 1e-4);
}

TEST_CASE("mlp with zero weights outputs zero") {
  MlpRegressor net({5, 8, 1}, 3);
  for (auto& p : net.params) std::fill(p.value.data.begin(), p.value.data.end(), 0.0);
  Rng rng(2);
  for (double v : net.predict(random_matrix(6, 5, rng)).data) CHECK(v == 0.0);
}

TEST_CASE("mlp gradients match finite differences") {
  Rng rng(3);
  MlpRegressor net({4, 6, 5, 1}, 9);
  const Matrix x = random_matrix(7, 4, rng);
  const Matrix y = random_matrix(7, 1, rng);
  CHECK(gradient_error(net, [&](Tape& t) { return mse(net.forward(t, t.constant(x)), y); }) < 1e-4);
}

TEST_CASE("mlp overfits a single sample") {
  MlpRegressor net({6, 16, 1}, 5);
  Rng rng(4);
  const Matrix x = random_matrix(1, 6, rng);
  const std::vector<double> y{2.5};
  const auto trace = mlp_train(net, x, y, {.batch = 1, .epochs = 500, .lr = 1e-2, .seed = 1});
  CHECK(trace.loss.size() == 500);
  const double pred = net.predict(x)(0, 0);
  CHECK((pred - 2.5) * (pred - 2.5) < 1e-4);
}

TEST_CASE("mlp training errors") {
  MlpRegressor net({3, 4, 1}, 1);
  CHECK_THROWS_AS(mlp_train(net, Matrix(2, 4), std::vector<double>{1, 2}, {}), Error);
  CHECK_THROWS_AS(mlp_train(net, Matrix(0, 3), std::vector<double>{}, {}), Error);
  Matrix x(2, 3, 1.0);
  CHECK_THROWS_AS(mlp_train(net, x, std::vector<double>{1.0, std::nan("")}, {.epochs = 1}), Error);
}

TEST_CASE("mlp classifier probabilities sum to one") {
  Rng rng(5);
  const Matrix x = random_matrix(30, 3, rng);
  std::vector<int> labels(30);
  for (std::size_t i = 0; i < 30; ++i) labels[i] = x(i, 0) > 0 ? 1 : (x(i, 1) > 0 ? 2 : 0);
  MlpRegressor net({3, 8, 3}, 2);
  mlp_train_classifier(net, x, labels, {.batch = 10, .epochs = 200, .lr = 1e-2, .seed = 3});
  const Matrix p = mlp_predict_proba(net, x);
  int right = 0;
  for (std::size_t i = 0; i < 30; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < 3; ++k) s += p(i, k);
    REQUIRE(s == Catch::Approx(1.0).margin(1e-12));
    const auto row = p.row(i);
    right += std::max_element(row.begin(), row.end()) - row.begin() == labels[i];
  }
  CHECK(right >= 27);
}

TEST_CASE("rnn with zero weights outputs the head bias") {
  for (CellKind kind : {CellKind::Lstm, CellKind::Gru}) {
    RnnRegressor net(3, 4, 1, kind, 1);
    for (auto& p : net.params) std::fill(p.value.data.begin(), p.value.data.end(), 0.0);
    net.params.back().value.data[0] = 0.7;
    Rng rng(6);
    const auto w = random_windows(3, 5, 3, rng);
    for (double v : net.predict(w)) CHECK(v == Catch::Approx(0.7).margin(1e-15));
  }
}

TEST_CASE("rnn gradients through several steps match finite differences") {
  for (CellKind kind : {CellKind::Lstm, CellKind::Gru}) {
    Rng rng(7);
    RnnRegressor net(3, 4, 2, kind, 11);
    const auto w = random_windows(4, 4, 3, rng);
    const Matrix y = random_matrix(4, 1, rng);
    const auto p = ptrs(w);
    CHECK(gradient_error(net, [&](Tape& t) { return mse(net.forward(t, p), y); }) < 1e-4);
  }
}

TEST_CASE("rnn learns to copy the last pain value") {
  Rng rng(8);
  std::vector<Matrix> train, test;
  std::vector<double> ytrain, ytest;
  for (int i = 0; i < 600; ++i) {
    Matrix w(6, 3);
    for (double& v : w.data) v = rng.uniform();
    (i < 500 ? train : test).push_back(w);
    (i < 500 ? ytrain : ytest).push_back(w(5, 2));
  }
  RnnRegressor net(3, 8, 1, CellKind::Lstm, 4);
  rnn_train(net, train, ytrain, {.batch = 32, .epochs = 80, .lr = 1e-2, .seed = 2});
  const auto pred = net.predict(test);
  double mse_value = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) mse_value += (pred[i] - ytest[i]) * (pred[i] - ytest[i]);
  CHECK(mse_value / pred.size() < 0.05);
}

TEST_CASE("cpc InfoNCE gradients match finite differences") {
  Rng rng(9);
  CpcConfig cfg;
  cfg.channels = {4, 4, 5};
  cfg.kernels = {2, 2, 2};
  cfg.strides = {2, 1, 1};
  cfg.hidden = 5;
  cfg.k_max = 2;
  Cpc net(3, cfg, 13);
  const auto w = random_windows(3, 10, 3, rng);
  const auto p = ptrs(w);
  CHECK(gradient_error(net, [&](Tape& t) { return net.info_nce(t, p); }) < 1e-4);
}

TEST_CASE("untrained cpc loss sits at chance level") {
  const auto windows = cohort_windows(128, 48);
  const auto p = ptrs(windows);
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Cpc net(14, CpcConfig{}, seed);
    Tape tape;
    const double v = net.info_nce(tape, p).scalar();
    worst = std::max(worst, std::abs(v - std::log(128.0)));
  }
  CHECK(worst <= 0.15);
}

TEST_CASE("cpc training lowers the loss and is deterministic") {
  const auto windows = sine_windows(256, 40, 4, 2);
  CpcConfig cfg;
  cfg.channels = {16, 16, 16};
  cfg.hidden = 16;
  Cpc a(4, cfg, 5), b(4, cfg, 5);
  Tape tape;
  const double initial = a.info_nce(tape, ptrs(windows)).scalar();
  const TrainConfig tc{.batch = 32, .epochs = 15, .lr = 3e-3, .seed = 8};
  const auto ta = cpc_pretrain(a, windows, tc);
  const auto tb = cpc_pretrain(b, windows, tc);
  CHECK(ta.loss == tb.loss);
  CHECK(ta.loss.back() < 0.8 * initial);
}

TEST_CASE("cpc embeddings") {
  Cpc net(14, CpcConfig{}, 3);
  Rng rng(10);
  Matrix w = random_matrix(48, 14, rng);
  const auto e = net.embed(w);
  CHECK(e.size() == 64);
  CHECK(net.embed(w) == e);
  for (std::size_t t = 40; t < 48; ++t)
    for (std::size_t c = 0; c < 14; ++c) w(t, c) += 1.0;
  CHECK(net.embed(w) != e);
  const std::vector<Matrix> batch{w, w};
  const Matrix eb = net.embed_batch(batch);
  CHECK(std::vector<double>(eb.row(1).begin(), eb.row(1).end()) == net.embed(w));
  CHECK_THROWS_AS(net.embed(Matrix(4, 14)), Error);
  CHECK_THROWS_AS(cpc_pretrain(net, std::vector<Matrix>{w}, {}), Error);
  CHECK_THROWS_AS(cpc_pretrain(net, std::vector<Matrix>{Matrix(20, 14), Matrix(20, 14)}, {}), Error);
}

TEST_CASE("kl at the prior is zero and never negative") {
  Tape t;
  CHECK(gaussian_kl(t.constant(Matrix(3, 4)), t.constant(Matrix(3, 4))).scalar() == 0.0);
  Rng rng(11);
  for (int i = 0; i < 50; ++i) {
    Tape u;
    REQUIRE(gaussian_kl(u.constant(random_matrix(5, 4, rng, 2.0)), u.constant(random_matrix(5, 4, rng, 2.0))).scalar() >=
            0.0);
  }
}

TEST_CASE("vae elbo gradients with frozen noise match finite differences") {
  Rng rng(12);
  VaeConfig cfg;
  cfg.outputs = 3;
  Vae net(5, cfg, 17);
  const auto w = random_windows(3, 4, 5, rng);
  const auto p = ptrs(w);
  const Matrix noise = random_matrix(3, cfg.latent, rng);
  CHECK(gradient_error(net, [&](Tape& t) { return net.loss(t, p, noise).total; }) < 1e-4);
  Tape t;
  CHECK(net.loss(t, p, noise).kl.scalar() >= 0.0);
}

TEST_CASE("vae training lowers the loss") {
  const auto windows = sine_windows(200, 12, 4, 3);
  VaeConfig cfg;
  cfg.outputs = 4;
  Vae net(4, cfg, 2);
  const auto trace = vae_train(net, windows, {.batch = 20, .epochs = 30, .lr = 1e-2, .seed = 4});
  REQUIRE(trace.loss.size() == 30);
  CHECK(trace.loss.back() < trace.loss.front());
}

TEST_CASE("vae embeddings separate two planted phenotypes") {
  Rng rng(13);
  std::vector<Matrix> windows;
  std::vector<int> group;
  for (int i = 0; i < 200; ++i) {
    const int g = i % 2;
    Matrix w(8, 4);
    for (std::size_t t = 0; t < 8; ++t)
      for (std::size_t c = 0; c < 4; ++c) w(t, c) = (g ? 1.0 : -1.0) + 0.4 * rng.normal();
    windows.push_back(std::move(w));
    group.push_back(g);
  }
  VaeConfig cfg;
  cfg.outputs = 4;
  Vae net(4, cfg, 6);
  vae_train(net, windows, {.batch = 20, .epochs = 30, .lr = 1e-2, .seed = 5});
  const Matrix mu = net.embed_batch(windows);
  CHECK(mu.cols == cfg.latent);
  CHECK(net.embed(windows[0]) == net.embed(windows[0]));

  // logistic probe by plain gradient descent
  std::vector<double> wgt(mu.cols, 0.0);
  double bias = 0.0;
  for (int it = 0; it < 2000; ++it) {
    std::vector<double> gw(mu.cols, 0.0);
    double gb = 0.0;
    for (std::size_t i = 0; i < mu.rows; ++i) {
      double z = bias;
      for (std::size_t k = 0; k < mu.cols; ++k) z += wgt[k] * mu(i, k);
      const double err = 1.0 / (1.0 + std::exp(-z)) - group[i];
      for (std::size_t k = 0; k < mu.cols; ++k) gw[k] += err * mu(i, k);
      gb += err;
    }
    for (std::size_t k = 0; k < mu.cols; ++k) wgt[k] -= 0.1 * gw[k] / mu.rows;
    bias -= 0.1 * gb / mu.rows;
  }
  int right = 0;
  for (std::size_t i = 0; i < mu.rows; ++i) {
    double z = bias;
    for (std::size_t k = 0; k < mu.cols; ++k) z += wgt[k] * mu(i, k);
    right += (z > 0) == (group[i] == 1);
  }
  CHECK(right >= 180);
}

TEST_CASE("weights round trip bit exactly") {
  MlpRegressor mlp({3, 4, 1}, 1);
  const auto mlp2 = MlpRegressor::from_json(nlohmann::json::parse(mlp.to_json().dump()));
  for (std::size_t i = 0; i < mlp.params.size(); ++i) CHECK(mlp.params[i].value == mlp2.params[i].value);

  RnnRegressor rnn(3, 4, 2, CellKind::Gru, 2);
  const auto rnn2 = RnnRegressor::from_json(nlohmann::json::parse(rnn.to_json().dump()));
  for (std::size_t i = 0; i < rnn.params.size(); ++i) CHECK(rnn.params[i].value == rnn2.params[i].value);

  Cpc cpc(14, CpcConfig{}, 3);
  auto cpc2 = Cpc::from_json(nlohmann::json::parse(cpc.to_json().dump()));
  Rng rng(1);
  const Matrix w = random_matrix(48, 14, rng);
  CHECK(cpc.embed(w) == cpc2.embed(w));

  Vae vae(14, VaeConfig{}, 4);
  auto vae2 = Vae::from_json(nlohmann::json::parse(vae.to_json().dump()));
  CHECK(vae.embed(w) == vae2.embed(w));

  MlpRegressor other({3, 5, 1}, 1);
  CHECK_THROWS_AS(other.load_weights(mlp.weights_json()), Error);
}

TEST_CASE("glorot init stays within its bound") {
  Rng rng(14);
  const Matrix m = glorot_uniform(10, 20, rng);
  const double bound = std::sqrt(6.0 / 30.0);
  for (double v : m.data) CHECK(std::abs(v) <= bound);
}
