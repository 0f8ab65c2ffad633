#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "paincast/cluster.hpp"
#include "paincast/dtw.hpp"
#include "paincast/error.hpp"
#include "paincast/eval.hpp"
#include "paincast/ingest.hpp"
#include "paincast/parallel.hpp"
#include "paincast/pipeline.hpp"
#include "paincast/stats.hpp"
#include "paincast/synth.hpp"

namespace py = pybind11;
using namespace paincast;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

// 1-D arrays are univariate; 2-D arrays are (time, channel). NaN marks a
// missing cell.
dtw::Sequence to_sequence(const Array& a) {
  const auto buf = a.request();
  if (buf.ndim != 1 && buf.ndim != 2) throw py::value_error("expected a 1-D or 2-D array");
  const auto n = static_cast<std::size_t>(buf.shape[0]);
  const std::size_t ch = buf.ndim == 2 ? static_cast<std::size_t>(buf.shape[1]) : 1;
  const auto* p = static_cast<const double*>(buf.ptr);
  dtw::Sequence s(n, ch);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < ch; ++c) {
      const double v = p[i * ch + c];
      if (std::isnan(v)) {
        s.clear(i, c);
      } else {
        s.set(i, c, v);
      }
    }
  }
  return s;
}

Array from_sequence(const dtw::Sequence& s) {
  Array out({s.length(), s.channels()});
  auto m = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < s.length(); ++i)
    for (std::size_t c = 0; c < s.channels(); ++c) m(i, c) = s.observed(i, c) ? s.value(i, c) : std::nan("");
  return out;
}

std::vector<double> to_vector(const Array& a) {
  const auto buf = a.request();
  if (buf.ndim != 1) throw py::value_error("expected a 1-D array");
  const auto* p = static_cast<const double*>(buf.ptr);
  return {p, p + buf.shape[0]};
}

Matrix to_matrix(const Array& a) {
  const auto buf = a.request();
  if (buf.ndim != 2) throw py::value_error("expected a 2-D array");
  Matrix m(static_cast<std::size_t>(buf.shape[0]), static_cast<std::size_t>(buf.shape[1]));
  const auto* p = static_cast<const double*>(buf.ptr);
  std::copy(p, p + m.data.size(), m.data.begin());
  return m;
}

std::vector<dtw::Sequence> to_sequences(const std::vector<Array>& list) {
  std::vector<dtw::Sequence> out;
  out.reserve(list.size());
  for (const auto& a : list) out.push_back(to_sequence(a));
  return out;
}

py::dict correlogram(const stats::Correlogram& c) {
  py::dict d;
  d["values"] = c.values;
  d["band"] = c.band;
  d["n"] = c.n;
  return d;
}

}  // namespace

PYBIND11_MODULE(_paincast, m) {
  m.doc() = "Clinical time-series toolkit: DTW clustering, ARIMA, neural forecasters, experiments.";

  static py::exception<Error> error_type(m, "PaincastError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      error_type(e.what());
    }
  });

  m.def("set_threads", &set_thread_count, py::arg("n"), "Worker cap; 0 uses every core.");

  m.def(
      "dtw_distance",
      [](const Array& q, const Array& c, std::optional<std::size_t> band) {
        dtw::DtwOptions opt;
        opt.band_width = band;
        const auto r = dtw::dtw_distance(to_sequence(q), to_sequence(c), opt);
        return py::make_tuple(r.distance, r.path.steps);
      },
      py::arg("q"), py::arg("c"), py::arg("band_width") = py::none(),
      "Returns (distance, path) where path is a list of (i, j) index pairs.");

  m.def(
      "dba",
      [](const std::vector<Array>& series, std::optional<std::size_t> init, std::size_t max_iter) {
        const auto seqs = to_sequences(series);
        if (seqs.empty()) throw py::value_error("need at least one series");
        const std::size_t start = init.value_or(dtw::medoid(seqs));
        if (start >= seqs.size()) throw py::index_error("init out of range");
        const auto r = dtw::dba_barycenter(seqs, seqs[start], {.max_iter = max_iter});
        return py::make_tuple(from_sequence(r.centroid), r.objective);
      },
      py::arg("series"), py::arg("init") = py::none(), py::arg("max_iter") = 10,
      "Barycenter of the series, started at `init` (default: the medoid). Returns (centroid, objective trace).");

  m.def(
      "kmeans_dtw",
      [](const std::vector<Array>& series, std::size_t k, std::size_t n_init, std::uint64_t seed) {
        const auto seqs = to_sequences(series);
        const auto r = cluster::kmeans_dtw(seqs, {.k = k, .n_init = n_init, .seed = seed});
        std::vector<Array> centroids;
        for (const auto& c : r.centroids) centroids.push_back(from_sequence(c));
        return py::make_tuple(r.labels, centroids, r.inertia);
      },
      py::arg("series"), py::arg("k"), py::arg("n_init") = 3, py::arg("seed") = 1,
      "Returns (labels, centroids, inertia).");

  m.def(
      "nmi", [](const std::vector<int>& a, const std::vector<int>& b) { return cluster::nmi(a, b); }, py::arg("a"),
      py::arg("b"));

  m.def(
      "acf", [](const Array& y, std::size_t max_lag) { return correlogram(stats::acf(to_vector(y), max_lag)); },
      py::arg("y"), py::arg("max_lag") = 20);
  m.def(
      "pacf", [](const Array& y, std::size_t max_lag) { return correlogram(stats::pacf(to_vector(y), max_lag)); },
      py::arg("y"), py::arg("max_lag") = 20);

  m.def(
      "adf_test",
      [](const Array& y, std::optional<std::size_t> lags) {
        const auto r = stats::adf_test(to_vector(y), lags);
        py::dict d;
        d["statistic"] = r.statistic;
        d["lags"] = r.n_lags;
        d["n_obs"] = r.n_obs;
        d["reject_1"] = r.reject_1;
        d["reject_5"] = r.reject_5;
        d["reject_10"] = r.reject_10;
        return d;
      },
      py::arg("y"), py::arg("lags") = py::none());

  m.def(
      "arima_grid_search",
      [](const Array& y) {
        const auto r = stats::arima_grid_search(to_vector(y));
        return stats::to_json(r.best).dump();
      },
      py::arg("y"), "Minimum-AIC ARIMA over the (p, q) grid; returns the chosen model as JSON text.");

  m.def(
      "arima_forecast",
      [](const Array& y, int p, int d, int q, std::size_t h) {
        const auto v = to_vector(y);
        return stats::arima_forecast(stats::arima_fit(v, p, d, q), v, h);
      },
      py::arg("y"), py::arg("p"), py::arg("d"), py::arg("q"), py::arg("h"));

  m.def(
      "mae", [](const Array& p, const Array& t) { return eval::mae(to_vector(p), to_vector(t)); }, py::arg("pred"),
      py::arg("truth"));
  m.def(
      "r2", [](const Array& p, const Array& t) { return eval::r2(to_vector(p), to_vector(t)); }, py::arg("pred"),
      py::arg("truth"));
  m.def(
      "auroc_binary",
      [](const Array& s, const std::vector<int>& y) { return eval::auroc_binary(to_vector(s), y); },
      py::arg("scores"), py::arg("labels"));
  m.def(
      "auroc_macro", [](const Array& s, const std::vector<int>& y) { return eval::auroc_macro(to_matrix(s), y); },
      py::arg("scores"), py::arg("labels"), "Macro one-vs-rest AUROC over the classes present in `labels`.");

  m.def(
      "synth",
      [](const std::string& out_dir, const std::string& config_json) {
        SynthConfig cfg;
        from_json(nlohmann::json::parse(config_json), cfg);
        cfg.validate();
        const SynthCohort c = generate_cohort(cfg);
        save_cohort(out_dir, interpolate_cohort(c.dataset));
        std::ofstream truth(out_dir + "/truth.csv");
        write_truth_csv(truth, c.truth);
        return c.records.size();
      },
      py::arg("out_dir"), py::arg("config_json") = "{}",
      "Writes an interpolated synthetic cohort and its truth labels; returns the record count.");

  m.def(
      "run_short_term",
      [](const std::string& cohort_dir, const std::string& config_json) {
        const auto cfg = pipeline::short_term_config_from_json(nlohmann::json::parse(config_json));
        cfg.validate();
        const CohortDataset data = load_cohort(cohort_dir);
        py::gil_scoped_release release;
        return pipeline::to_json(pipeline::run_short_term(data, cfg)).dump();
      },
      py::arg("cohort_dir"), py::arg("config_json") = "{}");

  m.def(
      "run_long_term",
      [](const std::string& cohort_dir, const std::string& config_json) {
        const auto cfg = pipeline::long_term_config_from_json(nlohmann::json::parse(config_json));
        cfg.validate();
        const CohortDataset data = load_cohort(cohort_dir);
        py::gil_scoped_release release;
        return pipeline::to_json(pipeline::run_long_term(data, cfg)).dump();
      },
      py::arg("cohort_dir"), py::arg("config_json") = "{}");
}
