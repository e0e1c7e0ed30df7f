#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <vector>

#include "capmt/data.hpp"
#include "capmt/eval.hpp"
#include "capmt/routing.hpp"
#include "capmt/train.hpp"
#include "capmt/visual.hpp"

namespace py = pybind11;

namespace {

using Mat = std::vector<std::vector<double>>;

capmt::Tensor tensor_from(const Mat& rows) {
  if (rows.empty() || rows[0].empty()) throw capmt::InputError("empty matrix");
  std::vector<double> flat;
  for (const auto& r : rows) {
    if (r.size() != rows[0].size()) throw capmt::InputError("ragged matrix");
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return capmt::Tensor::from({static_cast<std::int64_t>(rows.size()),
                              static_cast<std::int64_t>(rows[0].size())},
                             std::move(flat));
}

Mat to_rows(const capmt::Tensor& t) {
  const std::int64_t r = t.shape()[0];
  const std::int64_t c = t.shape().size() == 2 ? t.shape()[1] : 1;
  Mat out(static_cast<std::size_t>(r), std::vector<double>(static_cast<std::size_t>(c)));
  for (std::int64_t i = 0; i < r; ++i)
    for (std::int64_t j = 0; j < c; ++j)
      out[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
          t.value()[static_cast<std::size_t>(i * c + j)];
  return out;
}

// Seeded routing module over plain nested lists.
class Router {
 public:
  Router(std::int64_t d_capsule, std::int64_t d_model, int n_high, int n_iterations,
         std::uint64_t seed) {
    capmt::Rng rng(seed);
    params_ = capmt::make_dccn({d_capsule, d_model, n_high, n_iterations}, rng);
  }

  std::vector<double> route(const std::vector<double>& context, const Mat& features) const {
    capmt::Graph g(capmt::Graph::Mode::kInfer);
    capmt::Tensor ctx = capmt::Tensor::from(
        {static_cast<std::int64_t>(context.size()), 1}, context);
    return capmt::route(g, params_, ctx, tensor_from(features)).value();
  }

  std::vector<double> route_conventional(const Mat& features) const {
    capmt::Graph g(capmt::Graph::Mode::kInfer);
    return capmt::route_conventional(g, params_, tensor_from(features)).value();
  }

  // (iteration, low, high, logit, coupling, correlation, v_norm, m_norm) rows.
  std::vector<std::tuple<int, int, int, double, double, double, double, double>> trace(
      const std::vector<double>& context, const Mat& features) const {
    capmt::Graph g(capmt::Graph::Mode::kInfer);
    capmt::Tensor ctx = capmt::Tensor::from(
        {static_cast<std::int64_t>(context.size()), 1}, context);
    capmt::RoutingTrace trace;
    capmt::route(g, params_, ctx, tensor_from(features), &trace);
    std::vector<std::tuple<int, int, int, double, double, double, double, double>> rows;
    for (const auto& r : trace)
      rows.emplace_back(r.iteration, r.low, r.high, r.logit, r.coupling, r.correlation, r.v_norm,
                        r.m_norm);
    return rows;
  }

 private:
  capmt::DccnParams params_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "capsule-routing multimodal translation core";

  py::register_exception<capmt::Error>(m, "CapmtError");

  m.def("pearson", &capmt::pearson, py::arg("u"), py::arg("w"),
        "Pearson correlation over vector entries, population normalization");

  m.def(
      "bleu",
      [](const std::vector<std::string>& hyps, const std::vector<std::string>& refs) {
        return capmt::bleu_lines(hyps, refs);
      },
      py::arg("hypotheses"), py::arg("references"),
      "Corpus-level 4-gram BLEU on whitespace-tokenized lines");

  m.def("lr_schedule", &capmt::lr_schedule, py::arg("step"), py::arg("d_model"),
        py::arg("warmup"), py::arg("factor") = 1.0);

  m.def(
      "synthesize_features",
      [](int sense_id, std::uint64_t seed, int n_classes, int n_senses, int n_regions,
         double noise) {
        capmt::SynthFeatureConfig cfg;
        cfg.n_classes = n_classes;
        cfg.n_senses = n_senses;
        cfg.n_regions = n_regions;
        cfg.noise = noise;
        const capmt::VisualFeatures f = capmt::synthesize_features(sense_id, seed, cfg);
        return py::make_tuple(to_rows(f.global_tensor()), to_rows(f.regional_active_tensor()));
      },
      py::arg("sense_id"), py::arg("seed"), py::arg("n_classes") = 64, py::arg("n_senses") = 2,
      py::arg("n_regions") = 3, py::arg("noise") = 0.0,
      "Deterministic synthetic features; returns (global 196x256, regional Rx256)");

  py::class_<Router>(m, "Router")
      .def(py::init<std::int64_t, std::int64_t, int, int, std::uint64_t>(),
           py::arg("d_capsule") = 256, py::arg("d_model") = 256, py::arg("n_high") = 1,
           py::arg("n_iterations") = 3, py::arg("seed") = 0)
      .def("route", &Router::route, py::arg("context"), py::arg("features"),
           "Context-guided routing of feature rows; returns the fused context vector")
      .def("route_conventional", &Router::route_conventional, py::arg("features"),
           "Routing-by-agreement with squashing, no context guidance")
      .def("trace", &Router::trace, py::arg("context"), py::arg("features"),
           "Per-iteration routing trace rows");
}
