#include "areal/cli.hpp"
#include "areal/error.hpp"
#include "areal/graph.hpp"
#include "areal/icar.hpp"
#include "areal/mcmc.hpp"
#include "areal/pipeline.hpp"
#include "areal/simulate.hpp"
#include "areal/stage1.hpp"
#include "areal/stage2.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <sstream>

namespace py = pybind11;
using namespace areal;

namespace {

McmcConfig make_config(std::size_t n_iter, std::size_t burn_in, std::size_t thin, std::size_t chains,
                       std::uint64_t seed) {
  McmcConfig c;
  c.n_iter = n_iter;
  c.burn_in = burn_in;
  c.thin = thin;
  c.n_chains = chains;
  c.seed = seed;
  return c;
}

// {name: draws x size array} pooled in chain order, plus per-draw chain ids.
py::dict archive_to_dict(const ChainArchive& archive) {
  py::dict out;
  const auto total = static_cast<Eigen::Index>(archive.total_draws());
  for (const auto& p : archive.params()) {
    Eigen::MatrixXd m(total, static_cast<Eigen::Index>(p.size));
    Eigen::Index row = 0;
    for (std::size_t c = 0; c < archive.n_chains(); ++c)
      for (std::size_t k = 0; k < archive.n_draws(c); ++k, ++row) {
        const auto d = archive.draw(c, k);
        for (std::size_t j = 0; j < p.size; ++j) m(row, static_cast<Eigen::Index>(j)) = d[p.offset + j];
      }
    out[py::str(p.name)] = m;
  }
  std::vector<std::size_t> chain;
  for (std::size_t c = 0; c < archive.n_chains(); ++c) chain.insert(chain.end(), archive.n_draws(c), c);
  out["chain"] = chain;
  out["metadata"] = archive.metadata;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Two-stage Bayesian spatial factor and disease-mapping models";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception<SchemaError>(m, "SchemaError", PyExc_ValueError);

  py::class_<SpatialGraph>(m, "SpatialGraph")
      .def_property_readonly("size", &SpatialGraph::size)
      .def_property_readonly("n_edges", &SpatialGraph::n_edges)
      .def_property_readonly("n_components", &SpatialGraph::n_components)
      .def_property_readonly("n_islands", &SpatialGraph::n_islands)
      .def("neighbors", [](const SpatialGraph& g, std::size_t i) {
        if (i >= g.size()) throw py::index_error("area index out of range");
        const auto nb = g.neighbors(i);
        return std::vector<std::size_t>(nb.begin(), nb.end());
      })
      .def("edges", [](const SpatialGraph& g) {
        std::vector<std::tuple<std::size_t, std::size_t, double>> out;
        for (const auto& e : g.edges()) out.emplace_back(e.src, e.dst, e.weight);
        return out;
      })
      .def("__len__", &SpatialGraph::size);

  m.def(
      "build_graph",
      [](std::size_t n, const std::vector<std::tuple<std::size_t, std::size_t, double>>& edges) {
        std::vector<Edge> e;
        for (const auto& [a, b, w] : edges) e.push_back({a, b, w});
        return build_graph(n, e);
      },
      py::arg("n_areas"), py::arg("edges"), "Graph from (src, dst, weight) triples.");
  m.def("make_lattice", &make_lattice, py::arg("rows"), py::arg("cols"));

  m.def(
      "icar_logdensity",
      [](const SpatialGraph& g, const Eigen::VectorXd& x, double variance) {
        return icar_logdensity_unnormalized(IcarField(g, x, variance));
      },
      py::arg("graph"), py::arg("values"), py::arg("variance") = 1.0);

  m.def(
      "morans_i",
      [](const SpatialGraph& g, const std::vector<double>& x) {
        const auto r = morans_i(g, x);
        py::dict d;
        d["statistic"] = r.statistic;
        d["expected"] = r.expected;
        d["variance"] = r.variance;
        d["z_score"] = r.z_score;
        d["p_value"] = r.p_value;
        d["n"] = r.n;
        return d;
      },
      py::arg("graph"), py::arg("values"));

  m.def(
      "compute_ice",
      [](const std::vector<double>& a, const std::vector<double>& p, const std::vector<double>& t) {
        return compute_ice(a, p, t);
      },
      py::arg("privileged"), py::arg("deprived"), py::arg("total"));

  m.def(
      "standardize",
      [](const Eigen::MatrixXd& values) { return standardize(IndicatorPanel::from_matrix(values)).values; },
      py::arg("values"), "Column z-scores over non-NaN cells (sd with n - 1).");

  m.def(
      "simulate_stage1",
      [](const SpatialGraph& g, const std::vector<double>& lambda, const std::vector<double>& sigma2,
         std::uint64_t seed) {
        auto s = simulate_stage1(g, lambda, sigma2, seed);
        return py::make_tuple(s.panel.values, s.eta);
      },
      py::arg("graph"), py::arg("lam"), py::arg("sigma2"), py::arg("seed"));

  m.def(
      "fit_stage1",
      [](const Eigen::MatrixXd& values, const SpatialGraph& g, std::size_t anchor, std::size_t n_iter,
         std::size_t burn_in, std::size_t thin, std::size_t chains, std::uint64_t seed) {
        const auto panel = IndicatorPanel::from_matrix(values);
        FactorModelSpec spec;
        spec.n_indicators = panel.n_indicators();
        spec.anchor_index = anchor;
        ChainArchive archive;
        {
          py::gil_scoped_release release;
          archive = fit_stage1(panel, g, spec, make_config(n_iter, burn_in, thin, chains, seed));
        }
        return archive_to_dict(archive);
      },
      py::arg("values"), py::arg("graph"), py::arg("anchor") = 0, py::arg("n_iter") = 100000,
      py::arg("burn_in") = 40000, py::arg("thin") = 50, py::arg("chains") = 2, py::arg("seed") = 1);

  m.def(
      "fit_stage2",
      [](const SpatialGraph& g, const std::vector<double>& counts, const Eigen::VectorXd& expected,
         const Eigen::VectorXd& ice, const std::optional<Eigen::MatrixXd>& factors, const std::string& model,
         std::size_t n_iter, std::size_t burn_in, std::size_t thin, std::size_t chains, std::uint64_t seed) {
        SvcModelSpec spec;
        spec.rung = parse_rung(model);
        spec.offsets = expected;
        spec.covariate = ice;
        if (factors) spec.latent_factors = *factors;
        ChainArchive archive;
        {
          py::gil_scoped_release release;
          archive = fit_stage2_mcmc(spec, counts, g, make_config(n_iter, burn_in, thin, chains, seed));
        }
        auto d = archive_to_dict(archive);
        d["dic"] = compute_dic(archive, spec, counts).dic;
        d["waic"] = compute_waic(archive, spec, counts).waic;
        return d;
      },
      py::arg("graph"), py::arg("counts"), py::arg("expected"), py::arg("ice"), py::arg("factors") = py::none(),
      py::arg("model") = "M4", py::arg("n_iter") = 100000, py::arg("burn_in") = 40000, py::arg("thin") = 50,
      py::arg("chains") = 2, py::arg("seed") = 1,
      "Counts may contain NaN for suppressed areas.");

  m.def(
      "rate_ratio",
      [](const std::vector<double>& draws) {
        const auto r = rate_ratio(draws);
        py::dict d;
        d["exp_of_mean"] = r.exp_of_mean;
        d["mean_of_exp"] = r.mean_of_exp;
        d["lower"] = r.lower;
        d["upper"] = r.upper;
        d["text"] = format_rate_ratio(r);
        return d;
      },
      py::arg("draws"));

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out;
        std::ostringstream err;
        const int code = run_cli(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Run a subcommand in-process; returns (exit code, stdout, stderr).");
}
