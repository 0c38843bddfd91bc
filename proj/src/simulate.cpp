#include "areal/simulate.hpp"

#include "areal/error.hpp"
#include "areal/icar.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace areal {

namespace {

using Eigen::Index;

Index ix(std::size_t i) { return static_cast<Index>(i); }

double draw_poisson(Rng& rng, double mean) {
  std::poisson_distribution<long long> dist(mean);
  return static_cast<double>(dist(rng));
}

}  // namespace

SpatialGraph make_lattice(std::size_t rows, std::size_t cols) {
  if (rows < 2 || cols < 2) throw ValidationError("lattice needs at least 2 rows and 2 columns");
  std::vector<Edge> edges;
  edges.reserve(2 * rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const auto i = r * cols + c;
      if (c + 1 < cols) edges.push_back({i, i + 1});
      if (r + 1 < rows) edges.push_back({i, i + cols});
    }
  return build_graph(rows * cols, edges);
}

IcarPriorSampler::IcarPriorSampler(const SpatialGraph& graph) : graph_(&graph) {
  const auto n = graph.size();
  if (n > kMaxAreas)
    throw ValidationError("spectral ICAR sampling is limited to " + std::to_string(kMaxAreas) + " areas");
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(ix(n), ix(n));
  for (std::size_t i = 0; i < n; ++i) {
    q(ix(i), ix(i)) = graph.weight_sum(i);
    const auto nb = graph.neighbors(i);
    const auto w = graph.weights(i);
    for (std::size_t k = 0; k < nb.size(); ++k) q(ix(i), ix(nb[k])) = -w[k];
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(q);
  const auto& values = eig.eigenvalues();
  const double tol = 1e-9 * std::max(1.0, values.cwiseAbs().maxCoeff());
  std::vector<Index> keep;
  for (Index k = 0; k < values.size(); ++k)
    if (values[k] > tol) keep.push_back(k);
  basis_.resize(ix(n), ix(keep.size()));
  inv_sqrt_eig_.resize(ix(keep.size()));
  for (std::size_t k = 0; k < keep.size(); ++k) {
    basis_.col(ix(k)) = eig.eigenvectors().col(keep[k]);
    inv_sqrt_eig_[ix(k)] = 1.0 / std::sqrt(values[keep[k]]);
  }
}

Eigen::VectorXd IcarPriorSampler::draw(Rng& rng, double variance) const {
  Eigen::VectorXd z(inv_sqrt_eig_.size());
  for (Index k = 0; k < z.size(); ++k) z[k] = draw_normal(rng) * inv_sqrt_eig_[k];
  Eigen::VectorXd x = std::sqrt(variance) * (basis_ * z);
  center_components(*graph_, {x.data(), static_cast<std::size_t>(x.size())});
  return x;
}

Eigen::MatrixXd IcarPriorSampler::pseudo_inverse() const {
  return basis_ * inv_sqrt_eig_.array().square().matrix().asDiagonal() * basis_.transpose();
}

Stage1Simulation simulate_stage1(const SpatialGraph& graph, std::span<const double> lambda,
                                 std::span<const double> sigma2, std::uint64_t seed,
                                 std::span<const double> alpha, std::size_t anchor_index) {
  const auto p = lambda.size();
  if (p == 0) throw ValidationError("need at least one indicator");
  if (sigma2.size() != p) throw ValidationError("sigma2 length does not match lambda");
  if (!alpha.empty() && alpha.size() != p) throw ValidationError("alpha length does not match lambda");
  if (anchor_index >= p || lambda[anchor_index] != 1.0)
    throw ValidationError("anchor loading must equal 1");
  for (double s : sigma2)
    if (!(s >= 0.0)) throw ValidationError("noise variances must be nonnegative");

  Rng rng = make_stream(seed, 0);
  const IcarPriorSampler prior(graph);
  Stage1Simulation out;
  out.eta = prior.draw(rng);
  const auto n = graph.size();
  Eigen::MatrixXd z(ix(n), ix(p));
  for (std::size_t j = 0; j < p; ++j) {
    const double a = alpha.empty() ? 0.0 : alpha[j];
    const double sd = std::sqrt(sigma2[j]);
    for (std::size_t i = 0; i < n; ++i) z(ix(i), ix(j)) = a + lambda[j] * out.eta[ix(i)] + sd * draw_normal(rng);
  }
  std::vector<std::string> names;
  for (std::size_t j = 0; j < p; ++j) names.push_back("z" + std::to_string(j + 1));
  out.panel = IndicatorPanel::from_matrix(std::move(z), std::move(names));
  return out;
}

SvcModelState draw_svc_truth(const SvcModelSpec& spec, const SpatialGraph& graph,
                             const Eigen::VectorXd& beta, double tau_phi, double tau_v,
                             double tau_delta, Rng& rng) {
  SvcModelState s = zero_state(spec);
  if (beta.size() != s.beta.size()) throw ValidationError("beta length does not match the rung");
  s.beta = beta;
  s.tau_phi = tau_phi;
  s.tau_v = tau_v;
  s.tau_delta = tau_delta;
  if (!spec.has_bym()) return s;
  const IcarPriorSampler prior(graph);
  for (Index i = 0; i < s.phi.size(); ++i) s.phi[i] = draw_normal(rng, 0.0, 1.0 / std::sqrt(tau_phi));
  s.v = prior.draw(rng, 1.0 / tau_v);
  if (spec.has_delta()) s.delta = prior.draw(rng, 1.0 / tau_delta);
  return s;
}

Stage2Simulation simulate_stage2(const SvcModelSpec& spec, const SvcModelState& truth,
                                 std::uint64_t seed, std::size_t n_suppressed) {
  spec.validate();
  const auto n = spec.n_areas();
  if (n_suppressed > n) throw ValidationError("cannot suppress more areas than exist");
  if ((spec.offsets.array() <= 0.0).any()) throw ValidationError("expected counts must be positive");
  Rng rng = make_stream(seed, 0);
  Stage2Simulation out;
  out.mean = linear_predictor(truth, spec).array().exp() * spec.offsets.array();
  out.counts.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.counts[i] = draw_poisson(rng, out.mean[ix(i)]);
  out.suppressed.assign(n, false);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t k = 0; k < n_suppressed; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, n - 1);
    std::swap(order[k], order[pick(rng)]);
    out.suppressed[order[k]] = true;
    out.counts[order[k]] = std::nan("");
  }
  return out;
}

Dataset simulate_dataset(const DatasetConfig& cfg) {
  if (cfg.lambda.empty() || cfg.lambda.front() != 1.0)
    throw ValidationError("first loading must equal 1");
  if (cfg.n_groups == 0 || cfg.n_strata == 0) throw ValidationError("need at least one group and stratum");
  Dataset d;
  d.graph = make_lattice(cfg.rows, cfg.cols);
  const auto n = d.graph.size();
  const auto p = cfg.lambda.size();
  Rng rng = make_stream(cfg.seed, 0);
  const IcarPriorSampler prior(d.graph);

  for (std::size_t i = 0; i < n; ++i) {
    d.area_ids.push_back("A" + std::to_string(1000 + i));
    d.names.push_back("area_" + std::to_string(i));
    // contiguous column bands
    const auto col = i % cfg.cols;
    d.groups.push_back("G" + std::to_string(1 + col * cfg.n_groups / cfg.cols));
  }

  d.true_eta = prior.draw(rng);
  d.indicators.resize(ix(n), ix(p));
  for (std::size_t j = 0; j < p; ++j) {
    d.indicator_names.push_back("indicator_" + std::to_string(j + 1));
    const double centre = 10.0 * static_cast<double>(j + 1);
    const double scale = 1.0 + 0.5 * static_cast<double>(j);
    for (std::size_t i = 0; i < n; ++i) {
      const double z = cfg.lambda[j] * d.true_eta[ix(i)] +
                       std::sqrt(cfg.indicator_noise_variance) * draw_normal(rng);
      d.indicators(ix(i), ix(j)) = centre + scale * z;
      if (draw_uniform(rng) < cfg.indicator_missing_fraction) d.indicators(ix(i), ix(j)) = std::nan("");
    }
  }

  // Smooth segregation field mapped into (-1, 1).
  const Eigen::VectorXd ice_field = prior.draw(rng);
  const double ice_scale = std::max(1e-12, ice_field.cwiseAbs().maxCoeff());
  d.privileged.resize(ix(n));
  d.deprived.resize(ix(n));
  d.total.resize(ix(n));
  Eigen::VectorXd ice(ix(n));
  for (std::size_t i = 0; i < n; ++i) {
    const double t = std::round(2000.0 + 8000.0 * draw_uniform(rng));
    const double s = 0.8 * ice_field[ix(i)] / ice_scale;
    const double a = std::round(0.5 * t * 0.7 * (1.0 + s));
    const double b = std::round(0.5 * t * 0.7 * (1.0 - s));
    d.total[ix(i)] = t;
    d.privileged[ix(i)] = a;
    d.deprived[ix(i)] = b;
    ice[ix(i)] = (a - b) / t;
  }

  d.true_delta = Eigen::VectorXd::Zero(ix(n));
  if (cfg.delta_sd > 0.0) {
    for (std::size_t i = 0; i < n; ++i) {
      const double r = static_cast<double>(i / cfg.cols) / static_cast<double>(cfg.rows - 1);
      const double c = static_cast<double>(i % cfg.cols) / static_cast<double>(cfg.cols - 1);
      d.true_delta[ix(i)] = cfg.delta_sd * std::sin(3.0 * r) * std::cos(2.5 * c);
    }
    center_components(d.graph, {d.true_delta.data(), n});
  }
  Eigen::VectorXd v = prior.draw(rng, 1.0 / cfg.tau_v);

  for (std::size_t s = 0; s < cfg.n_strata; ++s) d.strata.push_back("s" + std::to_string(s + 1));
  d.population.resize(ix(n), ix(cfg.n_strata));
  d.deaths.resize(ix(n), ix(cfg.n_strata));
  d.observed.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double eta = cfg.beta0 + cfg.beta_ice * ice[ix(i)] + cfg.beta_factor * d.true_eta[ix(i)] +
                       v[ix(i)] + draw_normal(rng, 0.0, 1.0 / std::sqrt(cfg.tau_phi)) +
                       ice[ix(i)] * d.true_delta[ix(i)];
    for (std::size_t s = 0; s < cfg.n_strata; ++s) {
      const double pop = std::round(d.total[ix(i)] / static_cast<double>(cfg.n_strata) * (0.5 + draw_uniform(rng)));
      const double rate = 0.002 * std::pow(2.0, static_cast<double>(s));
      const double deaths = draw_poisson(rng, pop * rate * std::exp(eta));
      d.population(ix(i), ix(s)) = pop;
      d.deaths(ix(i), ix(s)) = deaths;
      d.observed[i] += deaths;
    }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const auto k_max = std::min(cfg.n_suppressed, n);
  for (std::size_t k = 0; k < k_max; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, n - 1);
    std::swap(order[k], order[pick(rng)]);
    d.observed[order[k]] = std::nan("");
    d.deaths.row(ix(order[k])).setConstant(std::nan(""));
  }
  return d;
}

}  // namespace areal
