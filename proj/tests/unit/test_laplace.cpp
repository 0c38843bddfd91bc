#include "support.hpp"

#include "areal/error.hpp"
#include "areal/laplace.hpp"
#include "areal/simulate.hpp"

#include <Eigen/Dense>
#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace areal;
namespace ts = testing_support;

namespace {

double gamma_logpdf(double t, const GammaPrior& p) {
  return p.shape * std::log(p.rate) - std::lgamma(p.shape) + (p.shape - 1.0) * std::log(t) - p.rate * t;
}

struct DenseModel {
  Eigen::MatrixXd design;     // areas x latent
  Eigen::MatrixXd precision;  // prior precision including the constraint penalty
};

// Dense design and prior precision for the stacked latent (beta, phi, v, delta).
DenseModel dense_model(const SvcModelSpec& spec, const SpatialGraph& g, const LaplaceHyper& h, double kappa) {
  const auto n = static_cast<Eigen::Index>(spec.n_areas());
  const auto p = static_cast<Eigen::Index>(spec.n_fixed());
  const Eigen::Index d = p + (spec.has_bym() ? 2 * n : 0) + (spec.has_delta() ? n : 0);
  DenseModel m{Eigen::MatrixXd::Zero(n, d), Eigen::MatrixXd::Zero(d, d)};
  const Eigen::MatrixXd q = ts::dense_q(g);
  Eigen::MatrixXd pen = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t c = 0; c < g.n_components(); ++c)
    for (auto i : g.component_members(c))
      for (auto j : g.component_members(c)) pen(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = kappa;
  for (Eigen::Index i = 0; i < n; ++i) {
    m.design(i, 0) = 1.0;
    m.design(i, 1) = spec.covariate[i];
    for (Eigen::Index k = 2; k < p; ++k) m.design(i, k) = spec.latent_factors(i, k - 2);
  }
  m.precision.topLeftCorner(p, p) = Eigen::MatrixXd::Identity(p, p) / spec.beta_prior_variance;
  Eigen::Index at = p;
  if (spec.has_bym()) {
    for (Eigen::Index i = 0; i < n; ++i) {
      m.design(i, at + i) = 1.0;
      m.design(i, at + n + i) = 1.0;
    }
    m.precision.block(at, at, n, n) = h.tau_phi * Eigen::MatrixXd::Identity(n, n);
    m.precision.block(at + n, at + n, n, n) = h.tau_v * q + pen;
    at += 2 * n;
  }
  if (spec.has_delta()) {
    for (Eigen::Index i = 0; i < n; ++i) m.design(i, at + i) = spec.covariate[i];
    m.precision.block(at, at, n, n) = h.tau_delta * q + pen;
  }
  return m;
}

SvcModelSpec gaussian_spec(ModelRung rung, std::size_t n, Rng& rng, std::size_t factors = 0) {
  SvcModelSpec spec;
  spec.rung = rung;
  spec.family = OutcomeFamily::kGaussian;
  spec.gaussian_noise_variance = 0.4;
  spec.covariate.resize(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < spec.covariate.size(); ++i) spec.covariate[i] = draw_uniform(rng) * 2.0 - 1.0;
  spec.offsets = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n));
  if (factors > 0) {
    spec.latent_factors.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(factors));
    for (Eigen::Index i = 0; i < spec.latent_factors.size(); ++i) spec.latent_factors.data()[i] = draw_normal(rng);
  }
  return spec;
}

std::vector<double> gaussian_data(std::size_t n, Rng& rng) {
  std::vector<double> y(n);
  for (auto& v : y) v = draw_normal(rng, 0.3, 1.0);
  return y;
}

Eigen::VectorXd gls(const DenseModel& m, const std::vector<double>& y, double noise) {
  const Eigen::VectorXd yv = Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
  const Eigen::MatrixXd a = m.precision + m.design.transpose() * m.design / noise;
  return a.ldlt().solve(m.design.transpose() * yv / noise);
}

}  // namespace

TEST_CASE("Gaussian M1 and M2 modes equal the exact GLS solution") {
  Rng rng(1);
  const auto g = make_lattice(4, 5);
  for (auto rung : {ModelRung::M1, ModelRung::M2}) {
    const auto spec = gaussian_spec(rung, 20, rng, 2);
    const auto y = gaussian_data(20, rng);
    const auto r = laplace_mode(spec, y, g, LaplaceHyper{});
    const auto exact = gls(dense_model(spec, g, {}, 0.0), y, spec.gaussian_noise_variance);
    CHECK((r.latent_mode - exact).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(r.gradient_max_norm < 1e-6);
  }
}

TEST_CASE("Gaussian M3 and M4 modes equal the penalized GLS solution") {
  Rng rng(2);
  const LaplaceHyper h{3.0, 1.5, 6.0};
  SUBCASE("small components, penalty in the sparse matrix") {
    const auto g = make_lattice(5, 6);
    for (auto rung : {ModelRung::M3, ModelRung::M4}) {
      const auto spec = gaussian_spec(rung, 30, rng, 1);
      const auto y = gaussian_data(30, rng);
      const auto r = laplace_mode(spec, y, g, h);
      const auto exact = gls(dense_model(spec, g, h, 1e4), y, spec.gaussian_noise_variance);
      CHECK((r.latent_mode - exact).cwiseAbs().maxCoeff() < 1e-8);
      const auto sd_oracle = (dense_model(spec, g, h, 1e4).precision +
                              dense_model(spec, g, h, 1e4).design.transpose() * dense_model(spec, g, h, 1e4).design /
                                  spec.gaussian_noise_variance)
                                 .inverse()
                                 .diagonal()
                                 .cwiseSqrt()
                                 .eval();
      CHECK((r.marginal_sd - sd_oracle).cwiseAbs().maxCoeff() < 1e-8);
    }
  }
  SUBCASE("large component through the low-rank update") {
    const auto g = make_lattice(9, 9);
    const auto spec = gaussian_spec(ModelRung::M4, 81, rng);
    const auto y = gaussian_data(81, rng);
    LaplaceOptions opt;
    opt.marginal_variances = false;
    const auto r = laplace_mode(spec, y, g, h, opt);
    const auto exact = gls(dense_model(spec, g, h, 1e4), y, spec.gaussian_noise_variance);
    CHECK((r.latent_mode - exact).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(r.marginal_sd.size() == 0);
  }
}

TEST_CASE("Gaussian log marginal differences are exact") {
  // With the penalty the prior is proper, so log p(y | tau) is a Gaussian
  // density; its tau-dependence must match the Laplace value exactly.
  Rng rng(3);
  const auto g = make_lattice(4, 4);
  const auto spec = gaussian_spec(ModelRung::M3, 16, rng);
  const auto y = gaussian_data(16, rng);
  const Eigen::VectorXd yv = Eigen::Map<const Eigen::VectorXd>(y.data(), 16);
  auto exact = [&](const LaplaceHyper& h) {
    const auto m = dense_model(spec, g, h, 1e4);
    const Eigen::MatrixXd cov = m.design * m.precision.inverse() * m.design.transpose() +
                                spec.gaussian_noise_variance * Eigen::MatrixXd::Identity(16, 16);
    const Eigen::LLT<Eigen::MatrixXd> llt(cov);
    const double logdet = 2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
    return -0.5 * (16.0 * std::log(2.0 * std::numbers::pi) + logdet + yv.dot(llt.solve(yv))) +
           gamma_logpdf(h.tau_phi, spec.precision_prior) + gamma_logpdf(h.tau_v, spec.precision_prior);
  };
  const LaplaceHyper a{1.0, 1.0, 1.0}, b{4.0, 0.5, 1.0}, c{0.7, 9.0, 1.0};
  const double la = laplace_mode(spec, y, g, a).log_marginal;
  const double lb = laplace_mode(spec, y, g, b).log_marginal;
  const double lc = laplace_mode(spec, y, g, c).log_marginal;
  CHECK(std::abs((lb - la) - (exact(b) - exact(a))) < 1e-6);
  CHECK(std::abs((lc - la) - (exact(c) - exact(a))) < 1e-6);
}

TEST_CASE("Poisson M1 mode matches an independent Newton solve") {
  Rng rng(4);
  const auto g = make_lattice(5, 5);
  SvcModelSpec spec;
  spec.rung = ModelRung::M1;
  spec.covariate.resize(25);
  spec.offsets.resize(25);
  std::vector<double> y(25);
  for (Eigen::Index i = 0; i < 25; ++i) {
    spec.covariate[i] = 2.0 * draw_uniform(rng) - 1.0;
    spec.offsets[i] = 10.0 + 30.0 * draw_uniform(rng);
    std::poisson_distribution<int> pois(spec.offsets[i] * std::exp(0.2 - 0.8 * spec.covariate[i]));
    y[static_cast<std::size_t>(i)] = pois(rng);
  }
  Eigen::Vector2d b(0.0, 0.0);
  for (int it = 0; it < 100; ++it) {
    Eigen::Vector2d grad = -b / 1000.0;
    Eigen::Matrix2d hess = Eigen::Matrix2d::Identity() / 1000.0;
    for (Eigen::Index i = 0; i < 25; ++i) {
      const Eigen::Vector2d xi(1.0, spec.covariate[i]);
      const double mu = spec.offsets[i] * std::exp(xi.dot(b));
      grad += (y[static_cast<std::size_t>(i)] - mu) * xi;
      hess += mu * xi * xi.transpose();
    }
    b += hess.ldlt().solve(grad);
  }
  const auto r = laplace_mode(spec, y, g, LaplaceHyper{});
  CHECK(std::abs(r.mode.beta[0] - b[0]) < 1e-8);
  CHECK(std::abs(r.mode.beta[1] - b[1]) < 1e-8);
}

TEST_CASE("Poisson M4 converges to a stationary point") {
  DatasetConfig cfg;
  cfg.rows = 8;
  cfg.cols = 8;
  const auto ds = simulate_dataset(cfg);
  SvcModelSpec spec;
  spec.rung = ModelRung::M4;
  spec.covariate = ((ds.privileged - ds.deprived).array() / ds.total.array()).matrix();
  spec.offsets = Eigen::VectorXd::Constant(64, 40.0);
  std::vector<double> y = ds.observed;
  const auto r = laplace_mode(spec, y, ds.graph, LaplaceHyper{20.0, 5.0, 2.0});
  CHECK(r.gradient_max_norm < 1e-6);
  CHECK(std::abs(r.mode.v.sum()) < 1e-3);
  CHECK(std::abs(r.mode.delta.sum()) < 1e-3);
  CHECK(r.beta_covariance.rows() == 2);
  CHECK(r.beta_covariance(0, 0) > 0.0);
}

TEST_CASE("hyperparameter grids and selection") {
  Rng rng(5);
  const std::vector<double> values{0.5, 2.0, 8.0, 32.0};
  CHECK(make_hyper_grid(gaussian_spec(ModelRung::M1, 4, rng), values).size() == 1);
  CHECK(make_hyper_grid(gaussian_spec(ModelRung::M3, 4, rng), values).size() == 16);
  CHECK(make_hyper_grid(gaussian_spec(ModelRung::M4, 4, rng), values).size() == 64);
  CHECK_THROWS_AS(make_hyper_grid(gaussian_spec(ModelRung::M3, 4, rng), std::vector<double>{0.0}), ValidationError);

  const auto g = make_lattice(4, 4);
  const auto spec = gaussian_spec(ModelRung::M3, 16, rng);
  const auto y = gaussian_data(16, rng);
  const auto grid = make_hyper_grid(spec, values);
  const auto best = fit_stage2_laplace(spec, y, g, grid);
  REQUIRE(best.grid.size() == 16);
  double top = -INFINITY;
  for (const auto& p : best.grid) top = std::max(top, p.log_marginal);
  CHECK(best.log_marginal == top);
  // warm starts do not change the answer
  const auto cold = laplace_mode(spec, y, g, best.hyper);
  CHECK((cold.latent_mode - best.latent_mode).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("Newton failure reports the gradient") {
  Rng rng(6);
  const auto g = make_lattice(3, 3);
  SvcModelSpec spec;
  spec.rung = ModelRung::M3;
  spec.covariate = Eigen::VectorXd::Zero(9);
  spec.offsets = Eigen::VectorXd::Constant(9, 1.0);
  const std::vector<double> y{50, 0, 3, 9, 1, 0, 22, 4, 7};
  LaplaceOptions opt;
  opt.max_iterations = 1;
  try {
    laplace_mode(spec, y, g, LaplaceHyper{}, opt);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("gradient max-norm") != std::string::npos);
  }
}
