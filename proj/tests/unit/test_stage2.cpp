#include "support.hpp"

#include "areal/error.hpp"
#include "areal/icar.hpp"
#include "areal/simulate.hpp"
#include "areal/stage2.hpp"

#include <Eigen/Dense>
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <regex>

using namespace areal;
namespace ts = testing_support;

namespace {

SvcModelSpec make_spec(ModelRung rung, std::size_t n, Rng& rng, std::size_t n_factors = 0) {
  SvcModelSpec spec;
  spec.rung = rung;
  spec.covariate.resize(static_cast<Eigen::Index>(n));
  spec.offsets.resize(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < spec.covariate.size(); ++i) {
    spec.covariate[i] = 2.0 * draw_uniform(rng) - 1.0;
    spec.offsets[i] = 5.0 + 20.0 * draw_uniform(rng);
  }
  if (n_factors > 0) {
    spec.latent_factors.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n_factors));
    for (Eigen::Index i = 0; i < spec.latent_factors.size(); ++i) spec.latent_factors.data()[i] = draw_normal(rng);
  }
  return spec;
}

SvcModelState random_state(const SvcModelSpec& spec, Rng& rng) {
  auto s = zero_state(spec);
  for (Eigen::Index k = 0; k < s.beta.size(); ++k) s.beta[k] = draw_normal(rng, 0.0, 0.3);
  for (auto* v : {&s.phi, &s.v, &s.delta})
    for (Eigen::Index i = 0; i < v->size(); ++i) (*v)[i] = draw_normal(rng, 0.0, 0.3);
  return s;
}

double log_factorial(double y) {
  double s = 0.0;
  for (double k = 2.0; k <= y; k += 1.0) s += std::log(k);
  return s;
}

}  // namespace

TEST_CASE("linear predictor") {
  Rng rng(1);
  SUBCASE("M1 at zero gives unit rate multiplier") {
    const auto spec = make_spec(ModelRung::M1, 6, rng);
    const auto eta = linear_predictor(zero_state(spec), spec);
    for (Eigen::Index i = 0; i < 6; ++i) CHECK(std::exp(eta[i]) == 1.0);
  }
  SUBCASE("M4 with zero delta equals M3") {
    auto spec4 = make_spec(ModelRung::M4, 8, rng, 2);
    auto s4 = random_state(spec4, rng);
    s4.delta.setZero();
    auto spec3 = spec4;
    spec3.rung = ModelRung::M3;
    auto s3 = s4;
    s3.delta.resize(0);
    CHECK(linear_predictor(s4, spec4) == linear_predictor(s3, spec3));
    const std::vector<double> y{1, 0, 4, 2, 7, 3, 0, 5};
    CHECK(loglik_poisson(s4, spec4, y) == loglik_poisson(s3, spec3, y));
  }
  SUBCASE("random M4 state against term-by-term summation") {
    const auto spec = make_spec(ModelRung::M4, 5, rng, 2);
    const auto s = random_state(spec, rng);
    for (std::size_t i = 0; i < 5; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      const double x = spec.covariate[ii];
      const double oracle = s.beta[0] + s.beta[1] * x + s.beta[2] * spec.latent_factors(ii, 0) +
                            s.beta[3] * spec.latent_factors(ii, 1) + s.v[ii] + s.phi[ii] + x * s.delta[ii];
      CHECK(std::abs(linear_predictor(s, spec, i) - oracle) < 1e-12);
    }
  }
  SUBCASE("rung-state mismatch is rejected") {
    const auto spec = make_spec(ModelRung::M3, 4, rng);
    auto bad = zero_state(spec);
    bad.delta = Eigen::VectorXd::Zero(4);
    CHECK_THROWS_AS(linear_predictor(bad, spec), ValidationError);
    auto short_beta = zero_state(spec);
    short_beta.beta.resize(1);
    CHECK_THROWS_AS(linear_predictor(short_beta, spec, 0), ValidationError);
  }
}

TEST_CASE("Poisson log-likelihood") {
  Rng rng(2);
  SUBCASE("zero counts at unit mean") {
    auto spec = make_spec(ModelRung::M1, 4, rng);
    spec.offsets.setOnes();
    CHECK(loglik_poisson(zero_state(spec), spec, std::vector<double>(4, 0.0)) == doctest::Approx(-4.0));
  }
  SUBCASE("masked areas contribute nothing") {
    auto spec = make_spec(ModelRung::M1, 3, rng);
    spec.offsets.setOnes();
    const double nan = std::nan("");
    CHECK(loglik_poisson(zero_state(spec), spec, std::vector<double>{0.0, nan, 0.0}) == doctest::Approx(-2.0));
    spec.offsets[2] = 0.0;
    CHECK(loglik_poisson(zero_state(spec), spec, std::vector<double>{0.0, nan, 3.0}) == doctest::Approx(-1.0));
  }
  SUBCASE("random instance against the pmf") {
    const auto spec = make_spec(ModelRung::M3, 10, rng);
    const auto s = random_state(spec, rng);
    std::vector<double> y(10);
    for (auto& v : y) v = std::floor(30.0 * draw_uniform(rng));
    const auto eta = linear_predictor(s, spec);
    double oracle = 0.0;
    for (std::size_t i = 0; i < 10; ++i) {
      const double mu = std::exp(eta[static_cast<Eigen::Index>(i)]) * spec.offsets[static_cast<Eigen::Index>(i)];
      oracle += y[i] * std::log(mu) - mu - log_factorial(y[i]);
    }
    CHECK(std::abs(loglik_poisson(s, spec, y) - oracle) < 1e-10);
  }
  SUBCASE("invalid counts") {
    const auto spec = make_spec(ModelRung::M1, 2, rng);
    CHECK_THROWS_AS(loglik_poisson(zero_state(spec), spec, std::vector<double>{-1.0, 2.0}), ValidationError);
    CHECK_THROWS_AS(loglik_poisson(zero_state(spec), spec, std::vector<double>{1.5, 2.0}), ValidationError);
  }
}

TEST_CASE("beta acceptance ratio is antisymmetric") {
  Rng rng(3);
  const auto spec = make_spec(ModelRung::M4, 12, rng, 1);
  std::vector<double> y(12);
  for (auto& v : y) v = std::floor(20.0 * draw_uniform(rng));
  for (int rep = 0; rep < 20; ++rep) {
    const auto a = random_state(spec, rng);
    auto b = a;
    b.beta[static_cast<Eigen::Index>(rep % 3)] += draw_normal(rng, 0.0, 0.1);
    CHECK(std::abs(beta_log_ratio(a, b, spec, y) + beta_log_ratio(b, a, spec, y)) < 1e-12);
  }
}

TEST_CASE("absorbing centering shifts keeps every predictor") {
  Rng rng(4);
  const auto g = make_lattice(4, 5);
  const auto spec = make_spec(ModelRung::M4, 20, rng, 1);
  auto s = random_state(spec, rng);
  s.v.array() += 0.7;
  s.delta.array() -= 0.4;
  const auto before = linear_predictor(s, spec);
  auto v_shift = center_components(g, {s.v.data(), 20});
  s.beta[0] += overall_shift(g, v_shift);
  auto d_shift = center_components(g, {s.delta.data(), 20});
  s.beta[1] += overall_shift(g, d_shift);
  CHECK((linear_predictor(s, spec) - before).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(std::abs(s.v.sum()) < 1e-12);
  CHECK(std::abs(s.delta.sum()) < 1e-12);
}

TEST_CASE("sampler targets the conjugate posterior in the Gaussian sub-case") {
  // 6-area graph, identity link, fixed precisions. The latent vector
  // u = (b0, b1, phi, v) is jointly Gaussian; the sampler reports the
  // centered v with its mean moved into b0.
  const auto g = build_graph(6, std::vector<Edge>{{0, 1, 1.0}, {1, 2, 1.0}, {2, 3, 1.0}, {3, 4, 1.0},
                                                  {4, 5, 1.0}, {0, 3, 1.0}});
  SvcModelSpec spec;
  spec.rung = ModelRung::M3;
  spec.family = OutcomeFamily::kGaussian;
  spec.gaussian_noise_variance = 0.5;
  spec.covariate.resize(6);
  spec.covariate << -0.8, 0.3, 0.5, -0.2, 0.9, -0.6;
  spec.offsets = Eigen::VectorXd::Ones(6);
  spec.fixed_tau_phi = 4.0;
  spec.fixed_tau_v = 2.0;
  const std::vector<double> y{0.4, 1.1, 0.2, -0.5, 1.6, -0.3};

  const Eigen::Index d = 14;
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(6, d);
  for (Eigen::Index i = 0; i < 6; ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = spec.covariate[i];
    x(i, 2 + i) = 1.0;
    x(i, 8 + i) = 1.0;
  }
  Eigen::MatrixXd prior = Eigen::MatrixXd::Zero(d, d);
  prior(0, 0) = prior(1, 1) = 1.0 / spec.beta_prior_variance;
  prior.block(2, 2, 6, 6) = 4.0 * Eigen::MatrixXd::Identity(6, 6);
  prior.block(8, 8, 6, 6) = 2.0 * ts::dense_q(g);
  const Eigen::VectorXd yv = Eigen::Map<const Eigen::VectorXd>(y.data(), 6);
  const Eigen::MatrixXd precision = prior + x.transpose() * x / 0.5;
  const Eigen::MatrixXd cov = precision.inverse();
  const Eigen::VectorXd mean = cov * x.transpose() * yv / 0.5;
  Eigen::MatrixXd l = Eigen::MatrixXd::Identity(d, d);
  l.block(0, 8, 1, 6).setConstant(1.0 / 6.0);
  l.block(8, 8, 6, 6) -= Eigen::MatrixXd::Constant(6, 6, 1.0 / 6.0);
  const Eigen::VectorXd target_mean = l * mean;
  const Eigen::MatrixXd target_cov = l * cov * l.transpose();

  McmcConfig cfg;
  cfg.n_chains = 2;
  cfg.n_iter = 205000;
  cfg.burn_in = 5000;
  cfg.thin = 2;
  cfg.seed = 99;
  const auto archive = fit_stage2_mcmc(spec, y, g, cfg);

  auto coordinate = [&](Eigen::Index k) {
    if (k < 2) return archive.pooled("beta", static_cast<std::size_t>(k));
    if (k < 8) return archive.pooled("phi", static_cast<std::size_t>(k - 2));
    return archive.pooled("v", static_cast<std::size_t>(k - 8));
  };
  for (Eigen::Index k = 0; k < d; ++k) {
    if (k == 1) continue;
    const auto draws = coordinate(k);
    const double m = ts::mean_of(draws);
    std::vector<double> sq(draws.size());
    for (std::size_t t = 0; t < draws.size(); ++t) sq[t] = (draws[t] - m) * (draws[t] - m);
    INFO("coordinate " << k);
    CHECK(std::abs(m - target_mean[k]) < 3.0 * ts::batch_se(draws));
    CHECK(std::abs(ts::mean_of(sq) - target_cov(k, k)) < 3.0 * ts::batch_se(sq));
  }
  const auto b1 = coordinate(1);
  CHECK(std::abs(ts::mean_of(b1) - target_mean[1]) < 3.0 * ts::batch_se(b1));
}

TEST_CASE("fit archive structure") {
  Rng rng(5);
  const auto g = make_lattice(4, 4);
  auto spec = make_spec(ModelRung::M4, 16, rng, 1);
  spec.factor_names = {"health_behavior"};
  std::vector<double> y(16);
  for (auto& v : y) v = std::floor(15.0 * draw_uniform(rng));
  y[3] = std::nan("");
  McmcConfig cfg;
  cfg.n_iter = 600;
  cfg.burn_in = 200;
  cfg.thin = 4;
  const auto a = fit_stage2_mcmc(spec, y, g, cfg);
  CHECK(a.n_draws(0) == 100);
  CHECK(a.param("beta").size == 3);
  CHECK(a.param("delta").size == 16);
  CHECK(a.metadata.at("model") == "M4");
  CHECK(a.metadata.at("stage") == "2");
  for (std::size_t k = 0; k < a.n_draws(0); ++k) {
    const auto s = state_from_draw(a, spec, 0, k);
    CHECK(std::abs(s.v.sum()) < 1e-8);
    CHECK(std::abs(s.delta.sum()) < 1e-8);
    CHECK(s.tau_phi > 0.0);
    CHECK(s.tau_delta > 0.0);
  }
  // same seed, same archive, any thread count
  auto cfg2 = cfg;
  cfg2.threads = 2;
  CHECK(format_archive_csv(fit_stage2_mcmc(spec, y, g, cfg2)) == format_archive_csv(a));
}

TEST_CASE("per-draw factor propagation records the draw used") {
  Rng rng(6);
  const auto g = make_lattice(3, 3);
  auto spec = make_spec(ModelRung::M2, 9, rng, 1);
  for (int k = 0; k < 3; ++k) {
    Eigen::MatrixXd f = spec.latent_factors;
    f.array() += 0.1 * k;
    spec.factor_draws.push_back(f);
  }
  std::vector<double> y(9, 4.0);
  McmcConfig cfg;
  cfg.n_iter = 300;
  cfg.burn_in = 100;
  cfg.thin = 2;
  cfg.n_chains = 1;
  const auto a = fit_stage2_mcmc(spec, y, g, cfg);
  REQUIRE(a.has_param("factor_draw"));
  for (double v : a.pooled("factor_draw")) CHECK((v == 0.0 || v == 1.0 || v == 2.0));
  const auto k = static_cast<std::size_t>(a.draw(0, 5)[a.param("factor_draw").offset]);
  const auto s = state_from_draw(a, spec, 0, 5);
  const auto eta = draw_linear_predictor(a, spec, 0, 5);
  CHECK(eta[2] == doctest::Approx(s.beta[0] + s.beta[1] * spec.covariate[2] + s.beta[2] * spec.factor_draws[k](2, 0)));
}

TEST_CASE("persistent divergence aborts with a diagnostic") {
  const auto g = make_lattice(2, 2);
  SvcModelSpec spec;
  spec.rung = ModelRung::M1;
  spec.covariate = Eigen::VectorXd::Zero(4);
  spec.offsets = Eigen::VectorXd::Constant(4, 1e-20);
  const std::vector<double> y(4, 1e25);
  McmcConfig cfg;
  cfg.n_iter = 2000;
  cfg.burn_in = 1000;
  cfg.thin = 1;
  cfg.n_chains = 1;
  CHECK_THROWS_AS(fit_stage2_mcmc(spec, y, g, cfg), NumericalError);
}

TEST_CASE("DIC and WAIC") {
  Rng rng(7);
  auto spec = make_spec(ModelRung::M1, 5, rng);
  const std::vector<double> y{3, 0, 7, 2, std::nan("")};
  SUBCASE("identical draws") {
    Eigen::MatrixXd draws(4, 5);
    for (Eigen::Index s = 0; s < 4; ++s) draws.row(s) << 0.1, -0.3, 0.5, 0.0, 9.0;
    const auto dic = compute_dic(draws, spec, y);
    const auto waic = compute_waic(draws, spec, y);
    CHECK(std::abs(dic.p_d) < 1e-12);
    CHECK(std::abs(waic.p_waic) < 1e-12);
    double ll = 0.0;
    for (std::size_t i = 0; i < 4; ++i) ll += pointwise_loglik(spec, i, y[i], draws(0, static_cast<Eigen::Index>(i)));
    CHECK(dic.dic == doctest::Approx(-2.0 * ll));
    CHECK(waic.waic == doctest::Approx(-2.0 * ll));
  }
  SUBCASE("too few draws") {
    Eigen::MatrixXd one = Eigen::MatrixXd::Zero(1, 5);
    CHECK_THROWS_AS(compute_dic(one, spec, y), ValidationError);
    CHECK_THROWS_AS(compute_waic(one, spec, y), ValidationError);
  }
  SUBCASE("chain order does not matter") {
    const auto g = make_lattice(2, 3);
    auto spec6 = make_spec(ModelRung::M3, 6, rng);
    const std::vector<double> y6{2, 5, 1, 0, 8, 3};
    McmcConfig cfg;
    cfg.n_iter = 400;
    cfg.burn_in = 100;
    cfg.thin = 3;
    cfg.n_chains = 3;
    const auto a = fit_stage2_mcmc(spec6, y6, g, cfg);
    std::vector<std::pair<std::string, std::size_t>> layout;
    for (const auto& p : a.params()) layout.emplace_back(p.name, p.size);
    ChainArchive b(layout);
    for (std::size_t c = 0; c < 3; ++c) {
      auto ch = a.chain(2 - c);
      ch.id = c;
      b.add_chain(ch);
    }
    CHECK(compute_dic(b, spec6, y6).dic == doctest::Approx(compute_dic(a, spec6, y6).dic).epsilon(1e-12));
    CHECK(compute_waic(b, spec6, y6).waic == doctest::Approx(compute_waic(a, spec6, y6).waic).epsilon(1e-12));
  }
}

TEST_CASE("relative risk and exceedance") {
  SUBCASE("zero predictor") {
    const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(10, 3);
    const auto rr = relative_risk_summary(zero);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(rr.mean[i] == 1.0);
      CHECK(rr.lower[i] == 1.0);
      CHECK(rr.upper[i] == 1.0);
    }
    CHECK(risk_exceedance(zero).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("RR intervals are percentiles of per-draw exp") {
    Rng rng(8);
    Eigen::MatrixXd draws(400, 6);
    for (Eigen::Index i = 0; i < draws.size(); ++i) draws.data()[i] = draw_normal(rng, 0.0, 0.5);
    for (Eigen::Index i = 0; i < 6; ++i) draws.col(i).array() += 0.2 * static_cast<double>(i);
    const auto rr = relative_risk_summary(draws);
    for (Eigen::Index i = 0; i < 6; ++i) {
      std::vector<double> col(400);
      for (Eigen::Index s = 0; s < 400; ++s) col[static_cast<std::size_t>(s)] = std::exp(draws(s, i));
      CHECK(rr.lower[static_cast<std::size_t>(i)] == doctest::Approx(quantile(col, 0.025)).epsilon(1e-14));
      CHECK(rr.upper[static_cast<std::size_t>(i)] == doctest::Approx(quantile(col, 0.975)).epsilon(1e-14));
      CHECK(rr.mean[static_cast<std::size_t>(i)] == doctest::Approx(ts::mean_of(col)).epsilon(1e-13));
    }
    const auto p = risk_exceedance(draws);
    for (Eigen::Index i = 0; i < 6; ++i) {
      CHECK(p(i, 0) >= p(i, 1));
      CHECK(p(i, 1) >= p(i, 2));
    }
  }
  SUBCASE("2-area, 4-draw enumeration") {
    Eigen::MatrixXd draws(4, 2);
    draws << std::log(1.1), std::log(2.5), std::log(1.3), std::log(1.6), std::log(1.6), std::log(0.9),
        std::log(2.1), std::log(1.4);
    const std::vector<double> t{1.25, 1.5, 2.0};
    const auto p = risk_exceedance(draws, t);
    CHECK(p(0, 0) == doctest::Approx(0.75));
    CHECK(p(0, 1) == doctest::Approx(0.5));
    CHECK(p(0, 2) == doctest::Approx(0.25));
    CHECK(p(1, 0) == doctest::Approx(0.75));
    CHECK(p(1, 1) == doctest::Approx(0.5));
    CHECK(p(1, 2) == doctest::Approx(0.25));
  }
}

TEST_CASE("rate ratio and precision summaries") {
  const std::vector<double> draws{-0.3, -0.278, -0.256};
  const auto rr = rate_ratio(draws);
  CHECK(rr.exp_of_mean == doctest::Approx(std::exp(-0.278)));
  const std::regex shape(R"(e\^beta = \d\.\d{3}, 95% credible interval: \d\.\d{3}, \d\.\d{3})");
  CHECK(std::regex_match(format_rate_ratio(rr), shape));

  Rng rng(9);
  std::vector<double> tau(20000);
  for (auto& t : tau) t = draw_gamma(rng, 5.0, 1.0);
  const auto ps = summarize_precision(tau);
  CHECK(ps.mean == doctest::Approx(5.0).epsilon(0.02));
  CHECK(std::abs(ps.mode - 4.0) < 0.3);
  CHECK(ps.lower < ps.mode);
  CHECK(ps.upper > ps.mean);
}

TEST_CASE("rung parsing") {
  CHECK(parse_rung("M3") == ModelRung::M3);
  CHECK(rung_name(ModelRung::M2) == "M2");
  CHECK_THROWS_AS(parse_rung("M5"), ValidationError);
}
