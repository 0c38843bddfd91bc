#pragma once

#include "areal/graph.hpp"
#include "areal/icar.hpp"
#include "areal/mcmc.hpp"
#include "areal/pipeline.hpp"
#include "areal/random.hpp"

#include <Eigen/Core>

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace areal {

// Priors of the one-factor spatial model z_ip = alpha_p + lambda_p eta_i + e_ip.
struct FactorModelSpec {
  std::size_t n_indicators = 1;
  std::size_t anchor_index = 0;          // lambda fixed to 1 here
  double alpha_prior_variance = 1000.0;  // alpha_p ~ N(0, a)
  double lambda_prior_variance = 1000.0; // lambda_p ~ N(0, b)
  double sigma2_shape = 0.5;             // sigma2_p ~ IG(shape, rate)
  double sigma2_rate = 0.0005;
  double eta_variance = 1.0;             // fixed ICAR scale

  void validate() const;
};

struct FactorModelState {
  FactorModelState(const SpatialGraph& graph, std::size_t n_indicators, double eta_variance = 1.0);

  Eigen::VectorXd alpha;
  Eigen::VectorXd lambda;
  Eigen::VectorXd sigma2;
  IcarField eta;
};

// Sum over observed cells of log N(z_ip; alpha_p + lambda_p eta_i, sigma2_p).
double loglik_stage1(const FactorModelState& state, const IndicatorPanel& panel);

// Exact full conditionals. Exposed so tests can check them against
// independent oracles.
NormalMoments alpha_conditional(const FactorModelState& state, const IndicatorPanel& panel,
                                const FactorModelSpec& spec, std::size_t p);
NormalMoments lambda_conditional(const FactorModelState& state, const IndicatorPanel& panel,
                                 const FactorModelSpec& spec, std::size_t p);
struct InverseGammaParams {
  double shape = 0.0;
  double rate = 0.0;
};
InverseGammaParams sigma2_conditional(const FactorModelState& state, const IndicatorPanel& panel,
                                      const FactorModelSpec& spec, std::size_t p);

// Per-area Gaussian likelihood terms for eta: precision sum_p lambda_p^2 /
// sigma2_p and weighted mean sum_p lambda_p (z_ip - alpha_p) / sigma2_p, over
// observed p.
void eta_likelihood_terms(const FactorModelState& state, const IndicatorPanel& panel,
                          std::vector<double>& precision, std::vector<double>& weighted_mean);

void gibbs_update_alpha(FactorModelState& state, const IndicatorPanel& panel,
                        const FactorModelSpec& spec, Rng& rng);
void gibbs_update_lambda(FactorModelState& state, const IndicatorPanel& panel,
                         const FactorModelSpec& spec, Rng& rng);
void gibbs_update_sigma2(FactorModelState& state, const IndicatorPanel& panel,
                         const FactorModelSpec& spec, Rng& rng);
// Gibbs sweep over eta, then per-component centering with the removed mean
// absorbed into alpha so the likelihood is unchanged.
void gibbs_update_eta(FactorModelState& state, const IndicatorPanel& panel,
                      const FactorModelSpec& spec, Rng& rng);

// One full scan: alpha, lambda, eta, sigma2.
void gibbs_scan(FactorModelState& state, const IndicatorPanel& panel, const FactorModelSpec& spec,
                Rng& rng);

// Metropolis move proposing (eta, lambda_free) -> (-eta, -lambda_free); exact
// for the posterior and lets chains cross between the two reflected modes.
// Returns whether the flip was accepted.
bool reflection_move(FactorModelState& state, const IndicatorPanel& panel, const FactorModelSpec& spec,
                     Rng& rng);

// alpha = column means, lambda = 1, eta = 0, sigma2 = column variances.
FactorModelState initial_factor_state(const IndicatorPanel& panel, const SpatialGraph& graph,
                                      const FactorModelSpec& spec);

struct Stage1Options {
  // Starting eta (default: the centered anchor column); chains with odd id
  // start from its negation.
  std::optional<Eigen::VectorXd> initial_eta;
};

// Archive parameters: alpha[P], lambda[P], sigma2[P], eta[N].
ChainArchive fit_stage1(const IndicatorPanel& panel, const SpatialGraph& graph,
                        const FactorModelSpec& spec, const McmcConfig& mcmc,
                        const Stage1Options& options = {});

struct LoadingRow {
  std::size_t indicator = 0;
  std::string name;
  double mean = 0.0;
  double lower = 0.0;  // 2.5%
  double upper = 0.0;  // 97.5%
  bool fixed = false;  // anchor: mean 1, no interval
};

// Anchor taken from archive metadata "anchor_index" (default 0).
std::vector<LoadingRow> summarize_loadings(const ChainArchive& archive,
                                           const std::vector<std::string>& names = {});
// "1.207 (1.134, 1.277)", or "1 (fixed)" for the anchor.
std::string format_loading(const LoadingRow& row);

struct QuintileResult {
  std::vector<double> posterior_mean;
  std::vector<int> quintile;  // 1..5
  std::array<double, 4> cuts{};  // 20/40/60/80% quantiles of posterior means
};

// quintile_i = 1 + #{cuts strictly below mean_i}; equal means share a quintile.
QuintileResult factor_quintiles(const ChainArchive& archive);

// Per area, fraction of draws where eta_i exceeds that draw's percentile of eta.
std::vector<double> factor_exceedance(const ChainArchive& archive, double percentile = 0.80);

}  // namespace areal
