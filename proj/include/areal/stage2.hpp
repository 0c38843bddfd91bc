#pragma once

#include "areal/graph.hpp"
#include "areal/mcmc.hpp"

#include <Eigen/Core>

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace areal {

// M1: b0 + b1 x
// M2: M1 + sum_m b_m eta_m
// M3: M2 + v (ICAR) + phi (iid)
// M4: M3 + x * delta (ICAR)
enum class ModelRung { M1 = 1, M2 = 2, M3 = 3, M4 = 4 };

ModelRung parse_rung(std::string_view text);  // "M1".."M4"
std::string rung_name(ModelRung rung);

enum class OutcomeFamily {
  kPoisson,   // Y ~ Poisson(exp(eta) E)
  kGaussian,  // Y ~ N(eta, noise variance); identity link, offsets unused
};

struct GammaPrior {
  double shape = 1.0;
  double rate = 0.5;
};

// Gamma(1, 0.5): default on all precisions.
inline constexpr GammaPrior kWeakPrecisionPrior{1.0, 0.5};
// Gamma(1, 0.0005): the vaguer alternative for sensitivity runs.
inline constexpr GammaPrior kVaguePrecisionPrior{1.0, 0.0005};

struct SvcModelSpec {
  ModelRung rung = ModelRung::M4;
  double beta_prior_variance = 1000.0;
  GammaPrior precision_prior = kWeakPrecisionPrior;
  Eigen::VectorXd covariate;        // x, length N
  Eigen::MatrixXd latent_factors;   // N x M, entering from M2
  std::vector<std::string> factor_names;
  Eigen::VectorXd offsets;          // E, length N

  OutcomeFamily family = OutcomeFamily::kPoisson;
  double gaussian_noise_variance = 1.0;

  // Held fixed instead of sampled when set.
  std::optional<double> fixed_tau_phi;
  std::optional<double> fixed_tau_v;
  std::optional<double> fixed_tau_delta;

  // Optional per-draw factor scores (each N x M). When non-empty the sampler
  // draws one of them uniformly at every iteration in place of latent_factors.
  std::vector<Eigen::MatrixXd> factor_draws;

  std::size_t n_areas() const noexcept { return static_cast<std::size_t>(covariate.size()); }
  std::size_t n_factors() const noexcept {
    return rung >= ModelRung::M2 ? static_cast<std::size_t>(latent_factors.cols()) : 0;
  }
  std::size_t n_fixed() const noexcept { return 2 + n_factors(); }
  bool has_bym() const noexcept { return rung >= ModelRung::M3; }
  bool has_delta() const noexcept { return rung == ModelRung::M4; }

  void validate() const;
};

// Empty phi / v / delta mean "block not in this rung".
struct SvcModelState {
  Eigen::VectorXd beta;
  Eigen::VectorXd phi;
  Eigen::VectorXd v;
  Eigen::VectorXd delta;
  double tau_phi = 1.0;
  double tau_v = 1.0;
  double tau_delta = 1.0;
};

// Zero random effects, beta = 0, unit precisions, shaped for the rung.
SvcModelState zero_state(const SvcModelSpec& spec);

// Throws ValidationError when the state's blocks do not match the rung.
void check_state(const SvcModelState& state, const SvcModelSpec& spec);

double linear_predictor(const SvcModelState& state, const SvcModelSpec& spec, std::size_t i);
Eigen::VectorXd linear_predictor(const SvcModelState& state, const SvcModelSpec& spec);

// Areas that carry likelihood: counts not NaN (suppressed) and E_i > 0.
std::vector<bool> likelihood_mask(const SvcModelSpec& spec, std::span<const double> counts);

// Validates counts: NaN = suppressed, otherwise nonnegative integers.
void validate_counts(std::span<const double> counts);

// log p(y | eta) for the spec's family, full normalizing constants.
double pointwise_loglik(const SvcModelSpec& spec, std::size_t i, double y, double eta);

// Sum over unmasked areas of log Poisson(y_i; exp(eta_i) E_i) (or the
// Gaussian analogue for that family).
double loglik_poisson(const SvcModelState& state, const SvcModelSpec& spec,
                      std::span<const double> counts);

struct SvcSamplerOptions {
  double target_acceptance = 0.44;
  double divergence_bound = 50.0;     // |eta| above this rejects the proposal
  double max_divergent_fraction = 0.1;
  double initial_beta_step = 0.05;
  double initial_site_step = 0.3;
};

// Archive layout: beta[p]; M3+: phi[N], v[N], tau_phi, tau_v; M4: delta[N],
// tau_delta; factor_draw when factor_draws is used.
ChainArchive fit_stage2_mcmc(const SvcModelSpec& spec, std::span<const double> counts,
                             const SpatialGraph& graph, const McmcConfig& mcmc,
                             const SvcSamplerOptions& options = {});

// Log acceptance ratio for moving beta from `current` to `proposed` with all
// other blocks fixed. Exposed for the reversibility check.
double beta_log_ratio(const SvcModelState& current, const SvcModelState& proposed,
                      const SvcModelSpec& spec, std::span<const double> counts);

// Rebuild the state stored in draw k of chain c.
SvcModelState state_from_draw(const ChainArchive& archive, const SvcModelSpec& spec,
                              std::size_t c, std::size_t k);
Eigen::VectorXd draw_linear_predictor(const ChainArchive& archive, const SvcModelSpec& spec,
                                      std::size_t c, std::size_t k);
// Rows = retained draws (chain order), columns = areas.
Eigen::MatrixXd linear_predictor_draws(const ChainArchive& archive, const SvcModelSpec& spec);

struct DicResult {
  double dic = 0.0;
  double mean_deviance = 0.0;     // D-bar
  double deviance_at_mean = 0.0;  // D(posterior mean of the linear predictor)
  double p_d = 0.0;
};

struct WaicResult {
  double waic = 0.0;
  double lppd = 0.0;
  double p_waic = 0.0;  // sum of per-area sample variances (S - 1) of log p
};

DicResult compute_dic(const ChainArchive& archive, const SvcModelSpec& spec,
                      std::span<const double> counts);
WaicResult compute_waic(const ChainArchive& archive, const SvcModelSpec& spec,
                        std::span<const double> counts);
// Same criteria from a draws x areas matrix of linear predictors.
DicResult compute_dic(const Eigen::MatrixXd& predictor_draws, const SvcModelSpec& spec,
                      std::span<const double> counts);
WaicResult compute_waic(const Eigen::MatrixXd& predictor_draws, const SvcModelSpec& spec,
                        std::span<const double> counts);

struct RiskSummary {
  std::vector<double> mean;    // posterior mean of exp(eta_i)
  std::vector<double> lower;   // 2.5%
  std::vector<double> upper;   // 97.5%
};

RiskSummary relative_risk_summary(const ChainArchive& archive, const SvcModelSpec& spec);
RiskSummary relative_risk_summary(const Eigen::MatrixXd& predictor_draws);

// Areas x thresholds matrix of P(exp(eta_i) > t).
Eigen::MatrixXd risk_exceedance(const ChainArchive& archive, const SvcModelSpec& spec,
                                std::span<const double> thresholds = {});
Eigen::MatrixXd risk_exceedance(const Eigen::MatrixXd& predictor_draws,
                                std::span<const double> thresholds = {});
inline constexpr double kDefaultRiskThresholds[] = {1.25, 1.5, 2.0};

struct RateRatio {
  double exp_of_mean = 0.0;    // exp(posterior mean of beta)
  double mean_of_exp = 0.0;    // posterior mean of exp(beta)
  double lower = 0.0;          // exp of 2.5% quantile
  double upper = 0.0;          // exp of 97.5% quantile
};

RateRatio rate_ratio(std::span<const double> beta_draws);
// "e^beta = 0.757, 95% credible interval: 0.673, 0.852"
std::string format_rate_ratio(const RateRatio& rr);

struct PrecisionSummary {
  double mean = 0.0;
  double mode = 0.0;  // from a Gaussian kernel density estimate
  double lower = 0.0;
  double upper = 0.0;
};

PrecisionSummary summarize_precision(std::span<const double> draws);

}  // namespace areal
