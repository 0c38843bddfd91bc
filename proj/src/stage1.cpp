#include "areal/stage1.hpp"

#include "areal/error.hpp"
#include "areal/log.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace areal {

namespace {

constexpr double kSigma2Floor = 1e-12;

Eigen::Index ix(std::size_t i) { return static_cast<Eigen::Index>(i); }

void check_shapes(const FactorModelState& state, const IndicatorPanel& panel) {
  if (static_cast<std::size_t>(state.eta.values.size()) != panel.n_areas() ||
      static_cast<std::size_t>(state.alpha.size()) != panel.n_indicators())
    throw ValidationError("factor state does not match panel dimensions");
}

}  // namespace

void FactorModelSpec::validate() const {
  if (n_indicators < 1) throw ValidationError("factor model needs at least one indicator");
  if (anchor_index >= n_indicators) throw ValidationError("anchor index out of range");
  if (!(alpha_prior_variance > 0.0) || !(lambda_prior_variance > 0.0) || !(sigma2_shape > 0.0) ||
      !(sigma2_rate > 0.0) || !(eta_variance > 0.0))
    throw ValidationError("factor model prior parameters must be positive");
}

FactorModelState::FactorModelState(const SpatialGraph& graph, std::size_t n_indicators,
                                   double eta_variance)
    : alpha(Eigen::VectorXd::Zero(ix(n_indicators))),
      lambda(Eigen::VectorXd::Ones(ix(n_indicators))),
      sigma2(Eigen::VectorXd::Ones(ix(n_indicators))),
      eta(graph, eta_variance) {}

double loglik_stage1(const FactorModelState& state, const IndicatorPanel& panel) {
  check_shapes(state, panel);
  const double log2pi = std::log(2.0 * std::numbers::pi);
  double total = 0.0;
  for (Eigen::Index p = 0; p < panel.values.cols(); ++p) {
    const double var = state.sigma2[p];
    const double log_var = std::log(var);
    for (Eigen::Index i = 0; i < panel.values.rows(); ++i) {
      if (panel.missing(i, p)) continue;
      const double r = panel.values(i, p) - state.alpha[p] - state.lambda[p] * state.eta.values[i];
      total += -0.5 * (log2pi + log_var + r * r / var);
    }
  }
  return total;
}

NormalMoments alpha_conditional(const FactorModelState& state, const IndicatorPanel& panel,
                                const FactorModelSpec& spec, std::size_t p) {
  const auto pc = ix(p);
  double n_obs = 0.0;
  double sum = 0.0;
  for (Eigen::Index i = 0; i < panel.values.rows(); ++i) {
    if (panel.missing(i, pc)) continue;
    n_obs += 1.0;
    sum += panel.values(i, pc) - state.lambda[pc] * state.eta.values[i];
  }
  const double precision = n_obs / state.sigma2[pc] + 1.0 / spec.alpha_prior_variance;
  return {sum / state.sigma2[pc] / precision, 1.0 / precision};
}

NormalMoments lambda_conditional(const FactorModelState& state, const IndicatorPanel& panel,
                                 const FactorModelSpec& spec, std::size_t p) {
  const auto pc = ix(p);
  double ss = 0.0;
  double cross = 0.0;
  for (Eigen::Index i = 0; i < panel.values.rows(); ++i) {
    if (panel.missing(i, pc)) continue;
    const double e = state.eta.values[i];
    ss += e * e;
    cross += e * (panel.values(i, pc) - state.alpha[pc]);
  }
  const double precision = ss / state.sigma2[pc] + 1.0 / spec.lambda_prior_variance;
  return {cross / state.sigma2[pc] / precision, 1.0 / precision};
}

InverseGammaParams sigma2_conditional(const FactorModelState& state, const IndicatorPanel& panel,
                                      const FactorModelSpec& spec, std::size_t p) {
  const auto pc = ix(p);
  double n_obs = 0.0;
  double ss = 0.0;
  for (Eigen::Index i = 0; i < panel.values.rows(); ++i) {
    if (panel.missing(i, pc)) continue;
    const double r = panel.values(i, pc) - state.alpha[pc] - state.lambda[pc] * state.eta.values[i];
    n_obs += 1.0;
    ss += r * r;
  }
  return {spec.sigma2_shape + 0.5 * n_obs, spec.sigma2_rate + 0.5 * ss};
}

void eta_likelihood_terms(const FactorModelState& state, const IndicatorPanel& panel,
                          std::vector<double>& precision, std::vector<double>& weighted_mean) {
  const auto n = panel.n_areas();
  precision.assign(n, 0.0);
  weighted_mean.assign(n, 0.0);
  for (Eigen::Index p = 0; p < panel.values.cols(); ++p) {
    const double lam = state.lambda[p];
    const double prec = lam * lam / state.sigma2[p];
    const double scale = lam / state.sigma2[p];
    for (Eigen::Index i = 0; i < panel.values.rows(); ++i) {
      if (panel.missing(i, p)) continue;
      precision[static_cast<std::size_t>(i)] += prec;
      weighted_mean[static_cast<std::size_t>(i)] += scale * (panel.values(i, p) - state.alpha[p]);
    }
  }
}

void gibbs_update_alpha(FactorModelState& state, const IndicatorPanel& panel,
                        const FactorModelSpec& spec, Rng& rng) {
  for (std::size_t p = 0; p < panel.n_indicators(); ++p) {
    const auto m = alpha_conditional(state, panel, spec, p);
    state.alpha[ix(p)] = draw_normal(rng, m.mean, std::sqrt(m.variance));
  }
}

void gibbs_update_lambda(FactorModelState& state, const IndicatorPanel& panel,
                         const FactorModelSpec& spec, Rng& rng) {
  for (std::size_t p = 0; p < panel.n_indicators(); ++p) {
    if (p == spec.anchor_index) continue;
    const auto m = lambda_conditional(state, panel, spec, p);
    state.lambda[ix(p)] = draw_normal(rng, m.mean, std::sqrt(m.variance));
  }
}

void gibbs_update_sigma2(FactorModelState& state, const IndicatorPanel& panel,
                         const FactorModelSpec& spec, Rng& rng) {
  for (std::size_t p = 0; p < panel.n_indicators(); ++p) {
    const auto ig = sigma2_conditional(state, panel, spec, p);
    double draw = draw_inverse_gamma(rng, ig.shape, ig.rate);
    if (!(draw >= kSigma2Floor)) {
      log_warning("sigma2 draw for indicator " + std::to_string(p) + " underflowed; floored at 1e-12");
      draw = kSigma2Floor;
    }
    state.sigma2[ix(p)] = draw;
  }
}

void gibbs_update_eta(FactorModelState& state, const IndicatorPanel& panel,
                      const FactorModelSpec& spec, Rng& rng) {
  std::vector<double> precision;
  std::vector<double> weighted_mean;
  state.eta.variance = spec.eta_variance;
  eta_likelihood_terms(state, panel, precision, weighted_mean);
  const auto shifts = sample_icar_gibbs_sweep(state.eta, precision, weighted_mean, rng);
  const double shift = overall_shift(*state.eta.graph, shifts);
  state.alpha += state.lambda * shift;
}

void gibbs_scan(FactorModelState& state, const IndicatorPanel& panel, const FactorModelSpec& spec,
                Rng& rng) {
  gibbs_update_alpha(state, panel, spec, rng);
  gibbs_update_lambda(state, panel, spec, rng);
  gibbs_update_eta(state, panel, spec, rng);
  gibbs_update_sigma2(state, panel, spec, rng);
}

bool reflection_move(FactorModelState& state, const IndicatorPanel& panel, const FactorModelSpec& spec,
                     Rng& rng) {
  // Flipping eta and every free loading leaves lambda_p eta_i unchanged for
  // p != anchor, and both priors are symmetric, so only the anchor column
  // enters the acceptance ratio.
  const auto a = ix(spec.anchor_index);
  const double var = state.sigma2[a];
  double log_ratio = 0.0;
  for (Eigen::Index i = 0; i < panel.values.rows(); ++i) {
    if (panel.missing(i, a)) continue;
    const double r = panel.values(i, a) - state.alpha[a];
    const double e = state.eta.values[i];
    // (r + e)^2 - (r - e)^2 = 4 r e
    log_ratio -= 2.0 * r * e / var;
  }
  if (!(std::log(draw_uniform(rng)) < log_ratio)) return false;
  state.eta.values = -state.eta.values;
  for (Eigen::Index p = 0; p < state.lambda.size(); ++p)
    if (p != a) state.lambda[p] = -state.lambda[p];
  return true;
}

FactorModelState initial_factor_state(const IndicatorPanel& panel, const SpatialGraph& graph,
                                      const FactorModelSpec& spec) {
  FactorModelState state(graph, panel.n_indicators(), spec.eta_variance);
  for (Eigen::Index p = 0; p < panel.values.cols(); ++p) {
    std::vector<double> obs;
    for (Eigen::Index i = 0; i < panel.values.rows(); ++i)
      if (!panel.missing(i, p)) obs.push_back(panel.values(i, p));
    const auto stats = describe(obs);
    state.alpha[p] = stats.n > 0 ? stats.mean : 0.0;
    state.sigma2[p] = stats.sd > 0.0 ? stats.sd * stats.sd : 1.0;
  }
  return state;
}

namespace {

class Stage1Sampler final : public ChainSampler {
public:
  Stage1Sampler(const IndicatorPanel& panel, const FactorModelSpec& spec, FactorModelState state)
      : panel_(panel), spec_(spec), state_(std::move(state)) {}

  void step(Rng& rng, std::size_t) override {
    gibbs_scan(state_, panel_, spec_, rng);
    reflection_move(state_, panel_, spec_, rng);
  }

  void record(std::span<double> row) const override {
    const auto p = panel_.n_indicators();
    const auto n = panel_.n_areas();
    std::copy_n(state_.alpha.data(), p, row.begin());
    std::copy_n(state_.lambda.data(), p, row.begin() + static_cast<std::ptrdiff_t>(p));
    std::copy_n(state_.sigma2.data(), p, row.begin() + static_cast<std::ptrdiff_t>(2 * p));
    std::copy_n(state_.eta.values.data(), n, row.begin() + static_cast<std::ptrdiff_t>(3 * p));
  }

private:
  const IndicatorPanel& panel_;
  const FactorModelSpec& spec_;
  FactorModelState state_;
};

}  // namespace

ChainArchive fit_stage1(const IndicatorPanel& panel, const SpatialGraph& graph,
                        const FactorModelSpec& spec, const McmcConfig& mcmc,
                        const Stage1Options& options) {
  panel.validate();
  spec.validate();
  mcmc.validate();
  if (spec.n_indicators != panel.n_indicators())
    throw ValidationError("factor spec indicator count does not match panel");
  if (graph.size() != panel.n_areas())
    throw ValidationError("graph size " + std::to_string(graph.size()) +
                          " does not match panel rows " + std::to_string(panel.n_areas()));
  if (options.initial_eta && static_cast<std::size_t>(options.initial_eta->size()) != graph.size())
    throw ValidationError("initial eta has wrong length");

  for (std::size_t p = 0; p < panel.n_indicators(); ++p) {
    std::vector<double> obs;
    for (std::size_t i = 0; i < panel.n_areas(); ++i)
      if (panel.observed(i, p)) obs.push_back(panel.values(ix(i), ix(p)));
    const auto stats = describe(obs);
    if (stats.n > 0 && std::abs(stats.mean) > 0.5)
      log_warning("indicator '" + panel.column_names[p] + "' does not look standardized (mean " +
                  std::to_string(stats.mean) + ")");
  }

  const auto base = initial_factor_state(panel, graph, spec);
  const auto p = panel.n_indicators();
  std::vector<std::pair<std::string, std::size_t>> layout{
      {"alpha", p}, {"lambda", p}, {"sigma2", p}, {"eta", graph.size()}};

  // Default start: the centered anchor column, missing cells at zero.
  Eigen::VectorXd start = Eigen::VectorXd::Zero(ix(graph.size()));
  if (options.initial_eta) {
    start = *options.initial_eta;
  } else {
    const auto a = ix(spec.anchor_index);
    for (Eigen::Index i = 0; i < start.size(); ++i)
      if (!panel.missing(i, a)) start[i] = panel.values(i, a) - base.alpha[a];
  }
  auto archive = run_chains(mcmc, layout, [&](std::size_t chain) {
    auto state = base;
    state.eta.values = (chain % 2 == 0 ? 1.0 : -1.0) * start;
    center_components(graph, {state.eta.values.data(), graph.size()});
    return std::make_unique<Stage1Sampler>(panel, spec, std::move(state));
  });
  archive.metadata["stage"] = "1";
  archive.metadata["anchor_index"] = std::to_string(spec.anchor_index);
  std::string names;
  for (const auto& n : panel.column_names) names += (names.empty() ? "" : ";") + n;
  archive.metadata["indicators"] = names;
  return archive;
}

std::vector<LoadingRow> summarize_loadings(const ChainArchive& archive,
                                           const std::vector<std::string>& names) {
  if (archive.total_draws() == 0) throw ValidationError("archive has no draws");
  const auto& lam = archive.param("lambda");
  std::size_t anchor = 0;
  if (auto it = archive.metadata.find("anchor_index"); it != archive.metadata.end())
    anchor = static_cast<std::size_t>(std::stoul(it->second));
  std::vector<LoadingRow> rows;
  for (std::size_t p = 0; p < lam.size; ++p) {
    LoadingRow row;
    row.indicator = p;
    row.name = p < names.size() ? names[p] : "indicator" + std::to_string(p + 1);
    if (p == anchor) {
      row.mean = row.lower = row.upper = 1.0;
      row.fixed = true;
    } else {
      const auto s = posterior_summary(archive, "lambda", p);
      row.mean = s.mean;
      row.lower = s.q025;
      row.upper = s.q975;
    }
    rows.push_back(row);
  }
  return rows;
}

std::string format_loading(const LoadingRow& row) {
  if (row.fixed) return "1 (fixed)";
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.3f (%.3f, %.3f)", row.mean, row.lower, row.upper);
  return buf;
}

QuintileResult factor_quintiles(const ChainArchive& archive) {
  if (archive.total_draws() == 0) throw ValidationError("archive has no draws");
  const auto& eta = archive.param("eta");
  QuintileResult r;
  r.posterior_mean.resize(eta.size);
  for (std::size_t i = 0; i < eta.size; ++i) {
    const auto d = archive.pooled("eta", i);
    double s = 0.0;
    for (double v : d) s += v;
    r.posterior_mean[i] = s / static_cast<double>(d.size());
  }
  auto sorted = r.posterior_mean;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t k = 0; k < 4; ++k)
    r.cuts[k] = quantile_sorted(sorted, 0.2 * static_cast<double>(k + 1));
  r.quintile.resize(eta.size);
  for (std::size_t i = 0; i < eta.size; ++i) {
    int q = 1;
    for (double c : r.cuts) q += r.posterior_mean[i] > c ? 1 : 0;
    r.quintile[i] = q;
  }
  return r;
}

std::vector<double> factor_exceedance(const ChainArchive& archive, double percentile) {
  if (archive.total_draws() == 0) throw ValidationError("archive has no draws");
  if (!(percentile > 0.0 && percentile < 1.0)) throw ValidationError("percentile must be in (0, 1)");
  const auto& eta = archive.param("eta");
  std::vector<double> counts(eta.size, 0.0);
  std::vector<double> scratch(eta.size);
  for (std::size_t c = 0; c < archive.n_chains(); ++c) {
    for (std::size_t k = 0; k < archive.n_draws(c); ++k) {
      const auto row = archive.draw(c, k).subspan(eta.offset, eta.size);
      std::copy(row.begin(), row.end(), scratch.begin());
      std::sort(scratch.begin(), scratch.end());
      const double cut = quantile_sorted(scratch, percentile);
      for (std::size_t i = 0; i < eta.size; ++i) counts[i] += row[i] > cut ? 1.0 : 0.0;
    }
  }
  const double total = static_cast<double>(archive.total_draws());
  for (auto& v : counts) v /= total;
  return counts;
}

}  // namespace areal
