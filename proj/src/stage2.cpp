#include "areal/stage2.hpp"

#include "areal/error.hpp"
#include "areal/icar.hpp"
#include "areal/log.hpp"
#include "areal/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>

namespace areal {

namespace {

Eigen::Index ix(std::size_t i) { return static_cast<Eigen::Index>(i); }

double column_value(const SvcModelSpec& spec, const Eigen::MatrixXd& factors, std::size_t i,
                    std::size_t k) {
  if (k == 0) return 1.0;
  if (k == 1) return spec.covariate[ix(i)];
  return factors(ix(i), ix(k - 2));
}

double predictor_with(const SvcModelState& s, const SvcModelSpec& spec,
                      const Eigen::MatrixXd& factors, std::size_t i) {
  const auto ii = ix(i);
  const double x = spec.covariate[ii];
  double eta = s.beta[0] + s.beta[1] * x;
  for (std::size_t m = 0; m < spec.n_factors(); ++m) eta += s.beta[ix(m + 2)] * factors(ii, ix(m));
  if (spec.has_bym()) eta += s.v[ii] + s.phi[ii];
  if (spec.has_delta()) eta += x * s.delta[ii];
  return eta;
}

// log-likelihood kernel without terms constant in eta
double loglik_kernel(const SvcModelSpec& spec, std::size_t i, double y, double eta) {
  if (spec.family == OutcomeFamily::kGaussian) {
    const double r = y - eta;
    return -0.5 * r * r / spec.gaussian_noise_variance;
  }
  return y * eta - spec.offsets[ix(i)] * std::exp(eta);
}

}  // namespace

ModelRung parse_rung(std::string_view text) {
  if (text == "M1" || text == "m1" || text == "1") return ModelRung::M1;
  if (text == "M2" || text == "m2" || text == "2") return ModelRung::M2;
  if (text == "M3" || text == "m3" || text == "3") return ModelRung::M3;
  if (text == "M4" || text == "m4" || text == "4") return ModelRung::M4;
  throw ValidationError("unknown model rung '" + std::string(text) + "' (expected M1..M4)");
}

std::string rung_name(ModelRung rung) { return "M" + std::to_string(static_cast<int>(rung)); }

void SvcModelSpec::validate() const {
  const auto n = covariate.size();
  if (n == 0) throw ValidationError("SVC model needs at least one area");
  if (offsets.size() != n) throw ValidationError("offsets length does not match covariate length");
  if (!covariate.allFinite()) throw ValidationError("covariate contains missing or non-finite values");
  if (rung >= ModelRung::M2 && latent_factors.cols() > 0 && latent_factors.rows() != n)
    throw ValidationError("latent factor matrix has wrong number of rows");
  if (rung >= ModelRung::M2 && !latent_factors.allFinite())
    throw ValidationError("latent factors contain missing or non-finite values");
  if (!factor_names.empty() && factor_names.size() != static_cast<std::size_t>(latent_factors.cols()))
    throw ValidationError("factor names do not match factor columns");
  for (const auto& d : factor_draws)
    if (d.rows() != latent_factors.rows() || d.cols() != latent_factors.cols())
      throw ValidationError("factor draw has wrong shape");
  if (!(beta_prior_variance > 0.0)) throw ValidationError("beta prior variance must be positive");
  if (!(precision_prior.shape > 0.0) || !(precision_prior.rate > 0.0))
    throw ValidationError("precision prior parameters must be positive");
  if (family == OutcomeFamily::kGaussian && !(gaussian_noise_variance > 0.0))
    throw ValidationError("Gaussian noise variance must be positive");
  for (const auto& t : {fixed_tau_phi, fixed_tau_v, fixed_tau_delta})
    if (t && !(*t > 0.0)) throw ValidationError("fixed precisions must be positive");
  if (family == OutcomeFamily::kPoisson && ((offsets.array() < 0.0).any() || !offsets.allFinite()))
    throw ValidationError("expected counts must be finite and nonnegative");
}

SvcModelState zero_state(const SvcModelSpec& spec) {
  SvcModelState s;
  const auto n = ix(spec.n_areas());
  s.beta = Eigen::VectorXd::Zero(ix(spec.n_fixed()));
  if (spec.has_bym()) {
    s.phi = Eigen::VectorXd::Zero(n);
    s.v = Eigen::VectorXd::Zero(n);
  }
  if (spec.has_delta()) s.delta = Eigen::VectorXd::Zero(n);
  return s;
}

void check_state(const SvcModelState& state, const SvcModelSpec& spec) {
  const auto n = ix(spec.n_areas());
  const std::string rung = rung_name(spec.rung);
  if (state.beta.size() != ix(spec.n_fixed()))
    throw ValidationError(rung + " expects " + std::to_string(spec.n_fixed()) + " fixed effects");
  if (spec.has_bym() != (state.phi.size() > 0) || spec.has_bym() != (state.v.size() > 0))
    throw ValidationError("state random-effect blocks do not match rung " + rung);
  if (spec.has_delta() != (state.delta.size() > 0))
    throw ValidationError("state delta block does not match rung " + rung);
  if ((state.phi.size() > 0 && state.phi.size() != n) || (state.v.size() > 0 && state.v.size() != n) ||
      (state.delta.size() > 0 && state.delta.size() != n))
    throw ValidationError("state random-effect length does not match area count");
}

double linear_predictor(const SvcModelState& state, const SvcModelSpec& spec, std::size_t i) {
  check_state(state, spec);
  if (i >= spec.n_areas()) throw ValidationError("area index out of range");
  return predictor_with(state, spec, spec.latent_factors, i);
}

Eigen::VectorXd linear_predictor(const SvcModelState& state, const SvcModelSpec& spec) {
  check_state(state, spec);
  Eigen::VectorXd eta(ix(spec.n_areas()));
  for (std::size_t i = 0; i < spec.n_areas(); ++i)
    eta[ix(i)] = predictor_with(state, spec, spec.latent_factors, i);
  return eta;
}

void validate_counts(std::span<const double> counts) {
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const double y = counts[i];
    if (std::isnan(y)) continue;
    if (y < 0.0) throw ValidationError("negative count at area " + std::to_string(i));
    if (!std::isfinite(y) || std::floor(y) != y)
      throw ValidationError("non-integer count at area " + std::to_string(i));
  }
}

std::vector<bool> likelihood_mask(const SvcModelSpec& spec, std::span<const double> counts) {
  if (counts.size() != spec.n_areas()) throw ValidationError("counts length does not match area count");
  std::vector<bool> mask(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    mask[i] = !std::isnan(counts[i]) &&
              (spec.family == OutcomeFamily::kGaussian || spec.offsets[ix(i)] > 0.0);
  }
  return mask;
}

double pointwise_loglik(const SvcModelSpec& spec, std::size_t i, double y, double eta) {
  if (spec.family == OutcomeFamily::kGaussian) {
    const double var = spec.gaussian_noise_variance;
    const double r = y - eta;
    return -0.5 * (std::log(2.0 * std::numbers::pi * var) + r * r / var);
  }
  const double e = spec.offsets[ix(i)];
  const double rate = std::exp(eta) * e;
  return y * std::log(rate) - rate - std::lgamma(y + 1.0);
}

double loglik_poisson(const SvcModelState& state, const SvcModelSpec& spec,
                      std::span<const double> counts) {
  if (spec.family == OutcomeFamily::kPoisson) validate_counts(counts);
  const auto mask = likelihood_mask(spec, counts);
  const auto eta = linear_predictor(state, spec);
  double total = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i)
    if (mask[i]) total += pointwise_loglik(spec, i, counts[i], eta[ix(i)]);
  return total;
}

double beta_log_ratio(const SvcModelState& current, const SvcModelState& proposed,
                      const SvcModelSpec& spec, std::span<const double> counts) {
  const double prior = -0.5 * (proposed.beta.squaredNorm() - current.beta.squaredNorm()) /
                       spec.beta_prior_variance;
  return loglik_poisson(proposed, spec, counts) - loglik_poisson(current, spec, counts) + prior;
}

namespace {

SvcSamplerOptions validated(const SvcSamplerOptions& o) {
  if (!(o.target_acceptance > 0.0 && o.target_acceptance < 1.0))
    throw ValidationError("target acceptance must lie in (0, 1)");
  if (!(o.divergence_bound > 0.0)) throw ValidationError("divergence bound must be positive");
  return o;
}

std::vector<std::pair<std::string, std::size_t>> stage2_layout(const SvcModelSpec& spec) {
  const auto n = spec.n_areas();
  std::vector<std::pair<std::string, std::size_t>> layout{{"beta", spec.n_fixed()}};
  if (spec.has_bym()) {
    layout.emplace_back("phi", n);
    layout.emplace_back("v", n);
    layout.emplace_back("tau_phi", 1);
    layout.emplace_back("tau_v", 1);
  }
  if (spec.has_delta()) {
    layout.emplace_back("delta", n);
    layout.emplace_back("tau_delta", 1);
  }
  if (!spec.factor_draws.empty()) layout.emplace_back("factor_draw", 1);
  return layout;
}

class Stage2Sampler final : public ChainSampler {
public:
  Stage2Sampler(const SvcModelSpec& spec, std::span<const double> counts, const SpatialGraph& graph,
                const McmcConfig& mcmc, const SvcSamplerOptions& options)
      : spec_(spec), graph_(graph), options_(options), y_(counts.begin(), counts.end()),
        observed_(likelihood_mask(spec, counts)), burn_in_(mcmc.burn_in),
        factors_(&spec.latent_factors), state_(zero_state(spec)) {
    const auto n = spec.n_areas();
    double sum_y = 0.0;
    double sum_e = 0.0;
    double n_obs = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!observed_[i]) continue;
      sum_y += y_[i];
      sum_e += spec.offsets[ix(i)];
      n_obs += 1.0;
    }
    if (spec.family == OutcomeFamily::kPoisson) {
      if (sum_y > 0.0 && sum_e > 0.0) state_.beta[0] = std::log(sum_y / sum_e);
    } else if (n_obs > 0.0) {
      state_.beta[0] = sum_y / n_obs;
    }
    state_.tau_phi = spec.fixed_tau_phi.value_or(1.0);
    state_.tau_v = spec.fixed_tau_v.value_or(1.0);
    state_.tau_delta = spec.fixed_tau_delta.value_or(1.0);

    log_step_beta_.assign(spec.n_fixed(), std::log(options.initial_beta_step));
    log_step_phi_.assign(n, std::log(options.initial_site_step));
    log_step_v_ = log_step_phi_;
    log_step_delta_ = log_step_phi_;
    refresh_predictor();
  }

  void step(Rng& rng, std::size_t iteration) override {
    iteration_ = iteration;
    adapting_ = iteration <= burn_in_;
    late_burn_in_ = adapting_ && 10 * iteration > 9 * burn_in_;
    if (!spec_.factor_draws.empty()) {
      std::uniform_int_distribution<std::size_t> pick(0, spec_.factor_draws.size() - 1);
      factor_draw_ = pick(rng);
      factors_ = &spec_.factor_draws[factor_draw_];
      refresh_predictor();
    }
    update_beta(rng);
    if (spec_.has_bym()) {
      update_phi(rng);
      update_icar_block(rng, state_.v, state_.tau_v, log_step_v_, false);
      absorb_shift(state_.v, 0);
    }
    if (spec_.has_delta()) {
      update_icar_block(rng, state_.delta, state_.tau_delta, log_step_delta_, true);
      absorb_shift(state_.delta, 1);
    }
    update_precisions(rng);
  }

  void end_burn_in() override {
    if (late_proposals_ > 0) {
      const double frac = static_cast<double>(late_divergent_) / static_cast<double>(late_proposals_);
      if (frac > options_.max_divergent_fraction) {
        char buf[160];
        std::snprintf(buf, sizeof buf,
                      "persistent divergence: %.1f%% of proposals late in burn-in had |eta| > %g",
                      100.0 * frac, options_.divergence_bound);
        throw NumericalError(buf);
      }
    }
    if (divergent_ > 0)
      log_warning("stage-2 sampler rejected " + std::to_string(divergent_) +
                  " divergent proposals during burn-in");
    divergent_ = 0;
  }

  void record(std::span<double> row) const override {
    std::size_t pos = 0;
    auto put = [&](const Eigen::VectorXd& v) {
      std::copy_n(v.data(), v.size(), row.begin() + static_cast<std::ptrdiff_t>(pos));
      pos += static_cast<std::size_t>(v.size());
    };
    put(state_.beta);
    if (spec_.has_bym()) {
      put(state_.phi);
      put(state_.v);
      row[pos++] = state_.tau_phi;
      row[pos++] = state_.tau_v;
    }
    if (spec_.has_delta()) {
      put(state_.delta);
      row[pos++] = state_.tau_delta;
    }
    if (!spec_.factor_draws.empty()) row[pos++] = static_cast<double>(factor_draw_);
  }

private:
  void refresh_predictor() {
    lp_.resize(ix(spec_.n_areas()));
    for (std::size_t i = 0; i < spec_.n_areas(); ++i) lp_[ix(i)] = predictor_with(state_, spec_, *factors_, i);
  }

  double site_loglik(std::size_t i, double eta) const {
    return observed_[i] ? loglik_kernel(spec_, i, y_[i], eta) : 0.0;
  }

  bool diverges(double eta) const {
    return spec_.family == OutcomeFamily::kPoisson && std::abs(eta) > options_.divergence_bound;
  }

  void note_proposal(bool divergent) {
    if (divergent) ++divergent_;
    if (late_burn_in_) {
      ++late_proposals_;
      if (divergent) ++late_divergent_;
    }
  }

  void adapt(double& log_step, bool accepted) const {
    if (!adapting_) return;
    const double gain = std::pow(static_cast<double>(iteration_), -0.6);
    log_step += gain * ((accepted ? 1.0 : 0.0) - options_.target_acceptance);
    log_step = std::clamp(log_step, -12.0, 3.0);
  }

  void update_beta(Rng& rng) {
    const auto n = spec_.n_areas();
    std::vector<double> proposal(n);
    for (std::size_t k = 0; k < spec_.n_fixed(); ++k) {
      const double step = std::exp(log_step_beta_[k]) * draw_normal(rng);
      bool divergent = false;
      double delta_ll = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        proposal[i] = lp_[ix(i)] + step * column_value(spec_, *factors_, i, k);
        divergent = divergent || diverges(proposal[i]);
        if (observed_[i]) delta_ll += loglik_kernel(spec_, i, y_[i], proposal[i]) -
                                      loglik_kernel(spec_, i, y_[i], lp_[ix(i)]);
      }
      note_proposal(divergent);
      bool accepted = false;
      if (!divergent) {
        const double b = state_.beta[ix(k)];
        const double log_ratio =
            delta_ll - 0.5 * ((b + step) * (b + step) - b * b) / spec_.beta_prior_variance;
        if (std::log(draw_uniform(rng)) < log_ratio) {
          accepted = true;
          state_.beta[ix(k)] = b + step;
          for (std::size_t i = 0; i < n; ++i) lp_[ix(i)] = proposal[i];
        }
      }
      adapt(log_step_beta_[k], accepted);
    }
  }

  void update_phi(Rng& rng) {
    const double tau = state_.tau_phi;
    for (std::size_t i = 0; i < spec_.n_areas(); ++i) {
      double& phi = state_.phi[ix(i)];
      if (!observed_[i]) {
        const double next = draw_normal(rng, 0.0, 1.0 / std::sqrt(tau));
        lp_[ix(i)] += next - phi;
        phi = next;
        continue;
      }
      const double step = std::exp(log_step_phi_[i]) * draw_normal(rng);
      const double eta_new = lp_[ix(i)] + step;
      const bool divergent = diverges(eta_new);
      note_proposal(divergent);
      bool accepted = false;
      if (!divergent) {
        const double next = phi + step;
        const double log_ratio = site_loglik(i, eta_new) - site_loglik(i, lp_[ix(i)]) -
                                 0.5 * tau * (next * next - phi * phi);
        if (std::log(draw_uniform(rng)) < log_ratio) {
          accepted = true;
          phi = next;
          lp_[ix(i)] = eta_new;
        }
      }
      adapt(log_step_phi_[i], accepted);
    }
  }

  // Single-site random-walk Metropolis against the ICAR conditional; sites
  // without likelihood are drawn from the prior conditional directly.
  void update_icar_block(Rng& rng, Eigen::VectorXd& field, double tau, std::vector<double>& log_step,
                         bool scaled_by_covariate) {
    for (std::size_t i = 0; i < spec_.n_areas(); ++i) {
      double prior_mean = 0.0;
      double prior_precision = tau;
      if (!graph_.is_island(i)) {
        const auto nb = graph_.neighbors(i);
        const auto w = graph_.weights(i);
        double acc = 0.0;
        for (std::size_t k = 0; k < nb.size(); ++k) acc += w[k] * field[ix(nb[k])];
        prior_mean = acc / graph_.weight_sum(i);
        prior_precision = tau * graph_.weight_sum(i);
      }
      const double scale = scaled_by_covariate ? spec_.covariate[ix(i)] : 1.0;
      double& value = field[ix(i)];
      if (!observed_[i] || scale == 0.0) {
        const double next = draw_normal(rng, prior_mean, 1.0 / std::sqrt(prior_precision));
        lp_[ix(i)] += scale * (next - value);
        value = next;
        continue;
      }
      const double step = std::exp(log_step[i]) * draw_normal(rng);
      const double eta_new = lp_[ix(i)] + scale * step;
      const bool divergent = diverges(eta_new);
      note_proposal(divergent);
      bool accepted = false;
      if (!divergent) {
        const double next = value + step;
        const double d_new = next - prior_mean;
        const double d_old = value - prior_mean;
        const double log_ratio = site_loglik(i, eta_new) - site_loglik(i, lp_[ix(i)]) -
                                 0.5 * prior_precision * (d_new * d_new - d_old * d_old);
        if (std::log(draw_uniform(rng)) < log_ratio) {
          accepted = true;
          value = next;
          lp_[ix(i)] = eta_new;
        }
      }
      adapt(log_step[i], accepted);
    }
  }

  void absorb_shift(Eigen::VectorXd& field, std::size_t beta_index) {
    const auto shifts = center_components(graph_, {field.data(), spec_.n_areas()});
    state_.beta[ix(beta_index)] += overall_shift(graph_, shifts);
    refresh_predictor();
  }

  void update_precisions(Rng& rng) {
    const auto& prior = spec_.precision_prior;
    const double n = static_cast<double>(spec_.n_areas());
    const double rank = static_cast<double>(icar_rank(graph_));
    if (spec_.has_bym()) {
      if (!spec_.fixed_tau_phi)
        state_.tau_phi = draw_gamma(rng, prior.shape + 0.5 * n, prior.rate + 0.5 * state_.phi.squaredNorm());
      if (!spec_.fixed_tau_v)
        state_.tau_v = draw_gamma(rng, prior.shape + 0.5 * rank,
                                  prior.rate + 0.5 * icar_pairwise_sum(graph_, {state_.v.data(), spec_.n_areas()}));
    }
    if (spec_.has_delta() && !spec_.fixed_tau_delta)
      state_.tau_delta = draw_gamma(rng, prior.shape + 0.5 * rank,
                                    prior.rate + 0.5 * icar_pairwise_sum(graph_, {state_.delta.data(), spec_.n_areas()}));
  }

  const SvcModelSpec& spec_;
  const SpatialGraph& graph_;
  SvcSamplerOptions options_;
  std::vector<double> y_;
  std::vector<bool> observed_;
  std::size_t burn_in_;
  const Eigen::MatrixXd* factors_;
  std::size_t factor_draw_ = 0;

  SvcModelState state_;
  Eigen::VectorXd lp_;
  std::vector<double> log_step_beta_;
  std::vector<double> log_step_phi_;
  std::vector<double> log_step_v_;
  std::vector<double> log_step_delta_;

  std::size_t iteration_ = 0;
  bool adapting_ = true;
  bool late_burn_in_ = false;
  std::size_t divergent_ = 0;
  std::size_t late_proposals_ = 0;
  std::size_t late_divergent_ = 0;
};

}  // namespace

ChainArchive fit_stage2_mcmc(const SvcModelSpec& spec, std::span<const double> counts,
                             const SpatialGraph& graph, const McmcConfig& mcmc,
                             const SvcSamplerOptions& options) {
  spec.validate();
  mcmc.validate();
  const auto opts = validated(options);
  if (graph.size() != spec.n_areas())
    throw ValidationError("graph size " + std::to_string(graph.size()) +
                          " does not match model areas " + std::to_string(spec.n_areas()));
  if (counts.size() != spec.n_areas()) throw ValidationError("counts length does not match area count");
  if (spec.family == OutcomeFamily::kPoisson) validate_counts(counts);

  auto archive = run_chains(mcmc, stage2_layout(spec), [&](std::size_t) {
    return std::make_unique<Stage2Sampler>(spec, counts, graph, mcmc, opts);
  });
  archive.metadata["stage"] = "2";
  archive.metadata["model"] = rung_name(spec.rung);
  std::string names;
  for (const auto& n : spec.factor_names) names += (names.empty() ? "" : ";") + n;
  archive.metadata["factors"] = names;
  char buf[64];
  std::snprintf(buf, sizeof buf, "gamma(%g, %g)", spec.precision_prior.shape, spec.precision_prior.rate);
  archive.metadata["precision_prior"] = buf;
  return archive;
}

SvcModelState state_from_draw(const ChainArchive& archive, const SvcModelSpec& spec,
                              std::size_t c, std::size_t k) {
  const auto row = archive.draw(c, k);
  auto block = [&](std::string_view name) {
    const auto& p = archive.param(name);
    Eigen::VectorXd v(ix(p.size));
    for (std::size_t i = 0; i < p.size; ++i) v[ix(i)] = row[p.offset + i];
    return v;
  };
  SvcModelState s;
  s.beta = block("beta");
  if (spec.has_bym()) {
    s.phi = block("phi");
    s.v = block("v");
    s.tau_phi = row[archive.param("tau_phi").offset];
    s.tau_v = row[archive.param("tau_v").offset];
  }
  if (spec.has_delta()) {
    s.delta = block("delta");
    s.tau_delta = row[archive.param("tau_delta").offset];
  }
  check_state(s, spec);
  return s;
}

Eigen::VectorXd draw_linear_predictor(const ChainArchive& archive, const SvcModelSpec& spec,
                                      std::size_t c, std::size_t k) {
  const auto state = state_from_draw(archive, spec, c, k);
  const Eigen::MatrixXd* factors = &spec.latent_factors;
  if (!spec.factor_draws.empty() && archive.has_param("factor_draw")) {
    const auto d = static_cast<std::size_t>(archive.draw(c, k)[archive.param("factor_draw").offset]);
    factors = &spec.factor_draws.at(d);
  }
  Eigen::VectorXd eta(ix(spec.n_areas()));
  for (std::size_t i = 0; i < spec.n_areas(); ++i) eta[ix(i)] = predictor_with(state, spec, *factors, i);
  return eta;
}

Eigen::MatrixXd linear_predictor_draws(const ChainArchive& archive, const SvcModelSpec& spec) {
  Eigen::MatrixXd out(ix(archive.total_draws()), ix(spec.n_areas()));
  Eigen::Index row = 0;
  for (std::size_t c = 0; c < archive.n_chains(); ++c)
    for (std::size_t k = 0; k < archive.n_draws(c); ++k)
      out.row(row++) = draw_linear_predictor(archive, spec, c, k).transpose();
  return out;
}

DicResult compute_dic(const Eigen::MatrixXd& draws, const SvcModelSpec& spec,
                      std::span<const double> counts) {
  if (draws.rows() < 2) throw ValidationError("DIC needs at least 2 retained draws");
  if (draws.cols() != ix(counts.size())) throw ValidationError("predictor draws do not match counts");
  const auto mask = likelihood_mask(spec, counts);
  DicResult r;
  for (Eigen::Index s = 0; s < draws.rows(); ++s) {
    double ll = 0.0;
    for (std::size_t i = 0; i < counts.size(); ++i)
      if (mask[i]) ll += pointwise_loglik(spec, i, counts[i], draws(s, ix(i)));
    r.mean_deviance += -2.0 * ll;
  }
  r.mean_deviance /= static_cast<double>(draws.rows());
  const Eigen::VectorXd mean_eta = draws.colwise().mean().transpose();
  double ll = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i)
    if (mask[i]) ll += pointwise_loglik(spec, i, counts[i], mean_eta[ix(i)]);
  r.deviance_at_mean = -2.0 * ll;
  r.p_d = r.mean_deviance - r.deviance_at_mean;
  r.dic = r.mean_deviance + r.p_d;
  return r;
}

WaicResult compute_waic(const Eigen::MatrixXd& draws, const SvcModelSpec& spec,
                        std::span<const double> counts) {
  if (draws.rows() < 2) throw ValidationError("WAIC needs at least 2 retained draws");
  if (draws.cols() != ix(counts.size())) throw ValidationError("predictor draws do not match counts");
  const auto mask = likelihood_mask(spec, counts);
  const auto s_count = static_cast<std::size_t>(draws.rows());
  WaicResult r;
  std::vector<double> lp(s_count);
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (!mask[i]) continue;
    for (std::size_t s = 0; s < s_count; ++s) lp[s] = pointwise_loglik(spec, i, counts[i], draws(ix(s), ix(i)));
    const double top = *std::max_element(lp.begin(), lp.end());
    double acc = 0.0;
    for (double v : lp) acc += std::exp(v - top);
    r.lppd += top + std::log(acc / static_cast<double>(s_count));
    const double mean = std::accumulate(lp.begin(), lp.end(), 0.0) / static_cast<double>(s_count);
    double ss = 0.0;
    for (double v : lp) ss += (v - mean) * (v - mean);
    r.p_waic += ss / static_cast<double>(s_count - 1);
  }
  r.waic = -2.0 * (r.lppd - r.p_waic);
  return r;
}

DicResult compute_dic(const ChainArchive& archive, const SvcModelSpec& spec,
                      std::span<const double> counts) {
  if (archive.total_draws() < 2) throw ValidationError("DIC needs at least 2 retained draws");
  return compute_dic(linear_predictor_draws(archive, spec), spec, counts);
}

WaicResult compute_waic(const ChainArchive& archive, const SvcModelSpec& spec,
                        std::span<const double> counts) {
  if (archive.total_draws() < 2) throw ValidationError("WAIC needs at least 2 retained draws");
  return compute_waic(linear_predictor_draws(archive, spec), spec, counts);
}

RiskSummary relative_risk_summary(const Eigen::MatrixXd& draws) {
  if (draws.rows() == 0) throw ValidationError("risk summary needs at least one draw");
  RiskSummary r;
  std::vector<double> rr(static_cast<std::size_t>(draws.rows()));
  for (Eigen::Index i = 0; i < draws.cols(); ++i) {
    for (Eigen::Index s = 0; s < draws.rows(); ++s) rr[static_cast<std::size_t>(s)] = std::exp(draws(s, i));
    r.mean.push_back(std::accumulate(rr.begin(), rr.end(), 0.0) / static_cast<double>(rr.size()));
    std::sort(rr.begin(), rr.end());
    r.lower.push_back(quantile_sorted(rr, 0.025));
    r.upper.push_back(quantile_sorted(rr, 0.975));
  }
  return r;
}

RiskSummary relative_risk_summary(const ChainArchive& archive, const SvcModelSpec& spec) {
  return relative_risk_summary(linear_predictor_draws(archive, spec));
}

Eigen::MatrixXd risk_exceedance(const Eigen::MatrixXd& draws, std::span<const double> thresholds) {
  if (draws.rows() == 0) throw ValidationError("risk exceedance needs at least one draw");
  if (thresholds.empty()) thresholds = kDefaultRiskThresholds;
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(draws.cols(), ix(thresholds.size()));
  for (Eigen::Index i = 0; i < draws.cols(); ++i)
    for (Eigen::Index s = 0; s < draws.rows(); ++s) {
      const double rr = std::exp(draws(s, i));
      for (std::size_t t = 0; t < thresholds.size(); ++t)
        if (rr > thresholds[t]) out(i, ix(t)) += 1.0;
    }
  return out / static_cast<double>(draws.rows());
}

Eigen::MatrixXd risk_exceedance(const ChainArchive& archive, const SvcModelSpec& spec,
                                std::span<const double> thresholds) {
  return risk_exceedance(linear_predictor_draws(archive, spec), thresholds);
}

RateRatio rate_ratio(std::span<const double> beta_draws) {
  if (beta_draws.empty()) throw ValidationError("rate ratio needs at least one draw");
  const auto s = summarize_draws(beta_draws);
  RateRatio rr;
  rr.exp_of_mean = std::exp(s.mean);
  double acc = 0.0;
  for (double b : beta_draws) acc += std::exp(b);
  rr.mean_of_exp = acc / static_cast<double>(beta_draws.size());
  rr.lower = std::exp(s.q025);
  rr.upper = std::exp(s.q975);
  return rr;
}

std::string format_rate_ratio(const RateRatio& rr) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "e^beta = %.3f, 95%% credible interval: %.3f, %.3f", rr.exp_of_mean,
                rr.lower, rr.upper);
  return buf;
}

PrecisionSummary summarize_precision(std::span<const double> draws) {
  const auto s = summarize_draws(draws);
  PrecisionSummary out{s.mean, s.mean, s.q025, s.q975};
  if (draws.size() < 2 || !(s.sd > 0.0)) return out;
  std::vector<double> sorted(draws.begin(), draws.end());
  std::sort(sorted.begin(), sorted.end());
  const double iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
  double spread = s.sd;
  if (iqr > 0.0) spread = std::min(spread, iqr / 1.34);
  const double h = 0.9 * spread * std::pow(static_cast<double>(draws.size()), -0.2);
  constexpr int kGrid = 512;
  const double lo = sorted.front();
  const double hi = sorted.back();
  double best = -1.0;
  for (int g = 0; g < kGrid; ++g) {
    const double x = lo + (hi - lo) * g / (kGrid - 1);
    double dens = 0.0;
    for (double d : sorted) {
      const double u = (x - d) / h;
      dens += std::exp(-0.5 * u * u);
    }
    if (dens > best) {
      best = dens;
      out.mode = x;
    }
  }
  return out;
}

}  // namespace areal
