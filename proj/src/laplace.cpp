#include "areal/laplace.hpp"

#include "areal/error.hpp"
#include "areal/icar.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <cmath>
#include <cstdio>
#include <limits>

namespace areal {

namespace {

using SpMat = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;
using Eigen::Index;

// Components up to this size get their constraint penalty written straight
// into the sparse matrix; larger ones go through a low-rank update.
constexpr std::size_t kDenseComponent = 64;

struct Layout {
  std::size_t p = 0;
  std::size_t n = 0;
  Index phi = -1;
  Index v = -1;
  Index delta = -1;
  Index dim = 0;
};

Layout make_layout(const SvcModelSpec& spec) {
  Layout L;
  L.p = spec.n_fixed();
  L.n = spec.n_areas();
  Index next = static_cast<Index>(L.p);
  if (spec.has_bym()) {
    L.phi = next;
    L.v = next + static_cast<Index>(L.n);
    next += 2 * static_cast<Index>(L.n);
  }
  if (spec.has_delta()) {
    L.delta = next;
    next += static_cast<Index>(L.n);
  }
  L.dim = next;
  return L;
}

class Objective {
public:
  Objective(const SvcModelSpec& spec, std::span<const double> counts, const SpatialGraph& graph,
            const LaplaceHyper& hyper, double kappa)
      : spec_(spec), graph_(graph), L_(make_layout(spec)), hyper_(hyper), kappa_(kappa),
        y_(counts.begin(), counts.end()), mask_(likelihood_mask(spec, counts)) {
    for (std::size_t c = 0; c < graph.n_components(); ++c) {
      if (graph.component_members(c).size() > kDenseComponent) large_.push_back(c);
    }
  }

  const Layout& layout() const { return L_; }

  double x(std::size_t i, std::size_t k) const {
    if (k == 0) return 1.0;
    if (k == 1) return spec_.covariate[static_cast<Index>(i)];
    return spec_.latent_factors(static_cast<Index>(i), static_cast<Index>(k - 2));
  }

  Eigen::VectorXd predictor(const Eigen::VectorXd& r) const {
    Eigen::VectorXd eta(static_cast<Index>(L_.n));
    for (std::size_t i = 0; i < L_.n; ++i) {
      const auto ii = static_cast<Index>(i);
      double e = 0.0;
      for (std::size_t k = 0; k < L_.p; ++k) e += r[static_cast<Index>(k)] * x(i, k);
      if (L_.phi >= 0) e += r[L_.phi + ii] + r[L_.v + ii];
      if (L_.delta >= 0) e += spec_.covariate[ii] * r[L_.delta + ii];
      eta[ii] = e;
    }
    return eta;
  }

  double loglik(const Eigen::VectorXd& eta) const {
    double total = 0.0;
    for (std::size_t i = 0; i < L_.n; ++i)
      if (mask_[i]) total += pointwise_loglik(spec_, i, y_[i], eta[static_cast<Index>(i)]);
    return total;
  }

  // d loglik / d eta and -d^2 loglik / d eta^2 per area
  void eta_derivatives(const Eigen::VectorXd& eta, Eigen::VectorXd& grad, Eigen::VectorXd& weight) const {
    grad = Eigen::VectorXd::Zero(eta.size());
    weight = Eigen::VectorXd::Zero(eta.size());
    for (std::size_t i = 0; i < L_.n; ++i) {
      if (!mask_[i]) continue;
      const auto ii = static_cast<Index>(i);
      if (spec_.family == OutcomeFamily::kGaussian) {
        const double prec = 1.0 / spec_.gaussian_noise_variance;
        grad[ii] = (y_[i] - eta[ii]) * prec;
        weight[ii] = prec;
      } else {
        const double mu = spec_.offsets[ii] * std::exp(eta[ii]);
        grad[ii] = y_[i] - mu;
        weight[ii] = mu;
      }
    }
  }

  double block_sum(const Eigen::VectorXd& r, Index start, std::size_t c) const {
    double s = 0.0;
    for (auto i : graph_.component_members(c)) s += r[start + static_cast<Index>(i)];
    return s;
  }

  // Prior quadratic without the constraint penalty (used in the marginal).
  double prior_quadratic(const Eigen::VectorXd& r) const {
    double q = r.head(static_cast<Index>(L_.p)).squaredNorm() / spec_.beta_prior_variance;
    if (L_.phi >= 0) {
      q += hyper_.tau_phi * r.segment(L_.phi, static_cast<Index>(L_.n)).squaredNorm();
      q += hyper_.tau_v * icar_pairwise_sum(graph_, {r.data() + L_.v, L_.n});
    }
    if (L_.delta >= 0) q += hyper_.tau_delta * icar_pairwise_sum(graph_, {r.data() + L_.delta, L_.n});
    return q;
  }

  double penalty(const Eigen::VectorXd& r) const {
    double s = 0.0;
    for (Index start : constrained_blocks()) {
      for (std::size_t c = 0; c < graph_.n_components(); ++c) {
        const double b = block_sum(r, start, c);
        s += b * b;
      }
    }
    return kappa_ * s;
  }

  double value(const Eigen::VectorXd& r) const {
    const double ll = loglik(predictor(r));
    if (!std::isfinite(ll)) return -std::numeric_limits<double>::infinity();
    return ll - 0.5 * prior_quadratic(r) - 0.5 * penalty(r);
  }

  std::vector<Index> constrained_blocks() const {
    std::vector<Index> out;
    if (L_.v >= 0) out.push_back(L_.v);
    if (L_.delta >= 0) out.push_back(L_.delta);
    return out;
  }

  Eigen::VectorXd gradient(const Eigen::VectorXd& r, const Eigen::VectorXd& eta) const {
    Eigen::VectorXd g_eta;
    Eigen::VectorXd w;
    eta_derivatives(eta, g_eta, w);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(L_.dim);
    for (std::size_t i = 0; i < L_.n; ++i) {
      const auto ii = static_cast<Index>(i);
      for (std::size_t k = 0; k < L_.p; ++k) g[static_cast<Index>(k)] += x(i, k) * g_eta[ii];
      if (L_.phi >= 0) {
        g[L_.phi + ii] += g_eta[ii];
        g[L_.v + ii] += g_eta[ii];
      }
      if (L_.delta >= 0) g[L_.delta + ii] += spec_.covariate[ii] * g_eta[ii];
    }
    g.head(static_cast<Index>(L_.p)) -= r.head(static_cast<Index>(L_.p)) / spec_.beta_prior_variance;
    if (L_.phi >= 0) g.segment(L_.phi, static_cast<Index>(L_.n)) -= hyper_.tau_phi * r.segment(L_.phi, static_cast<Index>(L_.n));
    auto icar_grad = [&](Index start, double tau) {
      for (std::size_t i = 0; i < L_.n; ++i) {
        const auto nb = graph_.neighbors(i);
        const auto wt = graph_.weights(i);
        double acc = 0.0;
        for (std::size_t k = 0; k < nb.size(); ++k)
          acc += wt[k] * (r[start + static_cast<Index>(i)] - r[start + static_cast<Index>(nb[k])]);
        g[start + static_cast<Index>(i)] -= tau * acc;
      }
      for (std::size_t c = 0; c < graph_.n_components(); ++c) {
        const double b = block_sum(r, start, c);
        for (auto i : graph_.component_members(c)) g[start + static_cast<Index>(i)] -= kappa_ * b;
      }
    };
    if (L_.v >= 0) icar_grad(L_.v, hyper_.tau_v);
    if (L_.delta >= 0) icar_grad(L_.delta, hyper_.tau_delta);
    return g;
  }

  // Sparse part of the negative Hessian (everything except the penalty on
  // large components).
  SpMat sparse_hessian(const Eigen::VectorXd& eta) const {
    Eigen::VectorXd g_eta;
    Eigen::VectorXd w;
    eta_derivatives(eta, g_eta, w);
    std::vector<Triplet> t;
    t.reserve(static_cast<std::size_t>(L_.dim) * (L_.p + 8));
    const auto p = static_cast<Index>(L_.p);
    Eigen::MatrixXd bb = Eigen::MatrixXd::Identity(p, p) / spec_.beta_prior_variance;
    for (std::size_t i = 0; i < L_.n; ++i) {
      const auto ii = static_cast<Index>(i);
      const double wi = w[ii];
      if (wi == 0.0) continue;
      const double xi = spec_.covariate[ii];
      std::vector<std::pair<Index, double>> cols;  // (index, d eta_i / d r)
      for (std::size_t k = 0; k < L_.p; ++k) cols.emplace_back(static_cast<Index>(k), x(i, k));
      if (L_.phi >= 0) {
        cols.emplace_back(L_.phi + ii, 1.0);
        cols.emplace_back(L_.v + ii, 1.0);
      }
      if (L_.delta >= 0) cols.emplace_back(L_.delta + ii, xi);
      for (const auto& [a, da] : cols)
        for (const auto& [b, db] : cols) {
          if (a < p && b < p) {
            bb(a, b) += wi * da * db;
          } else {
            t.emplace_back(a, b, wi * da * db);
          }
        }
    }
    for (Index a = 0; a < p; ++a)
      for (Index b = 0; b < p; ++b) t.emplace_back(a, b, bb(a, b));
    if (L_.phi >= 0)
      for (std::size_t i = 0; i < L_.n; ++i)
        t.emplace_back(L_.phi + static_cast<Index>(i), L_.phi + static_cast<Index>(i), hyper_.tau_phi);
    auto icar_block = [&](Index start, double tau) {
      for (std::size_t i = 0; i < L_.n; ++i) {
        const auto a = start + static_cast<Index>(i);
        t.emplace_back(a, a, tau * graph_.weight_sum(i));
        const auto nb = graph_.neighbors(i);
        const auto wt = graph_.weights(i);
        for (std::size_t k = 0; k < nb.size(); ++k) t.emplace_back(a, start + static_cast<Index>(nb[k]), -tau * wt[k]);
      }
      for (std::size_t c = 0; c < graph_.n_components(); ++c) {
        const auto members = graph_.component_members(c);
        if (members.size() > kDenseComponent) continue;
        for (auto i : members)
          for (auto j : members) t.emplace_back(start + static_cast<Index>(i), start + static_cast<Index>(j), kappa_);
      }
    };
    if (L_.v >= 0) icar_block(L_.v, hyper_.tau_v);
    if (L_.delta >= 0) icar_block(L_.delta, hyper_.tau_delta);
    SpMat h(L_.dim, L_.dim);
    h.setFromTriplets(t.begin(), t.end());
    return h;
  }

  Eigen::MatrixXd low_rank_factor() const {
    const auto blocks = constrained_blocks();
    Eigen::MatrixXd u = Eigen::MatrixXd::Zero(L_.dim, static_cast<Index>(blocks.size() * large_.size()));
    Index col = 0;
    const double s = std::sqrt(kappa_);
    for (Index start : blocks)
      for (std::size_t c : large_) {
        for (auto i : graph_.component_members(c)) u(start + static_cast<Index>(i), col) = s;
        ++col;
      }
    return u;
  }

  SvcModelState to_state(const Eigen::VectorXd& r) const {
    SvcModelState s = zero_state(spec_);
    s.beta = r.head(static_cast<Index>(L_.p));
    if (L_.phi >= 0) {
      s.phi = r.segment(L_.phi, static_cast<Index>(L_.n));
      s.v = r.segment(L_.v, static_cast<Index>(L_.n));
      s.tau_phi = hyper_.tau_phi;
      s.tau_v = hyper_.tau_v;
    }
    if (L_.delta >= 0) {
      s.delta = r.segment(L_.delta, static_cast<Index>(L_.n));
      s.tau_delta = hyper_.tau_delta;
    }
    return s;
  }

private:
  const SvcModelSpec& spec_;
  const SpatialGraph& graph_;
  Layout L_;
  LaplaceHyper hyper_;
  double kappa_;
  std::vector<double> y_;
  std::vector<bool> mask_;
  std::vector<std::size_t> large_;
};

// Solver for (H_s + U U^T) via Woodbury on top of a sparse LDL^T of H_s.
class CurvatureSolver {
public:
  CurvatureSolver(const SpMat& hs, Eigen::MatrixXd u) : u_(std::move(u)) {
    ldlt_.compute(hs);
    if (ldlt_.info() != Eigen::Success || (ldlt_.vectorD().array() <= 0.0).any())
      throw NumericalError("Laplace curvature matrix is not positive definite");
    if (u_.cols() > 0) {
      z_ = ldlt_.solve(u_);
      cap_ = Eigen::MatrixXd::Identity(u_.cols(), u_.cols()) + u_.transpose() * z_;
      cap_llt_.compute(cap_);
    }
  }

  Eigen::VectorXd solve(const Eigen::VectorXd& b) const {
    Eigen::VectorXd y = ldlt_.solve(b);
    if (u_.cols() > 0) y -= z_ * cap_llt_.solve(u_.transpose() * y);
    return y;
  }

  double log_determinant() const {
    double ld = ldlt_.vectorD().array().log().sum();
    if (u_.cols() > 0) {
      const Eigen::MatrixXd lc = cap_llt_.matrixL();
      ld += 2.0 * lc.diagonal().array().log().sum();
    }
    return ld;
  }

private:
  Eigen::SimplicialLDLT<SpMat> ldlt_;
  Eigen::MatrixXd u_;
  Eigen::MatrixXd z_;
  Eigen::MatrixXd cap_;
  Eigen::LLT<Eigen::MatrixXd> cap_llt_;
};

double gamma_log_density(double tau, const GammaPrior& prior) {
  return prior.shape * std::log(prior.rate) - std::lgamma(prior.shape) +
         (prior.shape - 1.0) * std::log(tau) - prior.rate * tau;
}

}  // namespace

LaplaceResult laplace_mode(const SvcModelSpec& spec, std::span<const double> counts,
                           const SpatialGraph& graph, const LaplaceHyper& hyper,
                           const LaplaceOptions& options, const Eigen::VectorXd* start) {
  spec.validate();
  if (graph.size() != spec.n_areas()) throw ValidationError("graph size does not match model areas");
  if (counts.size() != spec.n_areas()) throw ValidationError("counts length does not match area count");
  if (spec.family == OutcomeFamily::kPoisson) validate_counts(counts);
  if (!(hyper.tau_phi > 0.0 && hyper.tau_v > 0.0 && hyper.tau_delta > 0.0))
    throw ValidationError("Laplace precisions must be positive");
  if (!(options.constraint_precision > 0.0)) throw ValidationError("constraint precision must be positive");

  const Objective obj(spec, counts, graph, hyper, options.constraint_precision);
  const auto& L = obj.layout();
  const auto u = obj.low_rank_factor();

  Eigen::VectorXd r = Eigen::VectorXd::Zero(L.dim);
  if (start != nullptr && start->size() == L.dim) {
    r = *start;
  } else {
    const auto mask = likelihood_mask(spec, counts);
    double sy = 0.0;
    double se = 0.0;
    double nobs = 0.0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
      if (!mask[i]) continue;
      sy += counts[i];
      se += spec.offsets[static_cast<Index>(i)];
      nobs += 1.0;
    }
    if (spec.family == OutcomeFamily::kPoisson && sy > 0.0 && se > 0.0) r[0] = std::log(sy / se);
    if (spec.family == OutcomeFamily::kGaussian && nobs > 0.0) r[0] = sy / nobs;
  }

  LaplaceResult res;
  res.hyper = hyper;
  double f = obj.value(r);
  if (!std::isfinite(f)) throw NumericalError("Laplace objective is not finite at the starting point");
  Eigen::VectorXd eta = obj.predictor(r);
  Eigen::VectorXd g = obj.gradient(r, eta);
  std::size_t it = 0;
  while (g.lpNorm<Eigen::Infinity>() > options.gradient_tolerance) {
    if (it == options.max_iterations) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "Newton did not converge in %zu iterations; gradient max-norm %.3g",
                    it, g.lpNorm<Eigen::Infinity>());
      throw NumericalError(buf);
    }
    ++it;
    const CurvatureSolver solver(obj.sparse_hessian(eta), u);
    const Eigen::VectorXd d = solver.solve(g);
    double step = 1.0;
    bool accepted = false;
    for (std::size_t h = 0; h <= options.max_halvings; ++h) {
      const Eigen::VectorXd trial = r + step * d;
      const double ft = obj.value(trial);
      if (std::isfinite(ft) && ft >= f - 1e-12 * (1.0 + std::abs(f))) {
        r = trial;
        f = ft;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      char buf[160];
      std::snprintf(buf, sizeof buf,
                    "Newton step failed after %zu halvings; gradient max-norm %.3g",
                    options.max_halvings, g.lpNorm<Eigen::Infinity>());
      throw NumericalError(buf);
    }
    eta = obj.predictor(r);
    g = obj.gradient(r, eta);
    if (step * d.lpNorm<Eigen::Infinity>() < 1e-15 * (1.0 + r.lpNorm<Eigen::Infinity>())) break;
  }

  const CurvatureSolver solver(obj.sparse_hessian(eta), u);
  const auto p = static_cast<Index>(L.p);
  res.beta_covariance.resize(p, p);
  for (Index k = 0; k < p; ++k) {
    Eigen::VectorXd e = Eigen::VectorXd::Unit(L.dim, k);
    res.beta_covariance.col(k) = solver.solve(e).head(p);
  }
  if (options.marginal_variances) {
    res.marginal_sd.resize(L.dim);
    for (Index k = 0; k < L.dim; ++k) {
      Eigen::VectorXd e = Eigen::VectorXd::Unit(L.dim, k);
      res.marginal_sd[k] = std::sqrt(std::max(0.0, solver.solve(e)[k]));
    }
  }

  // log pi(y | R1*) + log pi(R1* | tau) + log pi(tau) - 1/2 log|H|
  const double n = static_cast<double>(L.n);
  const double rank = static_cast<double>(icar_rank(graph));
  double log_prior_det = -static_cast<double>(L.p) * std::log(spec.beta_prior_variance);
  double log_hyper = 0.0;
  if (spec.has_bym()) {
    log_prior_det += n * std::log(hyper.tau_phi) + rank * std::log(hyper.tau_v);
    log_hyper += gamma_log_density(hyper.tau_phi, spec.precision_prior) +
                 gamma_log_density(hyper.tau_v, spec.precision_prior);
  }
  if (spec.has_delta()) {
    log_prior_det += rank * std::log(hyper.tau_delta);
    log_hyper += gamma_log_density(hyper.tau_delta, spec.precision_prior);
  }
  res.log_marginal = obj.loglik(eta) + 0.5 * log_prior_det - 0.5 * obj.prior_quadratic(r) +
                     log_hyper - 0.5 * solver.log_determinant();
  res.latent_mode = r;
  res.mode = obj.to_state(r);
  res.gradient_max_norm = g.lpNorm<Eigen::Infinity>();
  res.iterations = it;
  return res;
}

LaplaceResult fit_stage2_laplace(const SvcModelSpec& spec, std::span<const double> counts,
                                 const SpatialGraph& graph, std::span<const LaplaceHyper> grid,
                                 const LaplaceOptions& options) {
  if (grid.empty()) throw ValidationError("Laplace hyperparameter grid is empty");
  LaplaceResult best;
  bool have = false;
  std::vector<LaplaceGridPoint> evaluated;
  Eigen::VectorXd warm;
  for (const auto& h : grid) {
    auto r = laplace_mode(spec, counts, graph, h, options, have ? &warm : nullptr);
    evaluated.push_back({h, r.log_marginal});
    warm = r.latent_mode;
    if (!have || r.log_marginal > best.log_marginal) best = std::move(r);
    have = true;
  }
  best.grid = std::move(evaluated);
  return best;
}

std::vector<LaplaceHyper> make_hyper_grid(const SvcModelSpec& spec, std::span<const double> values) {
  for (double v : values)
    if (!(v > 0.0)) throw ValidationError("precision grid values must be positive");
  if (!spec.has_bym() || values.empty()) return {LaplaceHyper{}};
  std::vector<LaplaceHyper> out;
  for (double a : values)
    for (double b : values) {
      if (!spec.has_delta()) {
        out.push_back({a, b, 1.0});
        continue;
      }
      for (double c : values) out.push_back({a, b, c});
    }
  return out;
}

}  // namespace areal
