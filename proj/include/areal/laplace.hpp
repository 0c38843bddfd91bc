#pragma once

#include "areal/graph.hpp"
#include "areal/stage2.hpp"

#include <Eigen/Core>

#include <span>
#include <vector>

namespace areal {

// Fixed precisions (tau) of the BYM and varying-coefficient blocks.
struct LaplaceHyper {
  double tau_phi = 1.0;
  double tau_v = 1.0;
  double tau_delta = 1.0;
};

struct LaplaceOptions {
  std::size_t max_iterations = 200;
  double gradient_tolerance = 1e-8;
  std::size_t max_halvings = 50;
  // Penalty kappa/2 (sum_c x)^2 per component standing in for the hard
  // sum-to-zero constraint on v and delta.
  double constraint_precision = 1e4;
  // Marginal sds for every latent coordinate (one sparse solve each); the
  // beta block is always computed.
  bool marginal_variances = true;
};

struct LaplaceGridPoint {
  LaplaceHyper hyper;
  double log_marginal = 0.0;
};

struct LaplaceResult {
  LaplaceHyper hyper;
  SvcModelState mode;
  Eigen::VectorXd latent_mode;      // (beta, phi, v, delta) stacked as present
  Eigen::VectorXd marginal_sd;      // empty when marginal_variances is off
  Eigen::MatrixXd beta_covariance;  // inverse curvature, beta block
  double log_marginal = 0.0;        // up to a tau-independent constant
  double gradient_max_norm = 0.0;
  std::size_t iterations = 0;
  std::vector<LaplaceGridPoint> grid;
};

// Newton mode of log p(y | R1) + log p(R1 | tau) at fixed tau, with the
// Gaussian curvature approximation and approximate log marginal of tau.
// `start` (optional) is a stacked latent vector to warm-start from.
LaplaceResult laplace_mode(const SvcModelSpec& spec, std::span<const double> counts,
                           const SpatialGraph& graph, const LaplaceHyper& hyper,
                           const LaplaceOptions& options = {},
                           const Eigen::VectorXd* start = nullptr);

// Evaluates every grid point and returns the one with the largest
// approximate log marginal; `grid` of the result holds all evaluations.
LaplaceResult fit_stage2_laplace(const SvcModelSpec& spec, std::span<const double> counts,
                                 const SpatialGraph& graph, std::span<const LaplaceHyper> grid,
                                 const LaplaceOptions& options = {});

// Cartesian product of `values` over the precisions active in the rung.
std::vector<LaplaceHyper> make_hyper_grid(const SvcModelSpec& spec, std::span<const double> values);

}  // namespace areal
