#pragma once

#include "areal/graph.hpp"
#include "areal/random.hpp"

#include <Eigen/Core>

#include <cstddef>
#include <span>
#include <vector>

namespace areal {

// Values of an intrinsic CAR field on a graph plus its conditional variance
// scale sigma^2. The graph is not owned and must outlive the field.
struct IcarField {
  IcarField(const SpatialGraph& g, Eigen::VectorXd v, double var = 1.0)
      : graph(&g), values(std::move(v)), variance(var) {}
  IcarField(const SpatialGraph& g, double var = 1.0)
      : graph(&g), values(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(g.size()))),
        variance(var) {}

  const SpatialGraph* graph;
  Eigen::VectorXd values;
  double variance;
};

struct NormalMoments {
  double mean = 0.0;
  double variance = 0.0;
};

// Prior full conditional of site i: N(sum_j w_ij x_j / w_i+, sigma^2 / w_i+).
// Throws ValidationError for an island.
NormalMoments icar_conditional(const IcarField& field, std::size_t i);

// sum over undirected edges of w_ij (x_i - x_j)^2
double icar_pairwise_sum(const SpatialGraph& graph, std::span<const double> values);

// -N log sigma - sum_{j<i} w_ij (x_i - x_j)^2 / (2 sigma^2)
double icar_logdensity_unnormalized(const IcarField& field);

// Rank of Q = diag(w_i+) - W, i.e. n minus the number of connected components.
std::size_t icar_rank(const SpatialGraph& graph);

// Subtracts the mean of each connected component in place. Returns the
// removed means, indexed by component label.
std::vector<double> center_components(const SpatialGraph& graph, std::span<double> values);

IcarField project_sum_to_zero(IcarField field);

// Exact draw of site i from prior conditional x Gaussian likelihood term,
// where the likelihood term is given as (precision, precision * target).
// Islands use an independent N(0, sigma^2) prior in place of the ICAR
// conditional.
double draw_icar_site(const IcarField& field, std::size_t i, double lik_precision,
                      double lik_weighted_mean, Rng& rng);

// Mean and variance that draw_icar_site samples from.
NormalMoments icar_site_posterior(const IcarField& field, std::size_t i, double lik_precision,
                                  double lik_weighted_mean);

// One ascending single-site Gibbs sweep followed by per-component centering.
// Returns the removed component means so callers can absorb them elsewhere.
std::vector<double> sample_icar_gibbs_sweep(IcarField& field,
                                            std::span<const double> lik_precision,
                                            std::span<const double> lik_weighted_mean,
                                            Rng& rng);

// Size-weighted average of per-component shifts, i.e. the shift of the overall
// mean. Equal to the single shift on a connected graph.
double overall_shift(const SpatialGraph& graph, std::span<const double> component_shifts);

}  // namespace areal
