#include "areal/icar.hpp"

#include "areal/error.hpp"

#include <cmath>
#include <string>

namespace areal {

NormalMoments icar_conditional(const IcarField& field, std::size_t i) {
  const auto& g = *field.graph;
  if (i >= g.size()) throw ValidationError("area index out of range");
  if (g.is_island(i))
    throw ValidationError("area " + std::to_string(i) + " is an island; ICAR conditional undefined");
  const auto nb = g.neighbors(i);
  const auto w = g.weights(i);
  double acc = 0.0;
  for (std::size_t k = 0; k < nb.size(); ++k) acc += w[k] * field.values[static_cast<Eigen::Index>(nb[k])];
  return {acc / g.weight_sum(i), field.variance / g.weight_sum(i)};
}

double icar_pairwise_sum(const SpatialGraph& graph, std::span<const double> values) {
  double total = 0.0;
  for (std::size_t i = 0; i < graph.size(); ++i) {
    const auto nb = graph.neighbors(i);
    const auto w = graph.weights(i);
    for (std::size_t k = 0; k < nb.size(); ++k) {
      if (nb[k] >= i) break;
      const double d = values[i] - values[nb[k]];
      total += w[k] * d * d;
    }
  }
  return total;
}

double icar_logdensity_unnormalized(const IcarField& field) {
  const auto& g = *field.graph;
  const double n = static_cast<double>(g.size());
  const double pairwise = icar_pairwise_sum(g, {field.values.data(), g.size()});
  return -0.5 * n * std::log(field.variance) - 0.5 * pairwise / field.variance;
}

std::size_t icar_rank(const SpatialGraph& graph) { return graph.size() - graph.n_components(); }

std::vector<double> center_components(const SpatialGraph& graph, std::span<double> values) {
  std::vector<double> means(graph.n_components(), 0.0);
  for (std::size_t c = 0; c < graph.n_components(); ++c) {
    const auto members = graph.component_members(c);
    double sum = 0.0;
    for (std::size_t i : members) sum += values[i];
    const double mean = sum / static_cast<double>(members.size());
    for (std::size_t i : members) values[i] -= mean;
    means[c] = mean;
  }
  return means;
}

IcarField project_sum_to_zero(IcarField field) {
  center_components(*field.graph, {field.values.data(), static_cast<std::size_t>(field.values.size())});
  return field;
}

NormalMoments icar_site_posterior(const IcarField& field, std::size_t i, double lik_precision,
                                  double lik_weighted_mean) {
  const auto& g = *field.graph;
  double prior_precision;
  double prior_weighted_mean;
  if (g.is_island(i)) {
    prior_precision = 1.0 / field.variance;
    prior_weighted_mean = 0.0;
  } else {
    const auto nb = g.neighbors(i);
    const auto w = g.weights(i);
    double acc = 0.0;
    for (std::size_t k = 0; k < nb.size(); ++k)
      acc += w[k] * field.values[static_cast<Eigen::Index>(nb[k])];
    prior_precision = g.weight_sum(i) / field.variance;
    prior_weighted_mean = acc / field.variance;
  }
  const double precision = prior_precision + lik_precision;
  return {(prior_weighted_mean + lik_weighted_mean) / precision, 1.0 / precision};
}

double draw_icar_site(const IcarField& field, std::size_t i, double lik_precision,
                      double lik_weighted_mean, Rng& rng) {
  const auto m = icar_site_posterior(field, i, lik_precision, lik_weighted_mean);
  return draw_normal(rng, m.mean, std::sqrt(m.variance));
}

std::vector<double> sample_icar_gibbs_sweep(IcarField& field,
                                            std::span<const double> lik_precision,
                                            std::span<const double> lik_weighted_mean,
                                            Rng& rng) {
  const auto& g = *field.graph;
  if (lik_precision.size() != g.size() || lik_weighted_mean.size() != g.size())
    throw ValidationError("likelihood contributions must have one entry per area");
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(lik_precision[i] >= 0.0))
      throw ValidationError("likelihood precision must be nonnegative");
    field.values[static_cast<Eigen::Index>(i)] =
        draw_icar_site(field, i, lik_precision[i], lik_weighted_mean[i], rng);
  }
  return center_components(g, {field.values.data(), g.size()});
}

double overall_shift(const SpatialGraph& graph, std::span<const double> component_shifts) {
  double total = 0.0;
  for (std::size_t c = 0; c < graph.n_components(); ++c)
    total += component_shifts[c] * static_cast<double>(graph.component_members(c).size());
  return total / static_cast<double>(graph.size());
}

}  // namespace areal
