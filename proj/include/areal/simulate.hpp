#pragma once

#include "areal/graph.hpp"
#include "areal/pipeline.hpp"
#include "areal/random.hpp"
#include "areal/stage2.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

namespace areal {

// Rook-contiguity lattice, row-major indexing. Throws for rows or cols < 2.
SpatialGraph make_lattice(std::size_t rows, std::size_t cols);

// Exact ICAR prior draws through the spectral pseudo-inverse of Q restricted
// to its positive eigenvalues. Limited to graphs of at most 2500 areas.
class IcarPriorSampler {
public:
  static constexpr std::size_t kMaxAreas = 2500;

  explicit IcarPriorSampler(const SpatialGraph& graph);

  // One centered draw with marginal scale sigma^2 = variance.
  Eigen::VectorXd draw(Rng& rng, double variance = 1.0) const;
  // Moore-Penrose pseudo-inverse of Q.
  Eigen::MatrixXd pseudo_inverse() const;

private:
  const SpatialGraph* graph_;
  Eigen::MatrixXd basis_;          // eigenvectors with positive eigenvalue
  Eigen::VectorXd inv_sqrt_eig_;
};

struct Stage1Simulation {
  IndicatorPanel panel;
  Eigen::VectorXd eta;
};

// z_ip = alpha_p + lambda_p eta_i + N(0, sigma2_p), eta from the ICAR prior
// with unit variance. alpha defaults to zero. Requires lambda[anchor] == 1.
Stage1Simulation simulate_stage1(const SpatialGraph& graph, std::span<const double> lambda,
                                 std::span<const double> sigma2, std::uint64_t seed,
                                 std::span<const double> alpha = {}, std::size_t anchor_index = 0);

// Random-effect truth for the rung: phi ~ N(0, 1/tau_phi), v and delta from
// the ICAR prior with variances 1/tau_v and 1/tau_delta.
SvcModelState draw_svc_truth(const SvcModelSpec& spec, const SpatialGraph& graph,
                             const Eigen::VectorXd& beta, double tau_phi, double tau_v,
                             double tau_delta, Rng& rng);

struct Stage2Simulation {
  std::vector<double> counts;    // NaN where suppressed
  std::vector<bool> suppressed;
  Eigen::VectorXd mean;          // exp(eta) E
};

// Poisson counts at the true rates; n_suppressed areas chosen uniformly are
// masked.
Stage2Simulation simulate_stage2(const SvcModelSpec& spec, const SvcModelState& truth,
                                 std::uint64_t seed, std::size_t n_suppressed = 0);

// Full synthetic raw dataset in the shapes the command-line pipeline reads.
struct DatasetConfig {
  std::size_t rows = 10;
  std::size_t cols = 10;
  std::vector<double> lambda{1.0, 1.2, -0.8, 1.5, 0.5};
  double indicator_noise_variance = 0.3;
  double indicator_missing_fraction = 0.02;
  std::size_t n_groups = 4;
  std::size_t n_strata = 4;
  double beta0 = 0.1;
  double beta_ice = -1.0;
  double beta_factor = 0.3;
  double tau_phi = 20.0;
  double tau_v = 5.0;
  double delta_sd = 0.4;  // amplitude of a smooth varying coefficient; 0 = none
  std::size_t n_suppressed = 3;
  std::uint64_t seed = 1;
};

struct Dataset {
  SpatialGraph graph;
  std::vector<std::string> area_ids;
  std::vector<std::string> names;
  std::vector<std::string> groups;
  std::vector<std::string> indicator_names;
  Eigen::MatrixXd indicators;     // raw scale, NaN = missing
  Eigen::VectorXd privileged;
  Eigen::VectorXd deprived;
  Eigen::VectorXd total;
  std::vector<std::string> strata;
  Eigen::MatrixXd population;     // N x S
  Eigen::MatrixXd deaths;         // N x S, NaN rows where suppressed
  std::vector<double> observed;   // NaN where suppressed
  Eigen::VectorXd true_eta;
  Eigen::VectorXd true_delta;
};

Dataset simulate_dataset(const DatasetConfig& config);

}  // namespace areal
