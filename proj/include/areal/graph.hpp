#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace areal {

struct Edge {
  std::size_t src = 0;
  std::size_t dst = 0;
  double weight = 1.0;

  bool operator==(const Edge&) const = default;
};

// Undirected weighted adjacency over areas 0..n-1, stored as sorted CSR rows.
// Immutable once built; the only way to get one is build_graph().
class SpatialGraph {
public:
  SpatialGraph() = default;

  std::size_t size() const noexcept { return weight_sum_.size(); }

  std::span<const std::size_t> neighbors(std::size_t i) const noexcept {
    return {neighbors_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
  }
  std::span<const double> weights(std::size_t i) const noexcept {
    return {weights_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
  }
  std::size_t degree(std::size_t i) const noexcept { return offsets_[i + 1] - offsets_[i]; }

  // w_{i+}
  double weight_sum(std::size_t i) const noexcept { return weight_sum_[i]; }
  bool is_island(std::size_t i) const noexcept { return degree(i) == 0; }
  std::size_t n_islands() const noexcept;

  // Weight of (i, j), 0 when not adjacent.
  double weight(std::size_t i, std::size_t j) const noexcept;

  std::size_t component(std::size_t i) const noexcept { return component_[i]; }
  std::size_t n_components() const noexcept { return members_.size(); }
  std::span<const std::size_t> component_members(std::size_t c) const noexcept {
    return members_[c];
  }
  std::span<const std::size_t> component_labels() const noexcept { return component_; }

  // Canonical edge list: src < dst, sorted lexicographically.
  std::vector<Edge> edges() const;
  std::size_t n_edges() const noexcept { return neighbors_.size() / 2; }

  // S0 = sum_i sum_j w_ij (each undirected edge counted twice).
  double total_weight() const noexcept;

  // Induced subgraph on areas with keep[i] true. Indices are compacted in
  // ascending order; old_index (if given) receives the original index of each
  // retained area.
  SpatialGraph subgraph(const std::vector<bool>& keep,
                        std::vector<std::size_t>* old_index = nullptr) const;

  bool operator==(const SpatialGraph&) const = default;

private:
  friend SpatialGraph build_graph(std::size_t, std::span<const Edge>);

  std::vector<std::size_t> offsets_{0};
  std::vector<std::size_t> neighbors_;
  std::vector<double> weights_;
  std::vector<double> weight_sum_;
  std::vector<std::size_t> component_;
  std::vector<std::vector<std::size_t>> members_;
};

// Builds a graph from an undirected edge list. Each edge may appear once in
// either orientation, or in both orientations with the same weight.
// Zero-weight edges are ignored. Throws ValidationError on out-of-range
// indices, self-loops, negative weights and conflicting duplicates.
SpatialGraph build_graph(std::size_t n_areas, std::span<const Edge> edges);

struct MoranResult {
  double statistic = 0.0;
  double expected = 0.0;  // -1/(n-1)
  double variance = 0.0;  // under the normality null
  double z_score = 0.0;
  double p_value = 1.0;   // two-sided
  std::size_t n = 0;      // areas used
};

// Global Moran's I. NaN entries of x are treated as missing and the graph is
// restricted to the observed areas. p-value from the analytic normal
// approximation.
MoranResult morans_i(const SpatialGraph& graph, std::span<const double> x);

// Same statistic, p-value from a seeded permutation test (two-sided on
// |I - E[I]|, with the usual +1 correction).
MoranResult morans_i_permutation(const SpatialGraph& graph, std::span<const double> x,
                                 std::size_t permutations = 999,
                                 std::uint64_t seed = 1);

}  // namespace areal
