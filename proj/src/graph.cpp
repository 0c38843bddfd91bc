#include "areal/graph.hpp"

#include "areal/error.hpp"
#include "areal/random.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>

namespace areal {

namespace {

std::string edge_str(std::size_t i, std::size_t j) {
  return "(" + std::to_string(i) + ", " + std::to_string(j) + ")";
}

}  // namespace

SpatialGraph build_graph(std::size_t n_areas, std::span<const Edge> edges) {
  if (n_areas == 0) throw ValidationError("graph must have at least one area");

  std::map<std::pair<std::size_t, std::size_t>, double> canonical;
  for (const auto& e : edges) {
    if (e.src >= n_areas || e.dst >= n_areas)
      throw ValidationError("edge " + edge_str(e.src, e.dst) + " out of range for n = " +
                            std::to_string(n_areas));
    if (e.src == e.dst) throw ValidationError("self-loop at area " + std::to_string(e.src));
    if (!(e.weight >= 0.0) || !std::isfinite(e.weight))
      throw ValidationError("edge " + edge_str(e.src, e.dst) + " has invalid weight");
    if (e.weight == 0.0) continue;
    const auto key = std::minmax(e.src, e.dst);
    auto [it, inserted] = canonical.emplace(key, e.weight);
    if (!inserted && it->second != e.weight)
      throw ValidationError("edge " + edge_str(key.first, key.second) +
                            " listed with conflicting weights");
  }

  std::vector<std::vector<std::pair<std::size_t, double>>> rows(n_areas);
  for (const auto& [key, w] : canonical) {
    rows[key.first].emplace_back(key.second, w);
    rows[key.second].emplace_back(key.first, w);
  }

  SpatialGraph g;
  g.offsets_.assign(1, 0);
  g.weight_sum_.assign(n_areas, 0.0);
  for (std::size_t i = 0; i < n_areas; ++i) {
    auto& row = rows[i];
    std::sort(row.begin(), row.end());
    for (const auto& [j, w] : row) {
      g.neighbors_.push_back(j);
      g.weights_.push_back(w);
      g.weight_sum_[i] += w;
    }
    g.offsets_.push_back(g.neighbors_.size());
  }

  // Components by BFS in ascending seed order, so labels are canonical.
  constexpr auto unset = static_cast<std::size_t>(-1);
  g.component_.assign(n_areas, unset);
  for (std::size_t seed = 0; seed < n_areas; ++seed) {
    if (g.component_[seed] != unset) continue;
    const std::size_t label = g.members_.size();
    std::vector<std::size_t> members{seed};
    g.component_[seed] = label;
    for (std::size_t head = 0; head < members.size(); ++head) {
      for (std::size_t j : g.neighbors(members[head])) {
        if (g.component_[j] == unset) {
          g.component_[j] = label;
          members.push_back(j);
        }
      }
    }
    std::sort(members.begin(), members.end());
    g.members_.push_back(std::move(members));
  }
  return g;
}

std::size_t SpatialGraph::n_islands() const noexcept {
  std::size_t k = 0;
  for (std::size_t i = 0; i < size(); ++i) k += is_island(i) ? 1 : 0;
  return k;
}

double SpatialGraph::weight(std::size_t i, std::size_t j) const noexcept {
  const auto nb = neighbors(i);
  const auto it = std::lower_bound(nb.begin(), nb.end(), j);
  if (it == nb.end() || *it != j) return 0.0;
  return weights(i)[static_cast<std::size_t>(it - nb.begin())];
}

std::vector<Edge> SpatialGraph::edges() const {
  std::vector<Edge> out;
  out.reserve(n_edges());
  for (std::size_t i = 0; i < size(); ++i) {
    const auto nb = neighbors(i);
    const auto w = weights(i);
    for (std::size_t k = 0; k < nb.size(); ++k)
      if (nb[k] > i) out.push_back({i, nb[k], w[k]});
  }
  return out;
}

double SpatialGraph::total_weight() const noexcept {
  return std::accumulate(weight_sum_.begin(), weight_sum_.end(), 0.0);
}

SpatialGraph SpatialGraph::subgraph(const std::vector<bool>& keep,
                                    std::vector<std::size_t>* old_index) const {
  if (keep.size() != size()) throw ValidationError("subgraph mask has wrong length");
  std::vector<std::size_t> new_index(size(), static_cast<std::size_t>(-1));
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < size(); ++i) {
    if (keep[i]) {
      new_index[i] = kept.size();
      kept.push_back(i);
    }
  }
  if (kept.empty()) throw ValidationError("subgraph would be empty");
  std::vector<Edge> sub;
  for (const auto& e : edges())
    if (keep[e.src] && keep[e.dst]) sub.push_back({new_index[e.src], new_index[e.dst], e.weight});
  if (old_index) *old_index = kept;
  return build_graph(kept.size(), sub);
}

namespace {

struct MoranCore {
  SpatialGraph graph;
  std::vector<double> centered;
  double sum_sq = 0.0;
};

MoranCore prepare_moran(const SpatialGraph& graph, std::span<const double> x) {
  if (x.size() != graph.size())
    throw ValidationError("Moran's I: vector length does not match graph size");
  std::vector<bool> observed(x.size());
  bool any_missing = false;
  for (std::size_t i = 0; i < x.size(); ++i) {
    observed[i] = !std::isnan(x[i]);
    any_missing = any_missing || !observed[i];
  }
  MoranCore core;
  std::vector<double> values;
  if (any_missing) {
    std::vector<std::size_t> idx;
    core.graph = graph.subgraph(observed, &idx);
    for (std::size_t i : idx) values.push_back(x[i]);
  } else {
    core.graph = graph;
    values.assign(x.begin(), x.end());
  }
  const std::size_t n = values.size();
  if (n < 3) throw ValidationError("Moran's I needs at least 3 observed areas");
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(n);
  core.centered.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    core.centered[i] = values[i] - mean;
    core.sum_sq += core.centered[i] * core.centered[i];
  }
  if (!(core.sum_sq > 0.0)) throw NumericalError("Moran's I: x has zero variance");
  if (!(core.graph.total_weight() > 0.0))
    throw NumericalError("Moran's I: graph has no edges among observed areas (S0 = 0)");
  return core;
}

double moran_statistic(const SpatialGraph& g, std::span<const double> centered, double sum_sq) {
  double cross = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto nb = g.neighbors(i);
    const auto w = g.weights(i);
    double acc = 0.0;
    for (std::size_t k = 0; k < nb.size(); ++k) acc += w[k] * centered[nb[k]];
    cross += centered[i] * acc;
  }
  const double n = static_cast<double>(g.size());
  return n / g.total_weight() * cross / sum_sq;
}

void fill_normal_moments(const SpatialGraph& g, MoranResult& r) {
  const double n = static_cast<double>(g.size());
  const double s0 = g.total_weight();
  double s1 = 0.0;
  double s2 = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    for (double w : g.weights(i)) s1 += 2.0 * w * w;
    s2 += 4.0 * g.weight_sum(i) * g.weight_sum(i);
  }
  r.expected = -1.0 / (n - 1.0);
  r.variance = (n * n * s1 - n * s2 + 3.0 * s0 * s0) / ((n * n - 1.0) * s0 * s0) -
               r.expected * r.expected;
}

}  // namespace

MoranResult morans_i(const SpatialGraph& graph, std::span<const double> x) {
  const auto core = prepare_moran(graph, x);
  MoranResult r;
  r.n = core.graph.size();
  r.statistic = moran_statistic(core.graph, core.centered, core.sum_sq);
  fill_normal_moments(core.graph, r);
  r.z_score = (r.statistic - r.expected) / std::sqrt(r.variance);
  r.p_value = std::erfc(std::abs(r.z_score) / std::sqrt(2.0));
  return r;
}

MoranResult morans_i_permutation(const SpatialGraph& graph, std::span<const double> x,
                                 std::size_t permutations, std::uint64_t seed) {
  if (permutations == 0) throw ValidationError("permutation count must be positive");
  auto core = prepare_moran(graph, x);
  MoranResult r;
  r.n = core.graph.size();
  r.statistic = moran_statistic(core.graph, core.centered, core.sum_sq);
  fill_normal_moments(core.graph, r);
  r.z_score = (r.statistic - r.expected) / std::sqrt(r.variance);

  Rng rng(stream_seed(seed, 0));
  const double observed_dev = std::abs(r.statistic - r.expected);
  std::size_t extreme = 0;
  auto shuffled = core.centered;
  for (std::size_t k = 0; k < permutations; ++k) {
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const double stat = moran_statistic(core.graph, shuffled, core.sum_sq);
    if (std::abs(stat - r.expected) >= observed_dev) ++extreme;
  }
  r.p_value = static_cast<double>(extreme + 1) / static_cast<double>(permutations + 1);
  return r;
}

}  // namespace areal
