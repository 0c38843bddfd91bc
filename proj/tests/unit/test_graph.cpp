#include "support.hpp"

#include "areal/error.hpp"
#include "areal/graph.hpp"
#include "areal/simulate.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace areal;
namespace ts = testing_support;

TEST_CASE("single edge on three areas leaves an island") {
  const std::vector<Edge> edges{{0, 1, 1.0}};
  const auto g = build_graph(3, edges);
  CHECK(g.is_island(2));
  CHECK_FALSE(g.is_island(0));
  CHECK(g.n_islands() == 1);
  CHECK(g.n_components() == 2);
  CHECK(g.component(0) == g.component(1));
  CHECK(g.component(2) != g.component(0));
  CHECK(g.weight(0, 2) == 0.0);
}

TEST_CASE("4-cycle has weight sums of two") {
  const std::vector<Edge> edges{{0, 1, 1.0}, {1, 2, 1.0}, {2, 3, 1.0}, {3, 0, 1.0}};
  const auto g = build_graph(4, edges);
  for (std::size_t i = 0; i < 4; ++i) CHECK(g.weight_sum(i) == 2.0);
  CHECK(g.total_weight() == 8.0);
}

TEST_CASE("15x15 rook lattice degrees") {
  const auto g = make_lattice(15, 15);
  CHECK(g.n_edges() == 420);
  CHECK(g.degree(0) == 2);
  CHECK(g.degree(14) == 2);
  CHECK(g.degree(224) == 2);
  CHECK(g.degree(7) == 3);
  CHECK(g.degree(15) == 3);
  CHECK(g.degree(16) == 4);
  CHECK(g.degree(112) == 4);
}

TEST_CASE("graph invariants hold on random weighted graphs") {
  Rng rng(7);
  for (int rep = 0; rep < 20; ++rep) {
    const auto g = ts::random_graph(12, 0.25, rng, true);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const auto nb = g.neighbors(i);
      CHECK(std::is_sorted(nb.begin(), nb.end()));
      for (std::size_t k = 0; k < nb.size(); ++k) {
        CHECK(nb[k] != i);
        CHECK(g.weight(nb[k], i) == g.weight(i, nb[k]));
        CHECK(g.component(nb[k]) == g.component(i));
      }
      const auto w = g.weights(i);
      CHECK(g.weight_sum(i) == doctest::Approx(std::accumulate(w.begin(), w.end(), 0.0)));
    }
    std::size_t members = 0;
    for (std::size_t c = 0; c < g.n_components(); ++c) members += g.component_members(c).size();
    CHECK(members == g.size());
  }
}

TEST_CASE("build_graph rejects bad input") {
  SUBCASE("self-loop") {
    const std::vector<Edge> e{{1, 1, 1.0}};
    CHECK_THROWS_AS(build_graph(3, e), ValidationError);
  }
  SUBCASE("conflicting duplicate") {
    const std::vector<Edge> e{{0, 1, 1.0}, {1, 0, 2.0}};
    CHECK_THROWS_AS(build_graph(3, e), ValidationError);
  }
  SUBCASE("out of range") {
    const std::vector<Edge> e{{0, 3, 1.0}};
    CHECK_THROWS_AS(build_graph(3, e), ValidationError);
  }
  SUBCASE("negative weight") {
    const std::vector<Edge> e{{0, 1, -1.0}};
    CHECK_THROWS_AS(build_graph(3, e), ValidationError);
  }
  SUBCASE("consistent duplicate is accepted") {
    const std::vector<Edge> e{{0, 1, 1.5}, {1, 0, 1.5}};
    CHECK(build_graph(3, e).n_edges() == 1);
  }
}

TEST_CASE("shuffled edge lists give identical graphs") {
  Rng rng(11);
  const auto g = ts::random_graph(20, 0.2, rng, true);
  auto edges = g.edges();
  for (int rep = 0; rep < 5; ++rep) {
    std::shuffle(edges.begin(), edges.end(), rng);
    auto flipped = edges;
    for (auto& e : flipped)
      if (draw_uniform(rng) < 0.5) std::swap(e.src, e.dst);
    CHECK(build_graph(20, flipped) == g);
  }
}

TEST_CASE("subgraph compacts indices") {
  const auto g = make_lattice(3, 3);
  std::vector<bool> keep(9, true);
  keep[4] = false;
  std::vector<std::size_t> old;
  const auto s = g.subgraph(keep, &old);
  CHECK(s.size() == 8);
  CHECK(s.n_edges() == 8);
  CHECK(old[4] == 5);
}

TEST_CASE("Moran's I of a spike on a line matches the dense oracle") {
  std::vector<Edge> edges;
  for (std::size_t i = 0; i + 1 < 9; ++i) edges.push_back({i, i + 1, 1.0});
  const auto g = build_graph(9, edges);
  std::vector<double> x(9, 2.0);
  x[3] = 7.0;
  const auto r = morans_i(g, x);
  CHECK(std::abs(r.statistic - ts::dense_moran(ts::dense_w(g), x)) < 1e-12);
}

TEST_CASE("checkerboard is negatively autocorrelated") {
  const auto g = make_lattice(6, 6);
  std::vector<double> x(36);
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 6; ++c) x[r * 6 + c] = ((r + c) % 2 == 0) ? 1.0 : -1.0;
  const auto m = morans_i(g, x);
  CHECK(m.statistic == doctest::Approx(-1.0));
  CHECK(m.z_score < 0.0);
}

TEST_CASE("row-index gradient on 15x15 is strongly autocorrelated") {
  const auto g = make_lattice(15, 15);
  std::vector<double> x(225);
  for (std::size_t i = 0; i < 225; ++i) x[i] = static_cast<double>(i / 15);
  const auto m = morans_i(g, x);
  CHECK(m.statistic > 0.6);
  CHECK(m.p_value < 0.001);
}

TEST_CASE("Moran's I null moments follow the normality formulas") {
  Rng rng(3);
  const auto g = ts::random_graph(15, 0.3, rng, true);
  std::vector<double> x(15);
  for (auto& v : x) v = draw_normal(rng);
  const auto m = morans_i(g, x);
  const Eigen::MatrixXd w = ts::dense_w(g);
  const double n = 15.0;
  const double s0 = w.sum();
  const double s1 = 0.5 * (w + w.transpose()).array().square().sum();
  const double s2 = (w.rowwise().sum() + w.colwise().sum().transpose()).array().square().sum();
  const double e = -1.0 / (n - 1.0);
  const double var = (n * n * s1 - n * s2 + 3.0 * s0 * s0) / ((n * n - 1.0) * s0 * s0) - e * e;
  CHECK(m.expected == doctest::Approx(e));
  CHECK(m.variance == doctest::Approx(var).epsilon(1e-12));
  CHECK(m.z_score == doctest::Approx((m.statistic - e) / std::sqrt(var)));
  CHECK(m.p_value == doctest::Approx(std::erfc(std::abs(m.z_score) / std::sqrt(2.0))));
}

TEST_CASE("Moran's I invariances") {
  Rng rng(5);
  const auto g = ts::random_graph(25, 0.15, rng);
  std::vector<double> x(25);
  for (auto& v : x) v = draw_normal(rng);
  const double base = morans_i(g, x).statistic;

  auto y = x;
  for (auto& v : y) v = -3.5 * v + 12.0;
  CHECK(std::abs(morans_i(g, y).statistic - base) < 1e-10);

  std::vector<std::size_t> perm(25);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<Edge> edges;
  for (const auto& e : g.edges()) edges.push_back({perm[e.src], perm[e.dst], e.weight});
  const auto gp = build_graph(25, edges);
  std::vector<double> xp(25);
  for (std::size_t i = 0; i < 25; ++i) xp[perm[i]] = x[i];
  CHECK(std::abs(morans_i(gp, xp).statistic - base) < 1e-12);
}

TEST_CASE("Moran's I restricts the graph to observed areas") {
  const auto g = make_lattice(4, 4);
  std::vector<double> x(16);
  for (std::size_t i = 0; i < 16; ++i) x[i] = static_cast<double>(i % 4) + 0.1 * static_cast<double>(i);
  x[5] = std::nan("");
  std::vector<bool> keep(16, true);
  keep[5] = false;
  const auto sub = g.subgraph(keep);
  std::vector<double> xs;
  for (std::size_t i = 0; i < 16; ++i)
    if (keep[i]) xs.push_back(x[i]);
  const auto m = morans_i(g, x);
  CHECK(m.n == 15);
  CHECK(std::abs(m.statistic - ts::dense_moran(ts::dense_w(sub), xs)) < 1e-12);
}

TEST_CASE("Moran's I errors") {
  const auto g = make_lattice(3, 3);
  CHECK_THROWS_AS(morans_i(g, std::vector<double>(9, 1.0)), NumericalError);
  const auto empty = build_graph(4, std::vector<Edge>{});
  CHECK_THROWS_AS(morans_i(empty, std::vector<double>{1, 2, 3, 4}), NumericalError);
}

TEST_CASE("permutation p-value is seeded and agrees with the analytic one in direction") {
  const auto g = make_lattice(8, 8);
  std::vector<double> x(64);
  for (std::size_t i = 0; i < 64; ++i) x[i] = static_cast<double>(i / 8);
  const auto a = morans_i_permutation(g, x, 199, 4);
  const auto b = morans_i_permutation(g, x, 199, 4);
  CHECK(a.p_value == b.p_value);
  CHECK(a.p_value == doctest::Approx(1.0 / 200.0));
  CHECK(a.statistic == morans_i(g, x).statistic);
}
