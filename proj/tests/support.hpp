#pragma once

// Independent reference computations shared by the unit and acceptance tests.
// Everything here is written from the textbook definitions with dense loops so
// it shares no code with the library beyond graph construction.

#include "areal/graph.hpp"
#include "areal/random.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

namespace testing_support {

inline std::filesystem::path temp_dir(const std::string& name) {
  const char* root = std::getenv("AREAL_TEST_TMP");
  std::filesystem::path base = root ? root : std::filesystem::temp_directory_path() / "areal_tests";
  auto dir = base / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

// Erdos-Renyi graph with optional random weights in [0.5, 2].
inline areal::SpatialGraph random_graph(std::size_t n, double p, areal::Rng& rng,
                                        bool weighted = false) {
  std::vector<areal::Edge> edges;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (areal::draw_uniform(rng) < p)
        edges.push_back({i, j, weighted ? 0.5 + 1.5 * areal::draw_uniform(rng) : 1.0});
  return areal::build_graph(n, edges);
}

inline Eigen::MatrixXd dense_w(const areal::SpatialGraph& g) {
  const auto n = static_cast<Eigen::Index>(g.size());
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
  for (const auto& e : g.edges()) {
    w(static_cast<Eigen::Index>(e.src), static_cast<Eigen::Index>(e.dst)) = e.weight;
    w(static_cast<Eigen::Index>(e.dst), static_cast<Eigen::Index>(e.src)) = e.weight;
  }
  return w;
}

// Q = diag(w_i+) - W
inline Eigen::MatrixXd dense_q(const areal::SpatialGraph& g) {
  const Eigen::MatrixXd w = dense_w(g);
  Eigen::MatrixXd q = -w;
  for (Eigen::Index i = 0; i < w.rows(); ++i) q(i, i) = w.row(i).sum();
  return q;
}

inline double quadratic_form_logdensity(const areal::SpatialGraph& g, const Eigen::VectorXd& x,
                                        double variance) {
  const Eigen::MatrixXd q = dense_q(g);
  const double n = static_cast<double>(g.size());
  return -0.5 * n * std::log(variance) - 0.5 * x.dot(q * x) / variance;
}

inline double dense_moran(const Eigen::MatrixXd& w, const std::vector<double>& x) {
  const std::size_t n = x.size();
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);
  double num = 0.0, s0 = 0.0, den = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    den += (x[i] - mean) * (x[i] - mean);
    for (std::size_t j = 0; j < n; ++j) {
      const double wij = w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      num += wij * (x[i] - mean) * (x[j] - mean);
      s0 += wij;
    }
  }
  return static_cast<double>(n) / s0 * num / den;
}

inline double mean_of(const std::vector<double>& x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

inline double variance_of(const std::vector<double>& x) {
  const double m = mean_of(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size() - 1);
}

// Monte Carlo standard error of the mean from non-overlapping batch means.
inline double batch_se(const std::vector<double>& x, std::size_t n_batches = 50) {
  const std::size_t b = x.size() / n_batches;
  std::vector<double> means;
  for (std::size_t k = 0; k < n_batches; ++k) {
    double s = 0.0;
    for (std::size_t t = k * b; t < (k + 1) * b; ++t) s += x[t];
    means.push_back(s / static_cast<double>(b));
  }
  return std::sqrt(variance_of(means) / static_cast<double>(n_batches));
}

inline double correlation(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const Eigen::VectorXd ca = a.array() - a.mean();
  const Eigen::VectorXd cb = b.array() - b.mean();
  return ca.dot(cb) / std::sqrt(ca.squaredNorm() * cb.squaredNorm());
}

// Normalized CDF of an unnormalized log density tabulated by the trapezoid
// rule on a uniform grid over [lo, hi].
class GridCdf {
public:
  GridCdf(const std::function<double(double)>& log_density, double lo, double hi,
          std::size_t points = 200001)
      : lo_(lo), step_((hi - lo) / static_cast<double>(points - 1)), cdf_(points, 0.0) {
    std::vector<double> logd(points);
    double peak = -INFINITY;
    for (std::size_t k = 0; k < points; ++k) {
      logd[k] = log_density(lo + step_ * static_cast<double>(k));
      peak = std::max(peak, logd[k]);
    }
    for (std::size_t k = 1; k < points; ++k)
      cdf_[k] = cdf_[k - 1] + 0.5 * step_ * (std::exp(logd[k - 1] - peak) + std::exp(logd[k] - peak));
    for (auto& c : cdf_) c /= cdf_.back();
  }

  double operator()(double x) const {
    const double pos = (x - lo_) / step_;
    if (pos <= 0.0) return 0.0;
    const auto k = static_cast<std::size_t>(pos);
    if (k + 1 >= cdf_.size()) return 1.0;
    const double f = pos - static_cast<double>(k);
    return cdf_[k] * (1.0 - f) + cdf_[k + 1] * f;
  }

private:
  double lo_;
  double step_;
  std::vector<double> cdf_;
};

inline double ks_statistic(std::vector<double> draws, const std::function<double(double)>& cdf) {
  std::sort(draws.begin(), draws.end());
  const double n = static_cast<double>(draws.size());
  double d = 0.0;
  for (std::size_t k = 0; k < draws.size(); ++k) {
    const double f = cdf(draws[k]);
    d = std::max({d, static_cast<double>(k + 1) / n - f, f - static_cast<double>(k) / n});
  }
  return d;
}

}  // namespace testing_support
