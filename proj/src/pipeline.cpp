#include "areal/pipeline.hpp"

#include "areal/error.hpp"
#include "areal/mcmc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace areal {

IndicatorPanel IndicatorPanel::from_matrix(Eigen::MatrixXd values,
                                           std::vector<std::string> column_names,
                                           std::vector<std::string> area_ids) {
  IndicatorPanel p;
  const auto n = values.rows();
  const auto cols = values.cols();
  p.missing = values.array().isNaN();
  p.values = std::move(values);
  p.imputed.setConstant(n, cols, ImputeFlag::kObserved);
  if (column_names.empty())
    for (Eigen::Index c = 0; c < cols; ++c) column_names.push_back("v" + std::to_string(c + 1));
  if (area_ids.empty())
    for (Eigen::Index i = 0; i < n; ++i) area_ids.push_back(std::to_string(i));
  p.column_names = std::move(column_names);
  p.area_ids = std::move(area_ids);
  p.directions.assign(static_cast<std::size_t>(cols), 1);
  p.validate();
  return p;
}

std::size_t IndicatorPanel::observed_count(std::size_t p) const {
  return static_cast<std::size_t>((!missing.col(static_cast<Eigen::Index>(p))).count());
}

void IndicatorPanel::validate() const {
  const auto n = values.rows();
  const auto cols = values.cols();
  if (missing.rows() != n || missing.cols() != cols)
    throw ValidationError("panel missing mask has wrong shape");
  if (imputed.rows() != n || imputed.cols() != cols)
    throw ValidationError("panel imputation flags have wrong shape");
  if (column_names.size() != static_cast<std::size_t>(cols))
    throw ValidationError("panel column names do not match column count");
  if (area_ids.size() != static_cast<std::size_t>(n))
    throw ValidationError("panel area ids do not match row count");
  if (!groups.empty() && groups.size() != static_cast<std::size_t>(n))
    throw ValidationError("panel group labels do not match row count");
}

ColumnStats describe(std::span<const double> x) {
  ColumnStats s;
  double sum = 0.0;
  s.min = std::numeric_limits<double>::infinity();
  s.max = -std::numeric_limits<double>::infinity();
  for (double v : x) {
    if (std::isnan(v)) continue;
    ++s.n;
    sum += v;
    s.min = std::min(s.min, v);
    s.max = std::max(s.max, v);
  }
  if (s.n == 0) return {0, std::nan(""), std::nan(""), std::nan(""), std::nan("")};
  s.mean = sum / static_cast<double>(s.n);
  double ss = 0.0;
  for (double v : x)
    if (!std::isnan(v)) ss += (v - s.mean) * (v - s.mean);
  s.sd = s.n > 1 ? std::sqrt(ss / static_cast<double>(s.n - 1)) : 0.0;
  return s;
}

IndicatorPanel standardize(const IndicatorPanel& raw) {
  raw.validate();
  IndicatorPanel out = raw;
  for (Eigen::Index p = 0; p < raw.values.cols(); ++p) {
    std::vector<double> obs;
    for (Eigen::Index i = 0; i < raw.values.rows(); ++i)
      if (!raw.missing(i, p)) obs.push_back(raw.values(i, p));
    const auto& name = raw.column_names[static_cast<std::size_t>(p)];
    if (obs.size() < 2)
      throw NumericalError("column '" + name + "' has fewer than 2 observed values");
    const auto stats = describe(obs);
    if (!(stats.sd > 0.0)) throw NumericalError("column '" + name + "' has zero standard deviation");
    for (Eigen::Index i = 0; i < raw.values.rows(); ++i)
      if (!raw.missing(i, p)) out.values(i, p) = (raw.values(i, p) - stats.mean) / stats.sd;
  }
  return out;
}

namespace {

double statistic_of(std::vector<double> v, GroupStatistic stat) {
  if (stat == GroupStatistic::kMedian) return quantile(std::move(v), 0.5);
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

IndicatorPanel impute_by_group(const IndicatorPanel& panel, GroupStatistic statistic) {
  panel.validate();
  IndicatorPanel out = panel;
  const auto n = panel.values.rows();
  std::vector<std::string> groups = panel.groups;
  if (groups.empty()) groups.assign(static_cast<std::size_t>(n), "");

  for (Eigen::Index p = 0; p < panel.values.cols(); ++p) {
    std::map<std::string, std::vector<double>> by_group;
    std::vector<double> all;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (panel.missing(i, p)) continue;
      by_group[groups[static_cast<std::size_t>(i)]].push_back(panel.values(i, p));
      all.push_back(panel.values(i, p));
    }
    if (all.empty() && panel.missing.col(p).any())
      throw NumericalError("column '" + panel.column_names[static_cast<std::size_t>(p)] +
                           "' has no observed values to impute from");
    std::map<std::string, double> group_value;
    for (auto& [g, vals] : by_group) group_value[g] = statistic_of(vals, statistic);
    const double global = all.empty() ? 0.0 : statistic_of(all, statistic);

    for (Eigen::Index i = 0; i < n; ++i) {
      if (!panel.missing(i, p)) continue;
      const auto it = group_value.find(groups[static_cast<std::size_t>(i)]);
      if (it != group_value.end()) {
        out.values(i, p) = it->second;
        out.imputed(i, p) = ImputeFlag::kGroup;
      } else {
        out.values(i, p) = global;
        out.imputed(i, p) = ImputeFlag::kGlobalFallback;
      }
      out.missing(i, p) = false;
    }
  }
  return out;
}

std::vector<double> compute_ice(std::span<const double> privileged,
                                std::span<const double> deprived,
                                std::span<const double> total) {
  if (privileged.size() != total.size() || deprived.size() != total.size())
    throw ValidationError("ICE inputs must have equal length");
  std::vector<double> ice(total.size());
  for (std::size_t i = 0; i < total.size(); ++i) {
    const double a = privileged[i];
    const double p = deprived[i];
    const double t = total[i];
    if (std::isnan(a) || std::isnan(p) || std::isnan(t)) {
      ice[i] = std::nan("");
      continue;
    }
    const auto where = " at area " + std::to_string(i);
    if (!(t > 0.0)) throw ValidationError("ICE total population must be positive" + where);
    if (a < 0.0 || p < 0.0) throw ValidationError("ICE group counts must be nonnegative" + where);
    if (a + p > t) throw ValidationError("ICE group counts exceed total" + where);
    ice[i] = std::clamp((a - p) / t, -1.0, 1.0);
  }
  return ice;
}

void StrataTable::validate() const {
  const auto n = population.rows();
  const auto s = population.cols();
  if (area_ids.size() != static_cast<std::size_t>(n) || strata.size() != static_cast<std::size_t>(s))
    throw ValidationError("strata table labels do not match population matrix");
  if ((population.array() < 0.0).any() || population.array().isNaN().any())
    throw ValidationError("stratum populations must be nonnegative");
  if (deaths) {
    if (deaths->rows() != n || deaths->cols() != s)
      throw ValidationError("stratum deaths matrix has wrong shape");
    if ((deaths->array() < 0.0).any()) throw ValidationError("stratum deaths must be nonnegative");
  }
  if (rates) {
    if (rates->size() != s) throw ValidationError("reference rates have wrong length");
    if ((rates->array() < 0.0).any() || (rates->array() > 1.0).any())
      throw ValidationError("reference rates must lie in [0, 1]");
  }
}

Eigen::VectorXd derive_reference_rates(const Eigen::MatrixXd& population,
                                       const Eigen::MatrixXd& deaths) {
  // Areas with any missing stratum death count (suppressed) are left out of
  // both numerator and denominator.
  Eigen::VectorXd pop = Eigen::VectorXd::Zero(population.cols());
  Eigen::VectorXd d = Eigen::VectorXd::Zero(population.cols());
  for (Eigen::Index i = 0; i < population.rows(); ++i) {
    if (deaths.row(i).array().isNaN().any()) continue;
    pop += population.row(i).transpose();
    d += deaths.row(i).transpose();
  }
  Eigen::VectorXd rates(pop.size());
  for (Eigen::Index s = 0; s < pop.size(); ++s) rates[s] = pop[s] > 0.0 ? d[s] / pop[s] : 0.0;
  return rates;
}

ExpectedCounts expected_counts(const StrataTable& strata, std::span<const double> observed_totals) {
  strata.validate();
  ExpectedCounts out;
  const auto n = strata.population.rows();
  if (strata.rates) {
    out.rates = *strata.rates;
  } else if (strata.deaths) {
    out.rates = derive_reference_rates(strata.population, *strata.deaths);
  } else {
    if (observed_totals.size() != static_cast<std::size_t>(n))
      throw ValidationError("expected counts need reference rates, stratum deaths or observed totals");
    double y = 0.0;
    double pop = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double yi = observed_totals[static_cast<std::size_t>(i)];
      if (std::isnan(yi)) continue;
      y += yi;
      pop += strata.population.row(i).sum();
    }
    if (!(pop > 0.0)) throw ValidationError("no population in areas with observed totals");
    out.rates = Eigen::VectorXd::Constant(strata.population.cols(), y / pop);
  }
  out.expected = strata.population * out.rates;
  out.zero_population.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i)
    out.zero_population[static_cast<std::size_t>(i)] = !(strata.population.row(i).sum() > 0.0);
  return out;
}

SmrResult smr(std::span<const double> observed, std::span<const double> expected) {
  if (observed.size() != expected.size()) throw ValidationError("SMR inputs must have equal length");
  SmrResult r;
  r.ratio.resize(observed.size());
  r.excluded.resize(observed.size());
  for (std::size_t i = 0; i < observed.size(); ++i) {
    r.excluded[i] = !(expected[i] > 0.0);
    r.ratio[i] = (r.excluded[i] || std::isnan(observed[i])) ? std::nan("") : observed[i] / expected[i];
  }
  return r;
}

}  // namespace areal
