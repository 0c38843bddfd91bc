#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace areal {

enum class ImputeFlag : std::uint8_t { kObserved = 0, kGroup = 1, kGlobalFallback = 2 };

// N areas x P indicators. Cells with missing(i, p) set are unobserved and
// their entry in values is ignored by every consumer.
struct IndicatorPanel {
  std::vector<std::string> area_ids;
  std::vector<std::string> column_names;
  std::vector<int> directions;       // +1 / -1, carried but not applied
  std::vector<std::string> groups;   // per area; empty when unknown
  Eigen::MatrixXd values;
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> missing;
  Eigen::Array<ImputeFlag, Eigen::Dynamic, Eigen::Dynamic> imputed;

  IndicatorPanel() = default;
  // Missing cells are taken from NaN entries of values.
  static IndicatorPanel from_matrix(Eigen::MatrixXd values, std::vector<std::string> column_names = {},
                                    std::vector<std::string> area_ids = {});

  std::size_t n_areas() const noexcept { return static_cast<std::size_t>(values.rows()); }
  std::size_t n_indicators() const noexcept { return static_cast<std::size_t>(values.cols()); }
  bool observed(std::size_t i, std::size_t p) const {
    return !missing(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(p));
  }
  std::size_t observed_count(std::size_t p) const;
  void validate() const;
};

struct ColumnStats {
  std::size_t n = 0;
  double mean = 0.0;
  double sd = 0.0;  // n - 1 denominator
  double min = 0.0;
  double max = 0.0;
};

// Statistics over non-NaN entries.
ColumnStats describe(std::span<const double> x);

// z = (x - mean) / sd per column over observed cells, sd with n - 1.
IndicatorPanel standardize(const IndicatorPanel& raw);

enum class GroupStatistic { kMean, kMedian };

// Missing cell <- statistic of observed same-group values of its column, or
// the column's global statistic when the group has none. Observed cells are
// never touched.
IndicatorPanel impute_by_group(const IndicatorPanel& panel,
                               GroupStatistic statistic = GroupStatistic::kMean);

// ICE_i = (A_i - P_i) / T_i. NaN inputs give NaN. Throws ValidationError on
// T <= 0, negative counts or A + P > T.
std::vector<double> compute_ice(std::span<const double> privileged,
                                std::span<const double> deprived,
                                std::span<const double> total);

// Per-area, per-stratum populations with optional stratum deaths and optional
// external reference rates.
struct StrataTable {
  std::vector<std::string> area_ids;
  std::vector<std::string> strata;
  Eigen::MatrixXd population;             // N x S
  std::optional<Eigen::MatrixXd> deaths;  // N x S, for internally derived rates
  std::optional<Eigen::VectorXd> rates;   // S, external reference rates

  void validate() const;
};

struct ExpectedCounts {
  Eigen::VectorXd expected;
  Eigen::VectorXd rates;            // reference rate per stratum actually used
  std::vector<bool> zero_population;
};

// Pooled stratum rates sum_i deaths_is / sum_i pop_is over areas whose
// stratum deaths are all present.
Eigen::VectorXd derive_reference_rates(const Eigen::MatrixXd& population,
                                       const Eigen::MatrixXd& deaths);

// E_i = sum_s pop_is * rate_s. Rates come from strata.rates, else from
// strata.deaths, else from a single pooled rate sum(Y) / sum(pop) over areas
// with observed totals (observed_totals, NaN = suppressed).
ExpectedCounts expected_counts(const StrataTable& strata,
                               std::span<const double> observed_totals = {});

struct SmrResult {
  std::vector<double> ratio;    // NaN when suppressed or excluded
  std::vector<bool> excluded;   // E_i == 0
};

SmrResult smr(std::span<const double> observed, std::span<const double> expected);

}  // namespace areal
