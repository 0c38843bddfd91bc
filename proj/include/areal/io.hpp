#pragma once

#include "areal/graph.hpp"
#include "areal/pipeline.hpp"

#include <Eigen/Core>

#include <filesystem>
#include <string>
#include <vector>

namespace areal {

// area_id,name,group
struct AreaTable {
  std::vector<std::string> ids;
  std::vector<std::string> names;
  std::vector<std::string> groups;
};

AreaTable read_areas(const std::filesystem::path& path);
std::string format_areas(const AreaTable& areas);

// src,dst[,weight]; 0-based indices, each undirected edge listed once.
SpatialGraph read_adjacency(const std::filesystem::path& path, std::size_t n_areas);
std::string format_adjacency(const SpatialGraph& graph);

// area_id followed by one column per indicator; empty cell = missing.
IndicatorPanel read_indicators(const std::filesystem::path& path);
std::string format_indicators(const IndicatorPanel& panel);

// area_id,observed[,expected]; empty observed = suppressed.
struct CountsTable {
  std::vector<std::string> ids;
  std::vector<double> observed;
  std::vector<double> expected;  // empty when the file has no expected column
};

CountsTable read_counts(const std::filesystem::path& path);
std::string format_counts(const CountsTable& counts);

// area_id,ice,factor1..factorM
struct CovariateTable {
  std::vector<std::string> ids;
  std::vector<std::string> names;
  Eigen::MatrixXd values;
};

CovariateTable read_covariates(const std::filesystem::path& path);
std::string format_covariates(const CovariateTable& table);

// area_id,privileged,deprived,total
struct IceInputs {
  std::vector<std::string> ids;
  std::vector<double> privileged;
  std::vector<double> deprived;
  std::vector<double> total;
};

IceInputs read_ice_inputs(const std::filesystem::path& path);
std::string format_ice_inputs(const IceInputs& inputs);

// Long format area_id,stratum,population[,deaths]. Areas and strata keep
// their order of first appearance; missing (area, stratum) cells are zero.
StrataTable read_strata(const std::filesystem::path& path);
std::string format_strata(const StrataTable& strata);

// stratum,rate, returned in the order of `strata`.
Eigen::VectorXd read_rates(const std::filesystem::path& path, const std::vector<std::string>& strata);

// For every id in `reference`, the row holding it in `other`. Throws
// ValidationError naming both files when the id sets differ.
std::vector<std::size_t> align_ids(const std::vector<std::string>& reference,
                                   const std::string& reference_file,
                                   const std::vector<std::string>& other,
                                   const std::string& other_file);

// Rows of `table` joined by newlines, comma separated, with header.
std::string format_csv(const std::vector<std::string>& header,
                       const std::vector<std::vector<std::string>>& rows);

// format_double, with NaN written as an empty cell.
std::string format_cell(double x);

}  // namespace areal
