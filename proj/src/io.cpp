#include "areal/io.hpp"

#include "areal/csv.hpp"
#include "areal/error.hpp"

#include <cmath>
#include <set>
#include <unordered_map>

namespace areal {

namespace {

std::vector<std::string> unique_ids(const CsvTable& t, std::size_t col) {
  std::vector<std::string> ids;
  std::set<std::string> seen;
  for (std::size_t r = 0; r < t.n_rows(); ++r) {
    const auto& id = t.cell(r, col);
    if (id.empty()) t.fail(r, col, "empty area id");
    if (!seen.insert(id).second) t.fail(r, col, "duplicate area id '" + id + "'");
    ids.push_back(id);
  }
  return ids;
}

double cell_or_nan(const CsvTable& t, std::size_t r, std::size_t c) {
  return t.optional_number(r, c).value_or(std::nan(""));
}

}  // namespace

std::string format_cell(double x) { return std::isnan(x) ? std::string() : format_double(x); }

std::string format_csv(const std::vector<std::string>& header,
                       const std::vector<std::vector<std::string>>& rows) {
  std::string out;
  auto line = [&](const std::vector<std::string>& fields) {
    for (std::size_t k = 0; k < fields.size(); ++k) {
      if (k > 0) out += ',';
      out += fields[k];
    }
    out += '\n';
  };
  line(header);
  for (const auto& r : rows) line(r);
  return out;
}

AreaTable read_areas(const std::filesystem::path& path) {
  const auto t = read_csv(path);
  const auto id = t.column("area_id");
  const auto name = t.find_column("name");
  const auto group = t.find_column("group");
  AreaTable a;
  a.ids = unique_ids(t, id);
  for (std::size_t r = 0; r < t.n_rows(); ++r) {
    a.names.push_back(name ? t.cell(r, *name) : a.ids[r]);
    a.groups.push_back(group ? t.cell(r, *group) : std::string());
  }
  return a;
}

std::string format_areas(const AreaTable& a) {
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < a.ids.size(); ++i) rows.push_back({a.ids[i], a.names[i], a.groups[i]});
  return format_csv({"area_id", "name", "group"}, rows);
}

SpatialGraph read_adjacency(const std::filesystem::path& path, std::size_t n_areas) {
  const auto t = read_csv(path);
  const auto src = t.column("src");
  const auto dst = t.column("dst");
  const auto weight = t.find_column("weight");
  std::vector<Edge> edges;
  for (std::size_t r = 0; r < t.n_rows(); ++r) {
    const auto a = t.integer(r, src);
    const auto b = t.integer(r, dst);
    if (a < 0 || static_cast<std::size_t>(a) >= n_areas)
      t.fail(r, src, "index " + std::to_string(a) + " outside [0, " + std::to_string(n_areas) + ")");
    if (b < 0 || static_cast<std::size_t>(b) >= n_areas)
      t.fail(r, dst, "index " + std::to_string(b) + " outside [0, " + std::to_string(n_areas) + ")");
    double w = 1.0;
    if (weight && !t.is_empty(r, *weight)) w = t.number(r, *weight);
    edges.push_back({static_cast<std::size_t>(a), static_cast<std::size_t>(b), w});
  }
  try {
    return build_graph(n_areas, edges);
  } catch (const ValidationError& e) {
    throw SchemaError(t.path, 0, 0, e.what());
  }
}

std::string format_adjacency(const SpatialGraph& g) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& e : g.edges())
    rows.push_back({std::to_string(e.src), std::to_string(e.dst), format_double(e.weight)});
  return format_csv({"src", "dst", "weight"}, rows);
}

IndicatorPanel read_indicators(const std::filesystem::path& path) {
  const auto t = read_csv(path);
  const auto id = t.column("area_id");
  std::vector<std::size_t> cols;
  std::vector<std::string> names;
  for (std::size_t c = 0; c < t.header.size(); ++c)
    if (c != id) {
      cols.push_back(c);
      names.push_back(t.header[c]);
    }
  if (cols.empty()) throw SchemaError(t.path, 1, 1, "no indicator columns");
  Eigen::MatrixXd values(static_cast<Eigen::Index>(t.n_rows()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t r = 0; r < t.n_rows(); ++r)
    for (std::size_t k = 0; k < cols.size(); ++k)
      values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = cell_or_nan(t, r, cols[k]);
  return IndicatorPanel::from_matrix(std::move(values), std::move(names), unique_ids(t, id));
}

std::string format_indicators(const IndicatorPanel& panel) {
  std::vector<std::string> header{"area_id"};
  header.insert(header.end(), panel.column_names.begin(), panel.column_names.end());
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < panel.n_areas(); ++i) {
    std::vector<std::string> row{panel.area_ids.empty() ? std::to_string(i) : panel.area_ids[i]};
    for (std::size_t p = 0; p < panel.n_indicators(); ++p)
      row.push_back(panel.observed(i, p)
                        ? format_double(panel.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(p)))
                        : std::string());
    rows.push_back(std::move(row));
  }
  return format_csv(header, rows);
}

CountsTable read_counts(const std::filesystem::path& path) {
  const auto t = read_csv(path);
  const auto id = t.column("area_id");
  const auto obs = t.column("observed");
  const auto exp = t.find_column("expected");
  CountsTable c;
  c.ids = unique_ids(t, id);
  for (std::size_t r = 0; r < t.n_rows(); ++r) {
    const double y = cell_or_nan(t, r, obs);
    if (!std::isnan(y) && (y < 0.0 || std::floor(y) != y))
      t.fail(r, obs, "count must be a nonnegative integer");
    c.observed.push_back(y);
    if (exp) {
      const double e = t.number(r, *exp);
      if (!(e >= 0.0) || !std::isfinite(e)) t.fail(r, *exp, "expected count must be finite and nonnegative");
      c.expected.push_back(e);
    }
  }
  return c;
}

std::string format_counts(const CountsTable& c) {
  std::vector<std::vector<std::string>> rows;
  const bool with_e = !c.expected.empty();
  for (std::size_t i = 0; i < c.ids.size(); ++i) {
    std::vector<std::string> row{c.ids[i], format_cell(c.observed[i])};
    if (with_e) row.push_back(format_double(c.expected[i]));
    rows.push_back(std::move(row));
  }
  return with_e ? format_csv({"area_id", "observed", "expected"}, rows)
                : format_csv({"area_id", "observed"}, rows);
}

CovariateTable read_covariates(const std::filesystem::path& path) {
  const auto t = read_csv(path);
  const auto id = t.column("area_id");
  t.column("ice");
  CovariateTable c;
  c.ids = unique_ids(t, id);
  std::vector<std::size_t> cols;
  for (std::size_t k = 0; k < t.header.size(); ++k)
    if (k != id) {
      cols.push_back(k);
      c.names.push_back(t.header[k]);
    }
  c.values.resize(static_cast<Eigen::Index>(t.n_rows()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t r = 0; r < t.n_rows(); ++r)
    for (std::size_t k = 0; k < cols.size(); ++k)
      c.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = cell_or_nan(t, r, cols[k]);
  return c;
}

std::string format_covariates(const CovariateTable& c) {
  std::vector<std::string> header{"area_id"};
  header.insert(header.end(), c.names.begin(), c.names.end());
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < c.ids.size(); ++i) {
    std::vector<std::string> row{c.ids[i]};
    for (Eigen::Index k = 0; k < c.values.cols(); ++k)
      row.push_back(format_cell(c.values(static_cast<Eigen::Index>(i), k)));
    rows.push_back(std::move(row));
  }
  return format_csv(header, rows);
}

IceInputs read_ice_inputs(const std::filesystem::path& path) {
  const auto t = read_csv(path);
  const auto id = t.column("area_id");
  const auto a = t.column("privileged");
  const auto p = t.column("deprived");
  const auto tot = t.column("total");
  IceInputs in;
  in.ids = unique_ids(t, id);
  for (std::size_t r = 0; r < t.n_rows(); ++r) {
    in.privileged.push_back(cell_or_nan(t, r, a));
    in.deprived.push_back(cell_or_nan(t, r, p));
    in.total.push_back(cell_or_nan(t, r, tot));
  }
  return in;
}

std::string format_ice_inputs(const IceInputs& in) {
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < in.ids.size(); ++i)
    rows.push_back({in.ids[i], format_cell(in.privileged[i]), format_cell(in.deprived[i]),
                    format_cell(in.total[i])});
  return format_csv({"area_id", "privileged", "deprived", "total"}, rows);
}

StrataTable read_strata(const std::filesystem::path& path) {
  const auto t = read_csv(path);
  const auto id = t.column("area_id");
  const auto st = t.column("stratum");
  const auto pop = t.column("population");
  const auto dcol = t.find_column("deaths");
  StrataTable s;
  std::unordered_map<std::string, std::size_t> area_index;
  std::unordered_map<std::string, std::size_t> stratum_index;
  for (std::size_t r = 0; r < t.n_rows(); ++r) {
    if (t.cell(r, id).empty()) t.fail(r, id, "empty area id");
    if (t.cell(r, st).empty()) t.fail(r, st, "empty stratum");
    if (area_index.emplace(t.cell(r, id), s.area_ids.size()).second) s.area_ids.push_back(t.cell(r, id));
    if (stratum_index.emplace(t.cell(r, st), s.strata.size()).second) s.strata.push_back(t.cell(r, st));
  }
  const auto n = static_cast<Eigen::Index>(s.area_ids.size());
  const auto k = static_cast<Eigen::Index>(s.strata.size());
  s.population = Eigen::MatrixXd::Zero(n, k);
  Eigen::MatrixXd deaths = Eigen::MatrixXd::Zero(n, k);
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> seen = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(n, k, false);
  for (std::size_t r = 0; r < t.n_rows(); ++r) {
    const auto i = static_cast<Eigen::Index>(area_index.at(t.cell(r, id)));
    const auto j = static_cast<Eigen::Index>(stratum_index.at(t.cell(r, st)));
    if (seen(i, j)) t.fail(r, st, "duplicate (area, stratum) row");
    seen(i, j) = true;
    const double p = t.number(r, pop);
    if (!(p >= 0.0) || !std::isfinite(p)) t.fail(r, pop, "population must be finite and nonnegative");
    s.population(i, j) = p;
    if (dcol) {
      const double d = cell_or_nan(t, r, *dcol);
      if (d < 0.0) t.fail(r, *dcol, "deaths must be nonnegative");
      deaths(i, j) = d;
    }
  }
  if (dcol) s.deaths = std::move(deaths);
  return s;
}

std::string format_strata(const StrataTable& s) {
  std::vector<std::vector<std::string>> rows;
  const bool with_d = s.deaths.has_value();
  for (std::size_t i = 0; i < s.area_ids.size(); ++i)
    for (std::size_t j = 0; j < s.strata.size(); ++j) {
      const auto ii = static_cast<Eigen::Index>(i);
      const auto jj = static_cast<Eigen::Index>(j);
      std::vector<std::string> row{s.area_ids[i], s.strata[j], format_double(s.population(ii, jj))};
      if (with_d) row.push_back(format_cell((*s.deaths)(ii, jj)));
      rows.push_back(std::move(row));
    }
  return with_d ? format_csv({"area_id", "stratum", "population", "deaths"}, rows)
                : format_csv({"area_id", "stratum", "population"}, rows);
}

Eigen::VectorXd read_rates(const std::filesystem::path& path, const std::vector<std::string>& strata) {
  const auto t = read_csv(path);
  const auto st = t.column("stratum");
  const auto rc = t.column("rate");
  std::unordered_map<std::string, double> by_name;
  for (std::size_t r = 0; r < t.n_rows(); ++r) {
    const double v = t.number(r, rc);
    if (!(v >= 0.0 && v <= 1.0)) t.fail(r, rc, "rate must lie in [0, 1]");
    if (!by_name.emplace(t.cell(r, st), v).second) t.fail(r, st, "duplicate stratum");
  }
  Eigen::VectorXd out(static_cast<Eigen::Index>(strata.size()));
  for (std::size_t j = 0; j < strata.size(); ++j) {
    const auto it = by_name.find(strata[j]);
    if (it == by_name.end()) throw SchemaError(t.path, 0, 0, "no rate for stratum '" + strata[j] + "'");
    out[static_cast<Eigen::Index>(j)] = it->second;
  }
  return out;
}

std::vector<std::size_t> align_ids(const std::vector<std::string>& reference,
                                   const std::string& reference_file,
                                   const std::vector<std::string>& other,
                                   const std::string& other_file) {
  if (reference.size() != other.size())
    throw ValidationError("dimension mismatch: " + reference_file + " has " +
                          std::to_string(reference.size()) + " areas but " + other_file + " has " +
                          std::to_string(other.size()));
  std::unordered_map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < other.size(); ++i) pos.emplace(other[i], i);
  std::vector<std::size_t> out;
  out.reserve(reference.size());
  for (const auto& id : reference) {
    const auto it = pos.find(id);
    if (it == pos.end())
      throw ValidationError("area '" + id + "' of " + reference_file + " is missing from " + other_file);
    out.push_back(it->second);
  }
  return out;
}

}  // namespace areal
