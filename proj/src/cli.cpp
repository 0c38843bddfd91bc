#include "areal/cli.hpp"

#include "areal/csv.hpp"
#include "areal/error.hpp"
#include "areal/graph.hpp"
#include "areal/io.hpp"
#include "areal/laplace.hpp"
#include "areal/mcmc.hpp"
#include "areal/pipeline.hpp"
#include "areal/simulate.hpp"
#include "areal/stage1.hpp"
#include "areal/stage2.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

namespace areal {

namespace fs = std::filesystem;

namespace {

using Eigen::Index;

Index ix(std::size_t i) { return static_cast<Index>(i); }

struct ChainFlags {
  std::size_t iters = 100000;
  std::size_t burnin = 40000;
  std::size_t thin = 50;
  std::size_t chains = 2;
  std::uint64_t seed = 1;
  std::size_t threads = 1;

  void add(CLI::App* app) {
    app->add_option("--iters", iters, "Iterations per chain")->capture_default_str();
    app->add_option("--burnin", burnin, "Burn-in iterations")->capture_default_str();
    app->add_option("--thin", thin, "Thinning interval")->capture_default_str();
    app->add_option("--chains", chains, "Number of chains")->capture_default_str();
    app->add_option("--seed", seed, "Root random seed")->capture_default_str();
    app->add_option("--threads", threads, "Worker threads")->capture_default_str();
  }

  McmcConfig config() const {
    McmcConfig c;
    c.n_iter = iters;
    c.burn_in = burnin;
    c.thin = thin;
    c.n_chains = chains;
    c.seed = seed;
    c.threads = threads;
    return c;
  }
};

std::string join(const std::vector<std::string>& parts, char sep = ';') {
  std::string out;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    if (k > 0) out += sep;
    out += parts[k];
  }
  return out;
}

std::vector<std::string> split(const std::string& text, char sep = ';') {
  std::vector<std::string> out;
  if (text.empty()) return out;
  std::string cur;
  std::istringstream in(text);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  return out;
}

std::vector<double> parse_list(const std::string& text, const std::string& what) {
  std::vector<double> out;
  for (const auto& part : split(text, ',')) {
    const auto t = parse_csv("v\n" + part + "\n", what);
    out.push_back(t.number(0, 0));
  }
  return out;
}

fs::path ensure_dir(const std::string& dir) {
  fs::create_directories(dir);
  return fs::path(dir);
}

void write_text(const fs::path& path, const std::string& text) { write_file_atomic(path, text); }

std::string fixed(double x, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

// Reorders a panel's rows to follow `order` (row k <- old row order[k]).
IndicatorPanel reorder_panel(const IndicatorPanel& p, const std::vector<std::size_t>& order) {
  IndicatorPanel out = p;
  for (std::size_t k = 0; k < order.size(); ++k) {
    out.values.row(ix(k)) = p.values.row(ix(order[k]));
    out.missing.row(ix(k)) = p.missing.row(ix(order[k]));
    out.imputed.row(ix(k)) = p.imputed.row(ix(order[k]));
    out.area_ids[k] = p.area_ids[order[k]];
  }
  return out;
}

struct AreaContext {
  AreaTable areas;
  SpatialGraph graph;
};

AreaContext load_areas(const std::string& areas_path, const std::string& adjacency_path) {
  AreaContext ctx;
  ctx.areas = read_areas(areas_path);
  ctx.graph = read_adjacency(adjacency_path, ctx.areas.ids.size());
  return ctx;
}

IndicatorPanel load_indicators(const std::string& path, const AreaContext& ctx,
                               const std::string& areas_path) {
  auto panel = read_indicators(path);
  panel = reorder_panel(panel, align_ids(ctx.areas.ids, areas_path, panel.area_ids, path));
  panel.groups = ctx.areas.groups;
  return panel;
}

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
  std::string out;
  DatasetConfig cfg;
};

void run_simulate(const SimulateArgs& a, std::ostream& out) {
  const auto dir = ensure_dir(a.out);
  const auto d = simulate_dataset(a.cfg);
  const auto n = d.graph.size();

  write_text(dir / "adjacency.csv", format_adjacency(d.graph));
  write_text(dir / "areas.csv", format_areas({d.area_ids, d.names, d.groups}));

  IndicatorPanel raw = IndicatorPanel::from_matrix(d.indicators, d.indicator_names, d.area_ids);
  write_text(dir / "indicators_raw.csv", format_indicators(raw));

  IceInputs ice;
  ice.ids = d.area_ids;
  for (std::size_t i = 0; i < n; ++i) {
    ice.privileged.push_back(d.privileged[ix(i)]);
    ice.deprived.push_back(d.deprived[ix(i)]);
    ice.total.push_back(d.total[ix(i)]);
  }
  write_text(dir / "ice_raw.csv", format_ice_inputs(ice));

  StrataTable strata;
  strata.area_ids = d.area_ids;
  strata.strata = d.strata;
  strata.population = d.population;
  strata.deaths = d.deaths;
  write_text(dir / "strata.csv", format_strata(strata));

  write_text(dir / "observed.csv", format_counts({d.area_ids, d.observed, {}}));

  std::vector<std::vector<std::string>> truth;
  for (std::size_t i = 0; i < n; ++i)
    truth.push_back({d.area_ids[i], format_double(d.true_eta[ix(i)]), format_double(d.true_delta[ix(i)])});
  write_text(dir / "truth.csv", format_csv({"area_id", "eta", "delta"}, truth));

  out << "simulated " << n << " areas (" << a.cfg.rows << "x" << a.cfg.cols << " lattice) into "
      << dir.string() << "\n";
}

// -------------------------------------------------------------------- prep

struct PrepArgs {
  std::string areas, adjacency, indicators, ice, strata, observed, rates, out;
  std::string group_statistic = "mean";
};

void run_prep(const PrepArgs& a, std::ostream& out) {
  const auto dir = ensure_dir(a.out);
  const auto areas = read_areas(a.areas);
  const auto n = areas.ids.size();

  auto panel = read_indicators(a.indicators);
  panel = reorder_panel(panel, align_ids(areas.ids, a.areas, panel.area_ids, a.indicators));
  panel.groups = areas.groups;
  GroupStatistic stat = GroupStatistic::kMean;
  if (a.group_statistic == "median") stat = GroupStatistic::kMedian;
  else if (a.group_statistic != "mean")
    throw ValidationError("group statistic must be 'mean' or 'median'");
  const auto z = impute_by_group(standardize(panel), stat);
  write_text(dir / "indicators.csv", format_indicators(z));
  std::size_t imputed = 0;
  std::size_t fallback = 0;
  for (Index i = 0; i < z.imputed.rows(); ++i)
    for (Index p = 0; p < z.imputed.cols(); ++p) {
      imputed += z.imputed(i, p) != ImputeFlag::kObserved;
      fallback += z.imputed(i, p) == ImputeFlag::kGlobalFallback;
    }

  const auto ice_in = read_ice_inputs(a.ice);
  const auto ice_order = align_ids(areas.ids, a.areas, ice_in.ids, a.ice);
  std::vector<double> pa(n), pd(n), pt(n);
  for (std::size_t i = 0; i < n; ++i) {
    pa[i] = ice_in.privileged[ice_order[i]];
    pd[i] = ice_in.deprived[ice_order[i]];
    pt[i] = ice_in.total[ice_order[i]];
  }
  const auto ice = compute_ice(pa, pd, pt);
  CovariateTable cov;
  cov.ids = areas.ids;
  cov.names = {"ice"};
  cov.values.resize(ix(n), 1);
  for (std::size_t i = 0; i < n; ++i) cov.values(ix(i), 0) = ice[i];
  write_text(dir / "covariates.csv", format_covariates(cov));

  auto strata = read_strata(a.strata);
  const auto s_order = align_ids(areas.ids, a.areas, strata.area_ids, a.strata);
  {
    StrataTable ordered = strata;
    ordered.area_ids = areas.ids;
    for (std::size_t i = 0; i < n; ++i) {
      ordered.population.row(ix(i)) = strata.population.row(ix(s_order[i]));
      if (strata.deaths) ordered.deaths->row(ix(i)) = strata.deaths->row(ix(s_order[i]));
    }
    strata = std::move(ordered);
  }
  if (!a.rates.empty()) strata.rates = read_rates(a.rates, strata.strata);

  const auto obs_in = read_counts(a.observed);
  const auto o_order = align_ids(areas.ids, a.areas, obs_in.ids, a.observed);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = obs_in.observed[o_order[i]];
  if (strata.deaths) {
    // Stratum deaths must agree with the totals they are pooled against.
    for (std::size_t i = 0; i < n; ++i) {
      if (std::isnan(y[i])) continue;
      const double sum = strata.deaths->row(ix(i)).sum();
      if (!std::isnan(sum) && std::abs(sum - y[i]) > 1e-9 * std::max(1.0, y[i]))
        throw ValidationError("dimension mismatch: deaths in " + a.strata + " do not sum to observed in " +
                              a.observed + " for area '" + areas.ids[i] + "'");
    }
  }
  const auto e = expected_counts(strata, y);
  CountsTable counts{areas.ids, y, {}};
  std::size_t zero_pop = 0;
  for (std::size_t i = 0; i < n; ++i) {
    counts.expected.push_back(e.expected[ix(i)]);
    zero_pop += e.zero_population[i];
  }
  write_text(dir / "counts.csv", format_counts(counts));

  const auto ratio = smr(y, counts.expected);
  std::vector<std::vector<std::string>> smr_rows;
  for (std::size_t i = 0; i < n; ++i)
    smr_rows.push_back({areas.ids[i], format_cell(ratio.ratio[i]), ratio.excluded[i] ? "1" : "0"});
  write_text(dir / "smr.csv", format_csv({"area_id", "smr", "excluded"}, smr_rows));

  std::vector<std::vector<std::string>> summary;
  const auto smr_stats = describe(ratio.ratio);
  summary.push_back({"smr", std::to_string(smr_stats.n), format_double(smr_stats.mean),
                     format_double(smr_stats.sd), format_double(smr_stats.min), format_double(smr_stats.max)});
  const auto ice_stats = describe(ice);
  summary.push_back({"ice", std::to_string(ice_stats.n), format_double(ice_stats.mean),
                     format_double(ice_stats.sd), format_double(ice_stats.min), format_double(ice_stats.max)});
  write_text(dir / "summary.csv", format_csv({"variable", "n", "mean", "sd", "min", "max"}, summary));

  out << "prepared " << n << " areas: " << imputed << " imputed indicator cells (" << fallback
      << " by global fallback), " << zero_pop << " zero-population areas\n";

  if (!a.adjacency.empty()) {
    const auto graph = read_adjacency(a.adjacency, n);
    const auto m = morans_i(graph, ice);
    write_text(dir / "moran.csv",
               format_csv({"variable", "statistic", "expected", "variance", "z", "p_value", "n"},
                          {{"ice", format_double(m.statistic), format_double(m.expected),
                            format_double(m.variance), format_double(m.z_score), format_double(m.p_value),
                            std::to_string(m.n)}}));
    out << "Moran's I of ICE = " << fixed(m.statistic, 3) << " (p = " << format_double(m.p_value) << ")\n";
  }
}

// -------------------------------------------------------------- fit-stage1

struct Stage1Args {
  std::string areas, adjacency, indicators, out, anchor;
  std::string covariates_in, covariates_out;
  std::string factor_name = "health_behavior";
  ChainFlags chain;
};

void run_fit_stage1(const Stage1Args& a, std::ostream& out) {
  const auto ctx = load_areas(a.areas, a.adjacency);
  const auto panel = load_indicators(a.indicators, ctx, a.areas);
  FactorModelSpec spec;
  spec.n_indicators = panel.n_indicators();
  if (!a.anchor.empty()) {
    const auto it = std::find(panel.column_names.begin(), panel.column_names.end(), a.anchor);
    if (it == panel.column_names.end())
      throw ValidationError("anchor indicator '" + a.anchor + "' not found in " + a.indicators);
    spec.anchor_index = static_cast<std::size_t>(it - panel.column_names.begin());
  }
  const auto mcmc = a.chain.config();
  auto archive = fit_stage1(panel, ctx.graph, spec, mcmc);
  archive.metadata["factor_name"] = a.factor_name;
  archive.metadata["areas"] = a.areas;
  archive.metadata["adjacency"] = a.adjacency;
  archive.metadata["indicators_file"] = a.indicators;

  const auto dir = ensure_dir(a.out);
  write_archive(archive, dir / "archive.csv", dir / "archive.meta");
  out << "stage 1: " << archive.n_chains() << " chains x " << mcmc.retained_per_chain()
      << " retained draws written to " << (dir / "archive.csv").string() << "\n";

  if (!a.covariates_out.empty()) {
    if (a.covariates_in.empty()) throw ValidationError("--covariates-out needs --covariates-in");
    auto cov = read_covariates(a.covariates_in);
    const auto order = align_ids(ctx.areas.ids, a.areas, cov.ids, a.covariates_in);
    const auto q = factor_quintiles(archive);
    CovariateTable merged;
    merged.ids = ctx.areas.ids;
    merged.names = cov.names;
    auto col = std::find(merged.names.begin(), merged.names.end(), a.factor_name);
    const bool append = col == merged.names.end();
    if (append) merged.names.push_back(a.factor_name);
    merged.values.resize(ix(merged.ids.size()), ix(merged.names.size()));
    const auto target = static_cast<Index>(
        std::find(merged.names.begin(), merged.names.end(), a.factor_name) - merged.names.begin());
    for (std::size_t i = 0; i < merged.ids.size(); ++i) {
      for (Index k = 0; k < cov.values.cols(); ++k) merged.values(ix(i), k) = cov.values(ix(order[i]), k);
      merged.values(ix(i), target) = q.posterior_mean[i];
    }
    write_text(a.covariates_out, format_covariates(merged));
    out << "factor '" << a.factor_name << "' posterior means written to " << a.covariates_out << "\n";
  }
}

// -------------------------------------------------------------- fit-stage2

struct Stage2Inputs {
  AreaContext ctx;
  SvcModelSpec spec;
  std::vector<double> counts;
};

struct Stage2Args {
  std::string areas, adjacency, counts, covariates, out, factor_archive;
  std::string model = "M4";
  std::vector<std::string> exclude{"social_economic"};
  std::string hyperprior = "weak";
  bool laplace = false;
  std::string tau_grid = "0.5,2,8,32";
  std::string missing_ice = "impute";
  ChainFlags chain;
};

GammaPrior parse_hyperprior(const std::string& name) {
  if (name == "weak") return kWeakPrecisionPrior;
  if (name == "vague") return kVaguePrecisionPrior;
  throw ValidationError("hyperprior must be 'weak' or 'vague'");
}

// Removes areas (rows of every per-area input) and their graph nodes.
void drop_areas(Stage2Inputs& in, const std::vector<bool>& keep) {
  std::vector<std::size_t> old;
  in.ctx.graph = in.ctx.graph.subgraph(keep, &old);
  const auto m = ix(old.size());
  AreaTable areas;
  std::vector<double> counts;
  Eigen::VectorXd x(m), e(m);
  Eigen::MatrixXd f(m, in.spec.latent_factors.cols());
  for (Index k = 0; k < m; ++k) {
    const auto i = old[static_cast<std::size_t>(k)];
    areas.ids.push_back(in.ctx.areas.ids[i]);
    areas.names.push_back(in.ctx.areas.names[i]);
    areas.groups.push_back(in.ctx.areas.groups[i]);
    counts.push_back(in.counts[i]);
    x[k] = in.spec.covariate[ix(i)];
    e[k] = in.spec.offsets[ix(i)];
    if (f.cols() > 0) f.row(k) = in.spec.latent_factors.row(ix(i));
  }
  for (auto& draw : in.spec.factor_draws) {
    Eigen::MatrixXd d(m, draw.cols());
    for (Index k = 0; k < m; ++k) d.row(k) = draw.row(ix(old[static_cast<std::size_t>(k)]));
    draw = std::move(d);
  }
  in.ctx.areas = std::move(areas);
  in.counts = std::move(counts);
  in.spec.covariate = std::move(x);
  in.spec.offsets = std::move(e);
  in.spec.latent_factors = std::move(f);
}

Stage2Inputs load_stage2(const std::string& areas, const std::string& adjacency,
                         const std::string& counts_path, const std::string& covariates,
                         const std::string& model, const std::vector<std::string>& exclude,
                         const std::string& hyperprior, const std::string& factor_archive,
                         const std::string& missing_ice) {
  if (missing_ice != "impute" && missing_ice != "drop" && missing_ice != "error")
    throw ValidationError("--missing-ice must be 'impute', 'drop' or 'error'");
  Stage2Inputs in;
  in.ctx = load_areas(areas, adjacency);
  const auto n = in.ctx.areas.ids.size();
  const auto counts = read_counts(counts_path);
  if (counts.expected.empty()) throw SchemaError(counts_path, 1, 0, "missing required column 'expected'");
  const auto c_order = align_ids(in.ctx.areas.ids, areas, counts.ids, counts_path);
  const auto cov = read_covariates(covariates);
  const auto v_order = align_ids(in.ctx.areas.ids, areas, cov.ids, covariates);

  auto& spec = in.spec;
  spec.rung = parse_rung(model);
  spec.precision_prior = parse_hyperprior(hyperprior);
  spec.offsets.resize(ix(n));
  spec.covariate.resize(ix(n));
  in.counts.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    in.counts[i] = counts.observed[c_order[i]];
    spec.offsets[ix(i)] = counts.expected[c_order[i]];
  }
  std::vector<Index> factor_cols;
  Index ice_col = -1;
  for (std::size_t k = 0; k < cov.names.size(); ++k) {
    if (cov.names[k] == "ice") {
      ice_col = ix(k);
    } else if (std::find(exclude.begin(), exclude.end(), cov.names[k]) == exclude.end()) {
      factor_cols.push_back(ix(k));
      spec.factor_names.push_back(cov.names[k]);
    }
  }
  std::vector<bool> keep(n, true);
  for (std::size_t i = 0; i < n; ++i) {
    spec.covariate[ix(i)] = cov.values(ix(v_order[i]), ice_col);
    if (!std::isnan(spec.covariate[ix(i)])) continue;
    if (missing_ice == "error")
      throw ValidationError("missing ice value for area '" + in.ctx.areas.ids[i] + "' in " + covariates);
    keep[i] = false;
  }
  if (missing_ice == "impute" && std::find(keep.begin(), keep.end(), false) != keep.end()) {
    auto panel = IndicatorPanel::from_matrix(Eigen::MatrixXd(spec.covariate), {"ice"}, in.ctx.areas.ids);
    panel.groups = in.ctx.areas.groups;
    spec.covariate = impute_by_group(panel).values.col(0);
    keep.assign(n, true);
  }
  if (spec.rung < ModelRung::M2) spec.factor_names.clear();
  const auto m = spec.rung < ModelRung::M2 ? 0 : factor_cols.size();
  spec.latent_factors.resize(ix(n), ix(m));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < m; ++k) {
      const double v = cov.values(ix(v_order[i]), factor_cols[k]);
      if (std::isnan(v))
        throw ValidationError("missing '" + spec.factor_names[k] + "' for area '" + in.ctx.areas.ids[i] +
                              "' in " + covariates);
      spec.latent_factors(ix(i), ix(k)) = v;
    }

  if (!factor_archive.empty() && m > 0) {
    const fs::path dir(factor_archive);
    const auto a1 = read_archive(dir / "archive.csv", dir / "archive.meta");
    const auto name_it = a1.metadata.find("factor_name");
    const std::string name = name_it == a1.metadata.end() ? "" : name_it->second;
    const auto pos = std::find(spec.factor_names.begin(), spec.factor_names.end(), name);
    if (pos == spec.factor_names.end())
      throw ValidationError("factor '" + name + "' of " + factor_archive + " is not a model covariate");
    const auto col = ix(static_cast<std::size_t>(pos - spec.factor_names.begin()));
    const auto& eta = a1.param("eta");
    if (eta.size != n)
      throw ValidationError("dimension mismatch: " + factor_archive + " has " + std::to_string(eta.size) +
                            " areas but " + areas + " has " + std::to_string(n));
    for (std::size_t c = 0; c < a1.n_chains(); ++c)
      for (std::size_t k = 0; k < a1.n_draws(c); ++k) {
        Eigen::MatrixXd f = spec.latent_factors;
        const auto row = a1.draw(c, k);
        for (std::size_t i = 0; i < n; ++i) f(ix(i), col) = row[eta.offset + i];
        spec.factor_draws.push_back(std::move(f));
      }
  }
  if (std::find(keep.begin(), keep.end(), false) != keep.end()) drop_areas(in, keep);
  return in;
}

std::vector<std::string> beta_names(const SvcModelSpec& spec) {
  std::vector<std::string> names{"intercept", "ice"};
  for (std::size_t k = 0; k < spec.n_factors(); ++k)
    names.push_back(k < spec.factor_names.size() ? spec.factor_names[k] : "factor" + std::to_string(k + 1));
  return names;
}

void run_laplace(const Stage2Args& a, const Stage2Inputs& in, const fs::path& dir, std::ostream& out) {
  const auto values = parse_list(a.tau_grid, "--tau-grid");
  const auto grid = make_hyper_grid(in.spec, values);
  const auto res = fit_stage2_laplace(in.spec, in.counts, in.ctx.graph, grid);
  const auto names = beta_names(in.spec);
  std::vector<std::vector<std::string>> rows;
  for (std::size_t k = 0; k < names.size(); ++k) {
    const double mode = res.mode.beta[ix(k)];
    const double sd = std::sqrt(res.beta_covariance(ix(k), ix(k)));
    rows.push_back({names[k], format_double(mode), format_double(sd), format_double(std::exp(mode)),
                    format_double(std::exp(mode - 1.959963984540054 * sd)),
                    format_double(std::exp(mode + 1.959963984540054 * sd))});
  }
  write_text(dir / "laplace_fixed.csv", format_csv({"param", "mode", "sd", "exp_mode", "rr_lower", "rr_upper"}, rows));
  rows.clear();
  for (const auto& g : res.grid)
    rows.push_back({format_double(g.hyper.tau_phi), format_double(g.hyper.tau_v),
                    format_double(g.hyper.tau_delta), format_double(g.log_marginal)});
  write_text(dir / "laplace_grid.csv", format_csv({"tau_phi", "tau_v", "tau_delta", "log_marginal"}, rows));
  const auto eta = linear_predictor(res.mode, in.spec);
  rows.clear();
  for (std::size_t i = 0; i < in.spec.n_areas(); ++i) {
    std::vector<std::string> row{in.ctx.areas.ids[i], format_double(std::exp(eta[ix(i)]))};
    row.push_back(in.spec.has_delta() ? format_double(res.mode.delta[ix(i)]) : std::string());
    rows.push_back(std::move(row));
  }
  write_text(dir / "laplace_areas.csv", format_csv({"area_id", "rr_mode", "delta_mode"}, rows));
  std::map<std::string, std::string> meta{
      {"stage", "2"},
      {"estimator", "laplace"},
      {"model", rung_name(in.spec.rung)},
      {"tau_phi", format_double(res.hyper.tau_phi)},
      {"tau_v", format_double(res.hyper.tau_v)},
      {"tau_delta", format_double(res.hyper.tau_delta)},
      {"log_marginal", format_double(res.log_marginal)},
      {"gradient_max_norm", format_double(res.gradient_max_norm)},
      {"newton_iterations", std::to_string(res.iterations)},
  };
  write_text(dir / "laplace.meta", format_key_value(meta));
  out << "stage 2 (" << rung_name(in.spec.rung) << ", Laplace): " << grid.size()
      << " grid points, gradient max-norm " << format_double(res.gradient_max_norm) << "\n";
  for (std::size_t k = 0; k < names.size(); ++k)
    out << "  " << names[k] << " = " << fixed(res.mode.beta[ix(k)], 4) << "\n";
}

void run_fit_stage2(const Stage2Args& a, std::ostream& out) {
  const auto in = load_stage2(a.areas, a.adjacency, a.counts, a.covariates, a.model, a.exclude,
                              a.hyperprior, a.factor_archive, a.missing_ice);
  const auto dir = ensure_dir(a.out);
  if (a.laplace) {
    run_laplace(a, in, dir, out);
    return;
  }
  const auto mcmc = a.chain.config();
  auto archive = fit_stage2_mcmc(in.spec, in.counts, in.ctx.graph, mcmc);
  archive.metadata["areas"] = a.areas;
  archive.metadata["adjacency"] = a.adjacency;
  archive.metadata["counts"] = a.counts;
  archive.metadata["covariates"] = a.covariates;
  archive.metadata["exclude_factor"] = join(a.exclude);
  archive.metadata["hyperprior"] = a.hyperprior;
  archive.metadata["factor_archive"] = a.factor_archive;
  archive.metadata["missing_ice"] = a.missing_ice;
  write_archive(archive, dir / "archive.csv", dir / "archive.meta");
  out << "stage 2 (" << rung_name(in.spec.rung) << "): " << archive.n_chains() << " chains x "
      << mcmc.retained_per_chain() << " retained draws written to " << (dir / "archive.csv").string() << "\n";
}

// ---------------------------------------------------------------- diagnose

struct DiagnoseArgs {
  std::string archive_dir, out;
};

void run_diagnose(const DiagnoseArgs& a, std::ostream& out) {
  const fs::path dir(a.archive_dir);
  const auto archive = read_archive(dir / "archive.csv", dir / "archive.meta");
  std::vector<std::vector<std::string>> rows;
  double worst = 0.0;
  std::string worst_name;
  for (const auto& p : archive.params()) {
    if (p.name == "factor_draw") continue;
    for (std::size_t k = 0; k < p.size; ++k) {
      std::string rhat = "nan";
      if (archive.n_chains() >= 2) {
        const double r = gelman_rubin(archive, p.name, k);
        rhat = format_double(r);
        if (r > worst) {
          worst = r;
          worst_name = p.name + "[" + std::to_string(k) + "]";
        }
      }
      const auto ess = effective_sample_size(archive, p.name, k);
      rows.push_back({p.name, std::to_string(k), rhat, format_double(ess.ess), ess.degenerate ? "1" : "0"});
    }
  }
  const fs::path target = a.out.empty() ? dir / "diagnostics.csv" : fs::path(a.out);
  write_text(target, format_csv({"param", "index", "rhat", "ess", "degenerate"}, rows));
  out << "diagnostics for " << rows.size() << " quantities written to " << target.string() << "\n";
  if (!worst_name.empty()) out << "max split R-hat = " << fixed(worst, 4) << " at " << worst_name << "\n";
}

// --------------------------------------------------------------- summarize

struct SummarizeArgs {
  std::string archive_dir, out;
  std::string thresholds = "1.25,1.5,2";
  double percentile = 0.8;
};

std::string meta_or(const ChainArchive& a, const std::string& key, const std::string& fallback = "") {
  const auto it = a.metadata.find(key);
  return it == a.metadata.end() ? fallback : it->second;
}

void summarize_stage1(const ChainArchive& archive, const fs::path& dir, double percentile,
                      std::ostream& out) {
  const auto names = split(meta_or(archive, "indicators"));
  const auto loadings = summarize_loadings(archive, names);
  std::vector<std::vector<std::string>> rows;
  for (const auto& l : loadings) {
    const auto s2 = posterior_summary(archive, "sigma2", l.indicator);
    rows.push_back({l.name, format_double(l.mean), l.fixed ? "" : format_double(l.lower),
                    l.fixed ? "" : format_double(l.upper), format_loading(l), format_double(s2.mean)});
  }
  write_text(dir / "loadings.csv",
             format_csv({"indicator", "mean", "lower", "upper", "display", "sigma2_mean"}, rows));

  std::vector<std::string> ids;
  const auto areas_path = meta_or(archive, "areas");
  const auto q = factor_quintiles(archive);
  if (!areas_path.empty() && fs::exists(areas_path)) ids = read_areas(areas_path).ids;
  if (ids.size() != q.posterior_mean.size()) {
    ids.clear();
    for (std::size_t i = 0; i < q.posterior_mean.size(); ++i) ids.push_back(std::to_string(i));
  }
  const auto exceed = factor_exceedance(archive, percentile);
  rows.clear();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto s = posterior_summary(archive, "eta", i);
    rows.push_back({ids[i], format_double(q.posterior_mean[i]), format_double(s.q025), format_double(s.q975),
                    std::to_string(q.quintile[i]), format_double(exceed[i])});
  }
  write_text(dir / "factor_scores.csv",
             format_csv({"area_id", "mean", "lower", "upper", "quintile", "p_exceed"}, rows));
  out << "stage 1 loadings:\n";
  for (const auto& l : loadings) out << "  " << l.name << ": " << format_loading(l) << "\n";
}

void summarize_stage2(const ChainArchive& archive, const fs::path& dir, const std::string& thresholds,
                      std::ostream& out) {
  const auto in = load_stage2(meta_or(archive, "areas"), meta_or(archive, "adjacency"),
                              meta_or(archive, "counts"), meta_or(archive, "covariates"),
                              meta_or(archive, "model", "M4"), split(meta_or(archive, "exclude_factor")),
                              meta_or(archive, "hyperprior", "weak"), meta_or(archive, "factor_archive"),
                              meta_or(archive, "missing_ice", "impute"));
  const auto& spec = in.spec;
  const auto names = beta_names(spec);
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> ratio_lines;
  for (std::size_t k = 0; k < names.size(); ++k) {
    const auto draws = archive.pooled("beta", k);
    const auto s = summarize_draws(draws);
    const auto rr = rate_ratio(draws);
    rows.push_back({names[k], format_double(s.mean), format_double(s.sd), format_double(s.q025),
                    format_double(s.q50), format_double(s.q975), format_double(rr.exp_of_mean),
                    format_double(rr.mean_of_exp), format_double(rr.lower), format_double(rr.upper)});
    if (k > 0) ratio_lines.push_back(names[k] + ": " + format_rate_ratio(rr));
  }
  write_text(dir / "fixed_effects.csv",
             format_csv({"param", "mean", "sd", "q025", "q50", "q975", "exp_of_mean", "mean_of_exp",
                         "rr_lower", "rr_upper"},
                        rows));
  std::string ratio_text;
  for (const auto& l : ratio_lines) ratio_text += l + "\n";
  write_text(dir / "rate_ratios.txt", ratio_text);

  rows.clear();
  for (const char* tau : {"tau_phi", "tau_v", "tau_delta"}) {
    if (!archive.has_param(tau)) continue;
    const auto p = summarize_precision(archive.pooled(tau));
    rows.push_back({tau, format_double(p.mean), format_double(p.mode), format_double(p.lower),
                    format_double(p.upper)});
  }
  if (!rows.empty())
    write_text(dir / "hyperparameters.csv", format_csv({"param", "mean", "mode", "q025", "q975"}, rows));

  const auto eta = linear_predictor_draws(archive, spec);
  const auto risk = relative_risk_summary(eta);
  const auto t = parse_list(thresholds, "--thresholds");
  const auto ex = risk_exceedance(eta, t);
  std::vector<std::string> header{"area_id", "rr_mean", "rr_lower", "rr_upper"};
  for (double v : t) header.push_back("p_gt_" + format_double(v));
  rows.clear();
  for (std::size_t i = 0; i < spec.n_areas(); ++i) {
    std::vector<std::string> row{in.ctx.areas.ids[i], format_double(risk.mean[i]), format_double(risk.lower[i]),
                                 format_double(risk.upper[i])};
    for (std::size_t k = 0; k < t.size(); ++k) row.push_back(format_double(ex(ix(i), ix(k))));
    rows.push_back(std::move(row));
  }
  write_text(dir / "relative_risk.csv", format_csv(header, rows));

  if (spec.has_delta()) {
    rows.clear();
    for (std::size_t i = 0; i < spec.n_areas(); ++i) {
      const auto s = posterior_summary(archive, "delta", i);
      rows.push_back({in.ctx.areas.ids[i], format_double(s.mean), format_double(s.q025), format_double(s.q975)});
    }
    write_text(dir / "delta.csv", format_csv({"area_id", "mean", "q025", "q975"}, rows));
  }

  const auto dic = compute_dic(eta, spec, in.counts);
  const auto waic = compute_waic(eta, spec, in.counts);
  write_text(dir / "model_fit.csv",
             format_csv({"criterion", "value"},
                        {{"dic", format_double(dic.dic)},
                         {"p_d", format_double(dic.p_d)},
                         {"mean_deviance", format_double(dic.mean_deviance)},
                         {"waic", format_double(waic.waic)},
                         {"p_waic", format_double(waic.p_waic)},
                         {"lppd", format_double(waic.lppd)}}));
  out << "stage 2 (" << rung_name(spec.rung) << "): DIC = " << fixed(dic.dic, 2)
      << ", WAIC = " << fixed(waic.waic, 2) << "\n";
  for (const auto& l : ratio_lines) out << "  " << l << "\n";
}

void run_summarize(const SummarizeArgs& a, std::ostream& out) {
  const fs::path src(a.archive_dir);
  const auto archive = read_archive(src / "archive.csv", src / "archive.meta");
  const auto dir = ensure_dir(a.out.empty() ? a.archive_dir : a.out);
  const auto stage = meta_or(archive, "stage");
  if (stage == "1") summarize_stage1(archive, dir, a.percentile, out);
  else if (stage == "2") summarize_stage2(archive, dir, a.thresholds, out);
  else throw ValidationError("archive in " + a.archive_dir + " has no recognised stage");
}

// ------------------------------------------------------------------ driver

bool truthy(const std::string& v) { return v == "1" || v == "true" || v == "yes" || v == "on"; }

// Prepends `--key value` pairs from a key = value config so later command
// line flags override them.
std::vector<std::string> expand_config(const std::vector<std::string>& args, CLI::App* sub,
                                       const std::set<std::string>& flags) {
  std::string path;
  for (std::size_t k = 1; k < args.size(); ++k) {
    if (args[k] == "--config" && k + 1 < args.size()) path = args[k + 1];
    else if (args[k].rfind("--config=", 0) == 0) path = args[k].substr(9);
  }
  if (path.empty()) return args;
  std::vector<std::string> injected;
  for (const auto& [key, value] : read_key_value(path)) {
    if (key == "config") continue;
    if (sub->get_option_no_throw("--" + key) == nullptr)
      throw ValidationError("unknown key '" + key + "' in config " + path + " for " + args[0]);
    if (flags.contains(key)) {
      if (truthy(value)) injected.push_back("--" + key);
    } else {
      injected.push_back("--" + key);
      injected.push_back(value);
    }
  }
  std::vector<std::string> out{args[0]};
  out.insert(out.end(), injected.begin(), injected.end());
  out.insert(out.end(), args.begin() + 1, args.end());
  return out;
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Two-stage Bayesian spatial factor and disease-mapping models", "areal"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  std::string config;
  std::set<std::string> flags{"laplace"};

  SimulateArgs sim;
  auto* s_sim = app.add_subcommand("simulate", "Write a synthetic raw dataset");
  s_sim->add_option("--out", sim.out, "Output directory")->required();
  s_sim->add_option("--rows", sim.cfg.rows)->capture_default_str();
  s_sim->add_option("--cols", sim.cfg.cols)->capture_default_str();
  s_sim->add_option("--seed", sim.cfg.seed)->capture_default_str();
  s_sim->add_option("--suppressed", sim.cfg.n_suppressed, "Areas with suppressed counts")->capture_default_str();
  s_sim->add_option("--delta-sd", sim.cfg.delta_sd, "Amplitude of the varying ICE effect")->capture_default_str();
  s_sim->add_option("--beta-ice", sim.cfg.beta_ice)->capture_default_str();
  s_sim->add_option("--beta-factor", sim.cfg.beta_factor)->capture_default_str();
  s_sim->add_option("--groups", sim.cfg.n_groups)->capture_default_str();
  s_sim->add_option("--strata", sim.cfg.n_strata)->capture_default_str();

  PrepArgs prep;
  auto* s_prep = app.add_subcommand("prep", "Standardize, impute, build ICE and expected counts");
  s_prep->add_option("--areas", prep.areas)->required();
  s_prep->add_option("--indicators-raw", prep.indicators)->required();
  s_prep->add_option("--ice-raw", prep.ice)->required();
  s_prep->add_option("--strata", prep.strata)->required();
  s_prep->add_option("--observed", prep.observed)->required();
  s_prep->add_option("--rates", prep.rates, "Optional stratum,rate reference file");
  s_prep->add_option("--adjacency", prep.adjacency, "Adds Moran's I of ICE");
  s_prep->add_option("--group-statistic", prep.group_statistic, "mean or median")->capture_default_str();
  s_prep->add_option("--out", prep.out)->required();

  Stage1Args st1;
  auto* s_fit1 = app.add_subcommand("fit-stage1", "Fit the spatial latent factor model");
  s_fit1->add_option("--areas", st1.areas)->required();
  s_fit1->add_option("--adjacency", st1.adjacency)->required();
  s_fit1->add_option("--indicators", st1.indicators)->required();
  s_fit1->add_option("--anchor", st1.anchor, "Indicator whose loading is fixed to 1");
  s_fit1->add_option("--factor-name", st1.factor_name)->capture_default_str();
  s_fit1->add_option("--covariates-in", st1.covariates_in);
  s_fit1->add_option("--covariates-out", st1.covariates_out);
  s_fit1->add_option("--out", st1.out)->required();
  st1.chain.add(s_fit1);

  Stage2Args st2;
  auto* s_fit2 = app.add_subcommand("fit-stage2", "Fit the Poisson spatially varying coefficient model");
  s_fit2->add_option("--areas", st2.areas)->required();
  s_fit2->add_option("--adjacency", st2.adjacency)->required();
  s_fit2->add_option("--counts", st2.counts)->required();
  s_fit2->add_option("--covariates", st2.covariates)->required();
  s_fit2->add_option("--model", st2.model, "M1, M2, M3 or M4")->capture_default_str();
  s_fit2->add_option("--exclude-factor", st2.exclude, "Covariate columns left out of the model")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll)
      ->delimiter(',')
      ->capture_default_str();
  s_fit2->add_option("--hyperprior", st2.hyperprior, "weak (Gamma(1, 0.5)) or vague (Gamma(1, 0.0005))")
      ->capture_default_str();
  s_fit2->add_option("--factor-archive", st2.factor_archive, "Stage-1 output directory for per-draw factors");
  s_fit2->add_flag("--laplace", st2.laplace, "Laplace mode over a precision grid instead of MCMC");
  s_fit2->add_option("--tau-grid", st2.tau_grid, "Comma-separated precision values")->capture_default_str();
  s_fit2->add_option("--missing-ice", st2.missing_ice,
                     "Areas without ICE: impute (group mean), drop (remove the node) or error")
      ->capture_default_str();
  s_fit2->add_option("--out", st2.out)->required();
  st2.chain.add(s_fit2);

  DiagnoseArgs diag;
  auto* s_diag = app.add_subcommand("diagnose", "Split R-hat and ESS for every archived quantity");
  s_diag->add_option("--archive-dir", diag.archive_dir)->required();
  s_diag->add_option("--out", diag.out, "Defaults to <archive-dir>/diagnostics.csv");

  SummarizeArgs summ;
  auto* s_summ = app.add_subcommand("summarize", "Posterior summary tables from an archive");
  s_summ->add_option("--archive-dir", summ.archive_dir)->required();
  s_summ->add_option("--out", summ.out, "Defaults to the archive directory");
  s_summ->add_option("--thresholds", summ.thresholds, "Relative-risk exceedance thresholds")->capture_default_str();
  s_summ->add_option("--percentile", summ.percentile, "Factor exceedance percentile")->capture_default_str();

  for (auto* sub : app.get_subcommands({})) sub->add_option("--config", config, "key = value defaults");

  try {
    std::vector<std::string> expanded = args;
    if (!args.empty()) {
      if (auto* sub = app.get_subcommand_no_throw(args[0])) expanded = expand_config(args, sub, flags);
    }
    std::reverse(expanded.begin(), expanded.end());
    try {
      app.parse(expanded);
    } catch (const CLI::CallForHelp& e) {
      out << app.help();
      return 0;
    } catch (const CLI::CallForAllHelp& e) {
      out << app.help("", CLI::AppFormatMode::All);
      return 0;
    }

    if (s_sim->parsed()) run_simulate(sim, out);
    else if (s_prep->parsed()) run_prep(prep, out);
    else if (s_fit1->parsed()) run_fit_stage1(st1, out);
    else if (s_fit2->parsed()) run_fit_stage2(st2, out);
    else if (s_diag->parsed()) run_diagnose(diag, out);
    else if (s_summ->parsed()) run_summarize(summ, out);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error kind=usage msg=" << one_line(e.what()) << "\n";
    return 2;
  } catch (const SchemaError& e) {
    err << "error kind=schema file=" << e.file() << " line=" << e.line() << " column=" << e.column()
        << " msg=" << one_line(e.what()) << "\n";
  } catch (const ValidationError& e) {
    err << "error kind=validation msg=" << one_line(e.what()) << "\n";
  } catch (const NumericalError& e) {
    err << "error kind=numerical msg=" << one_line(e.what()) << "\n";
  } catch (const std::exception& e) {
    err << "error kind=runtime msg=" << one_line(e.what()) << "\n";
  }
  return 1;
}

}  // namespace areal
