#include "support.hpp"

#include "areal/cli.hpp"
#include "areal/csv.hpp"
#include "areal/io.hpp"
#include "areal/mcmc.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <regex>
#include <sstream>

using namespace areal;
namespace ts = testing_support;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

// Simulated raw inputs plus prepared files, shared by the cases below.
const fs::path& prepared() {
  static const fs::path dir = [] {
    const auto d = ts::temp_dir("cli_pipeline");
    const auto raw = (d / "raw").string();
    const auto prep = (d / "prep").string();
    REQUIRE(cli({"simulate", "--out", raw, "--rows", "5", "--cols", "6", "--seed", "3"}).code == 0);
    const auto r = cli({"prep", "--areas", raw + "/areas.csv", "--indicators-raw", raw + "/indicators_raw.csv",
                        "--ice-raw", raw + "/ice_raw.csv", "--strata", raw + "/strata.csv", "--observed",
                        raw + "/observed.csv", "--adjacency", raw + "/adjacency.csv", "--out", prep});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    return d;
  }();
  return dir;
}

std::vector<std::string> stage1_args(const fs::path& d, const std::string& out) {
  return {"fit-stage1", "--areas", (d / "raw/areas.csv").string(), "--adjacency",
          (d / "raw/adjacency.csv").string(), "--indicators", (d / "prep/indicators.csv").string(),
          "--out", out};
}

std::vector<std::string> stage2_args(const fs::path& d, const std::string& model, const std::string& out) {
  return {"fit-stage2", "--areas", (d / "raw/areas.csv").string(), "--adjacency",
          (d / "raw/adjacency.csv").string(), "--counts", (d / "prep/counts.csv").string(),
          "--covariates", (d / "prep/covariates.csv").string(), "--model", model, "--out", out};
}

}  // namespace

TEST_CASE("prep writes every derived table") {
  const auto& d = prepared();
  for (const char* f : {"indicators.csv", "covariates.csv", "counts.csv", "smr.csv", "summary.csv", "moran.csv"})
    CHECK_MESSAGE(fs::exists(d / "prep" / f), f);
  const auto counts = read_counts(d / "prep/counts.csv");
  REQUIRE(counts.expected.size() == 30);
  double se = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < 30; ++i) {
    se += counts.expected[i];
    if (!std::isnan(counts.observed[i])) sy += counts.observed[i];
  }
  CHECK(se > 0.0);
  CHECK(sy > 0.0);
}

TEST_CASE("fit-stage1 retains the requested draws") {
  const auto& d = prepared();
  const auto out = (d / "s1").string();
  auto args = stage1_args(d, out);
  for (const char* a : {"--iters", "2000", "--burnin", "500", "--thin", "5", "--chains", "2"}) args.push_back(a);
  const auto r = cli(args);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto a = read_archive(fs::path(out) / "archive.csv", fs::path(out) / "archive.meta");
  REQUIRE(a.n_chains() == 2);
  CHECK(a.n_draws(0) == 300);
  CHECK(a.n_draws(1) == 300);
  CHECK(a.chain(0).iterations.front() == 505);
  CHECK(a.has_param("eta"));

  const auto before = ts::slurp(fs::path(out) / "archive.csv");
  const auto meta_before = ts::slurp(fs::path(out) / "archive.meta");
  const auto s = cli({"summarize", "--archive-dir", out});
  REQUIRE_MESSAGE(s.code == 0, s.err);
  CHECK(fs::exists(fs::path(out) / "loadings.csv"));
  CHECK(ts::slurp(fs::path(out) / "archive.csv") == before);
  CHECK(ts::slurp(fs::path(out) / "archive.meta") == meta_before);

  const auto g = cli({"diagnose", "--archive-dir", out});
  REQUIRE_MESSAGE(g.code == 0, g.err);
  const auto diag = read_csv(fs::path(out) / "diagnostics.csv");
  CHECK(diag.header == std::vector<std::string>{"param", "index", "rhat", "ess", "degenerate"});
}

TEST_CASE("M4 runs on covariates shaped for M3") {
  const auto& d = prepared();
  const auto out = (d / "m4").string();
  auto args = stage2_args(d, "M4", out);
  for (const char* a : {"--iters", "1500", "--burnin", "500", "--thin", "5", "--chains", "2"}) args.push_back(a);
  const auto r = cli(args);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto a = read_archive(fs::path(out) / "archive.csv", fs::path(out) / "archive.meta");
  CHECK(a.has_param("delta"));
  CHECK(a.n_draws(0) == 200);
  const auto s = cli({"summarize", "--archive-dir", out});
  REQUIRE_MESSAGE(s.code == 0, s.err);
  CHECK(fs::exists(fs::path(out) / "rate_ratios.txt"));
  CHECK(fs::exists(fs::path(out) / "model_fit.csv"));
  const std::regex line(R"(.+: e\^beta = \d+\.\d{3}, 95% credible interval: \d+\.\d{3}, \d+\.\d{3})");
  std::istringstream text(ts::slurp(fs::path(out) / "rate_ratios.txt"));
  std::string l;
  int lines = 0;
  while (std::getline(text, l)) {
    if (l.empty()) continue;
    CHECK_MESSAGE(std::regex_match(l, line), l);
    ++lines;
  }
  CHECK(lines >= 1);
}

TEST_CASE("error reporting and exit codes") {
  const auto& d = prepared();
  const std::regex error_line(R"(error kind=[a-z]+( file=\S+ line=\d+ column=\d+)? msg=.+\n)");

  const auto usage = cli({"fit-stage1", "--bogus"});
  CHECK(usage.code == 2);
  CHECK(std::regex_match(usage.err, error_line));
  CHECK(cli({}).code == 2);
  CHECK(cli({"no-such-command"}).code == 2);

  const auto bad_dir = ts::temp_dir("cli_bad");
  ts::spit(bad_dir / "counts.csv", "area_id,observed\nA1000,x\n");
  auto args = stage2_args(d, "M1", (bad_dir / "out").string());
  args[6] = (bad_dir / "counts.csv").string();
  const auto schema = cli(args);
  CHECK(schema.code == 1);
  CHECK(std::regex_match(schema.err, error_line));
  CHECK(schema.err.find("kind=schema") != std::string::npos);
  CHECK(schema.err.find("line=2 column=2") != std::string::npos);

  // fewer areas in the counts file than in the area table
  const auto full = ts::slurp(d / "prep/counts.csv");
  ts::spit(bad_dir / "short.csv", full.substr(0, full.rfind('\n', full.size() - 2) + 1));
  args[6] = (bad_dir / "short.csv").string();
  const auto mismatch = cli(args);
  CHECK(mismatch.code == 1);
  CHECK(mismatch.err.find("dimension mismatch") != std::string::npos);
  CHECK(mismatch.err.find("short.csv") != std::string::npos);
  CHECK(mismatch.err.find("areas.csv") != std::string::npos);

  const auto bad_model = cli(stage2_args(d, "M7", (bad_dir / "m7").string()));
  CHECK(bad_model.code != 0);
  CHECK(std::regex_match(bad_model.err, error_line));
}

TEST_CASE("config files supply defaults that flags override") {
  const auto& d = prepared();
  const auto cfg_dir = ts::temp_dir("cli_config");
  ts::spit(cfg_dir / "run.cfg", "iters = 600\nburnin = 100\nthin = 5\nchains = 1\n");
  auto args = stage1_args(d, (cfg_dir / "a").string());
  args.push_back("--config");
  args.push_back((cfg_dir / "run.cfg").string());
  REQUIRE(cli(args).code == 0);
  CHECK(read_archive(cfg_dir / "a/archive.csv").n_draws(0) == 100);

  args = stage1_args(d, (cfg_dir / "b").string());
  for (const char* a : {"--config", "", "--thin", "10"}) args.push_back(a);
  args[args.size() - 3] = (cfg_dir / "run.cfg").string();
  REQUIRE(cli(args).code == 0);
  CHECK(read_archive(cfg_dir / "b/archive.csv").n_draws(0) == 50);

  ts::spit(cfg_dir / "typo.cfg", "iterz = 5\n");
  args = stage1_args(d, (cfg_dir / "c").string());
  args.push_back("--config");
  args.push_back((cfg_dir / "typo.cfg").string());
  const auto r = cli(args);
  CHECK(r.code == 1);
  CHECK(r.err.find("iterz") != std::string::npos);
}

TEST_CASE("Laplace path writes its tables") {
  const auto& d = prepared();
  const auto out = (d / "lap").string();
  auto args = stage2_args(d, "M3", out);
  for (const char* a : {"--laplace", "--tau-grid", "1,10"}) args.push_back(a);
  const auto r = cli(args);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto grid = read_csv(fs::path(out) / "laplace_grid.csv");
  CHECK(grid.n_rows() == 4);
  CHECK(fs::exists(fs::path(out) / "laplace_fixed.csv"));
}

TEST_CASE("areas without ICE are imputed, dropped or rejected") {
  const auto& d = prepared();
  const auto dir = ts::temp_dir("cli_missing_ice");
  auto cov = read_covariates(d / "prep/covariates.csv");
  const auto ice = static_cast<Eigen::Index>(
      std::find(cov.names.begin(), cov.names.end(), "ice") - cov.names.begin());
  cov.values(4, ice) = std::nan("");
  ts::spit(dir / "covariates.csv", format_covariates(cov));

  auto run = [&](const std::string& policy, const std::string& out) {
    auto args = stage2_args(d, "M3", (dir / out).string());
    args[8] = (dir / "covariates.csv").string();
    for (const char* a : {"--iters", "400", "--burnin", "100", "--thin", "5", "--chains", "1"}) args.push_back(a);
    if (!policy.empty()) {
      args.push_back("--missing-ice");
      args.push_back(policy);
    }
    return cli(args);
  };

  const auto imputed = run("", "impute");
  REQUIRE_MESSAGE(imputed.code == 0, imputed.err);
  CHECK(read_archive(dir / "impute/archive.csv").param("phi").size == 30);

  const auto dropped = run("drop", "drop");
  REQUIRE_MESSAGE(dropped.code == 0, dropped.err);
  CHECK(read_archive(dir / "drop/archive.csv").param("phi").size == 29);
  const auto s = cli({"summarize", "--archive-dir", (dir / "drop").string()});
  REQUIRE_MESSAGE(s.code == 0, s.err);
  const auto rr = read_csv(dir / "drop/relative_risk.csv");
  CHECK(rr.n_rows() == 29);

  const auto rejected = run("error", "error");
  CHECK(rejected.code == 1);
  CHECK(rejected.err.find("missing ice") != std::string::npos);
  CHECK(run("bogus", "bogus").code == 1);
}
