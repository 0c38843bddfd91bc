#pragma once

#include "areal/random.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace areal {

struct McmcConfig {
  std::size_t n_chains = 2;
  std::size_t n_iter = 100000;
  std::size_t burn_in = 40000;
  std::size_t thin = 50;
  std::uint64_t seed = 1;
  std::size_t threads = 1;

  void validate() const;  // throws ValidationError
  std::size_t retained_per_chain() const noexcept { return (n_iter - burn_in) / thin; }
  // Iterations are numbered 1..n_iter.
  bool is_retained(std::size_t iteration) const noexcept {
    return iteration > burn_in && (iteration - burn_in) % thin == 0;
  }
};

struct ParamInfo {
  std::string name;
  std::size_t size = 1;
  std::size_t offset = 0;  // column of element 0 within a draw row
};

// Retained draws of a fixed set of named (vector-valued) parameters, stored
// row-major per chain, plus free-form string metadata.
class ChainArchive {
public:
  struct Chain {
    std::size_t id = 0;
    std::vector<std::size_t> iterations;
    std::vector<double> values;  // iterations.size() rows of width()
  };

  ChainArchive() = default;
  explicit ChainArchive(const std::vector<std::pair<std::string, std::size_t>>& layout);

  const std::vector<ParamInfo>& params() const noexcept { return params_; }
  std::size_t width() const noexcept { return width_; }
  bool has_param(std::string_view name) const noexcept;
  const ParamInfo& param(std::string_view name) const;  // throws std::out_of_range

  std::size_t n_chains() const noexcept { return chains_.size(); }
  const Chain& chain(std::size_t c) const { return chains_.at(c); }
  const std::vector<Chain>& chains() const noexcept { return chains_; }
  std::size_t n_draws(std::size_t c) const { return chains_.at(c).iterations.size(); }
  std::size_t total_draws() const noexcept;

  void add_chain(Chain chain);
  // Chains are kept sorted by id.
  void append_draw(std::size_t chain_id, std::size_t iteration, std::span<const double> row);

  std::span<const double> draw(std::size_t c, std::size_t k) const;
  // Draws of one scalar element in chain c.
  std::vector<double> series(std::size_t c, std::string_view name, std::size_t index = 0) const;
  // All chains concatenated in chain order.
  std::vector<double> pooled(std::string_view name, std::size_t index = 0) const;

  std::map<std::string, std::string> metadata;

private:
  std::vector<ParamInfo> params_;
  std::size_t width_ = 0;
  std::vector<Chain> chains_;
};

// One chain's transition kernel. run_chains owns one instance per chain.
class ChainSampler {
public:
  virtual ~ChainSampler() = default;
  virtual void step(Rng& rng, std::size_t iteration) = 0;
  // Called once after the last burn-in iteration (adaptation freezing).
  virtual void end_burn_in() {}
  virtual void record(std::span<double> row) const = 0;
};

using SamplerFactory = std::function<std::unique_ptr<ChainSampler>(std::size_t chain)>;

// Runs config.n_chains independent chains, chain k seeded with
// stream_seed(config.seed, k), on up to config.threads worker threads. The
// result does not depend on the thread count.
ChainArchive run_chains(const McmcConfig& config,
                        const std::vector<std::pair<std::string, std::size_t>>& layout,
                        const SamplerFactory& factory);

// Potential scale reduction. Split variant halves every chain first.
double gelman_rubin(const ChainArchive& archive, std::string_view name, std::size_t index = 0,
                    bool split = true);
double gelman_rubin(const std::vector<std::vector<double>>& chains, bool split = true);

struct EssResult {
  double ess = 0.0;
  bool degenerate = false;  // zero variance; ess is set to the draw count
};

// Multi-chain ESS with Geyer's initial monotone sequence, capped at the total
// draw count.
EssResult effective_sample_size(const ChainArchive& archive, std::string_view name,
                                std::size_t index = 0);
EssResult effective_sample_size(const std::vector<std::vector<double>>& chains);

struct PosteriorSummary {
  double mean = 0.0;
  double sd = 0.0;
  double q025 = 0.0;
  double q50 = 0.0;
  double q975 = 0.0;
};

// Linear-interpolation quantile (R type 7) of already sorted data.
double quantile_sorted(std::span<const double> sorted, double p);
double quantile(std::vector<double> values, double p);

PosteriorSummary summarize_draws(std::span<const double> draws);
PosteriorSummary posterior_summary(const ChainArchive& archive, std::string_view name,
                                   std::size_t index = 0);

// Long-format CSV "chain,iter,param,index,value" and the key = value
// metadata side file.
std::string format_archive_csv(const ChainArchive& archive);
void write_archive(const ChainArchive& archive, const std::filesystem::path& csv_path,
                   const std::filesystem::path& metadata_path);
ChainArchive read_archive(const std::filesystem::path& csv_path,
                          const std::filesystem::path& metadata_path = {});

}  // namespace areal
