#include "areal/mcmc.hpp"

#include "areal/csv.hpp"
#include "areal/error.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <thread>

namespace areal {

void McmcConfig::validate() const {
  if (n_chains < 1) throw ValidationError("n_chains must be at least 1");
  if (thin < 1) throw ValidationError("thin must be at least 1");
  if (burn_in >= n_iter) throw ValidationError("burn_in must be smaller than n_iter");
  if (threads < 1) throw ValidationError("threads must be at least 1");
}

ChainArchive::ChainArchive(const std::vector<std::pair<std::string, std::size_t>>& layout) {
  for (const auto& [name, size] : layout) {
    if (has_param(name)) throw ValidationError("duplicate parameter name '" + name + "'");
    params_.push_back({name, size, width_});
    width_ += size;
  }
}

bool ChainArchive::has_param(std::string_view name) const noexcept {
  return std::any_of(params_.begin(), params_.end(), [&](const auto& p) { return p.name == name; });
}

const ParamInfo& ChainArchive::param(std::string_view name) const {
  for (const auto& p : params_)
    if (p.name == name) return p;
  throw std::out_of_range("archive has no parameter '" + std::string(name) + "'");
}

std::size_t ChainArchive::total_draws() const noexcept {
  std::size_t n = 0;
  for (const auto& c : chains_) n += c.iterations.size();
  return n;
}

void ChainArchive::add_chain(Chain chain) {
  if (chain.values.size() != chain.iterations.size() * width_)
    throw ValidationError("chain values do not match archive width");
  const auto pos = std::lower_bound(chains_.begin(), chains_.end(), chain.id,
                                    [](const Chain& c, std::size_t id) { return c.id < id; });
  if (pos != chains_.end() && pos->id == chain.id)
    throw ValidationError("duplicate chain id " + std::to_string(chain.id));
  chains_.insert(pos, std::move(chain));
}

void ChainArchive::append_draw(std::size_t chain_id, std::size_t iteration,
                               std::span<const double> row) {
  if (row.size() != width_) throw ValidationError("draw row has wrong width");
  auto pos = std::lower_bound(chains_.begin(), chains_.end(), chain_id,
                              [](const Chain& c, std::size_t id) { return c.id < id; });
  if (pos == chains_.end() || pos->id != chain_id) pos = chains_.insert(pos, Chain{chain_id, {}, {}});
  pos->iterations.push_back(iteration);
  pos->values.insert(pos->values.end(), row.begin(), row.end());
}

std::span<const double> ChainArchive::draw(std::size_t c, std::size_t k) const {
  const auto& ch = chains_.at(c);
  return {ch.values.data() + k * width_, width_};
}

std::vector<double> ChainArchive::series(std::size_t c, std::string_view name,
                                         std::size_t index) const {
  const auto& p = param(name);
  if (index >= p.size) throw std::out_of_range("parameter index out of range");
  const auto& ch = chains_.at(c);
  std::vector<double> out(ch.iterations.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = ch.values[k * width_ + p.offset + index];
  return out;
}

std::vector<double> ChainArchive::pooled(std::string_view name, std::size_t index) const {
  std::vector<double> out;
  out.reserve(total_draws());
  for (std::size_t c = 0; c < chains_.size(); ++c) {
    auto s = series(c, name, index);
    out.insert(out.end(), s.begin(), s.end());
  }
  return out;
}

ChainArchive run_chains(const McmcConfig& config,
                        const std::vector<std::pair<std::string, std::size_t>>& layout,
                        const SamplerFactory& factory) {
  config.validate();
  ChainArchive archive(layout);
  std::vector<ChainArchive::Chain> results(config.n_chains);

  auto run_one = [&](std::size_t c) {
    auto sampler = factory(c);
    Rng rng = make_stream(config.seed, c);
    auto& out = results[c];
    out.id = c;
    out.iterations.reserve(config.retained_per_chain());
    out.values.reserve(config.retained_per_chain() * archive.width());
    std::vector<double> row(archive.width());
    for (std::size_t it = 1; it <= config.n_iter; ++it) {
      sampler->step(rng, it);
      if (it == config.burn_in) sampler->end_burn_in();
      if (config.is_retained(it)) {
        sampler->record(row);
        out.iterations.push_back(it);
        out.values.insert(out.values.end(), row.begin(), row.end());
      }
    }
  };

  const std::size_t workers = std::min(config.threads, config.n_chains);
  if (workers <= 1) {
    for (std::size_t c = 0; c < config.n_chains; ++c) run_one(c);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t c = next++; c < config.n_chains; c = next++) {
          try {
            run_one(c);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
  }
  for (auto& r : results) archive.add_chain(std::move(r));
  archive.metadata["n_chains"] = std::to_string(config.n_chains);
  archive.metadata["n_iter"] = std::to_string(config.n_iter);
  archive.metadata["burn_in"] = std::to_string(config.burn_in);
  archive.metadata["thin"] = std::to_string(config.thin);
  archive.metadata["seed"] = std::to_string(config.seed);
  return archive;
}

namespace {

std::vector<std::vector<double>> archive_chains(const ChainArchive& archive,
                                                std::string_view name, std::size_t index) {
  std::vector<std::vector<double>> out;
  for (std::size_t c = 0; c < archive.n_chains(); ++c) out.push_back(archive.series(c, name, index));
  return out;
}

double mean_of(std::span<const double> x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double sample_variance(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  const double m = mean_of(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return ss / static_cast<double>(x.size() - 1);
}

}  // namespace

double gelman_rubin(const std::vector<std::vector<double>>& chains_in, bool split) {
  if (chains_in.size() < 2) throw ValidationError("Gelman-Rubin needs at least 2 chains");
  std::size_t n = chains_in.front().size();
  for (const auto& c : chains_in) n = std::min(n, c.size());
  if (n < 10) throw ValidationError("Gelman-Rubin needs at least 10 draws per chain");

  std::vector<std::vector<double>> chains;
  if (split) {
    const std::size_t half = n / 2;
    for (const auto& c : chains_in) {
      chains.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(half));
      chains.emplace_back(c.begin() + static_cast<std::ptrdiff_t>(n - half),
                          c.begin() + static_cast<std::ptrdiff_t>(n));
    }
    n = half;
  } else {
    for (const auto& c : chains_in) chains.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(n));
  }

  const double m = static_cast<double>(chains.size());
  const double len = static_cast<double>(n);
  std::vector<double> means;
  double within = 0.0;
  for (const auto& c : chains) {
    means.push_back(mean_of(c));
    within += sample_variance(c);
  }
  within /= m;
  const double grand = mean_of(means);
  double between = 0.0;
  for (double mu : means) between += (mu - grand) * (mu - grand);
  between *= len / (m - 1.0);

  if (within == 0.0) return between == 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
  const double var_plus = (len - 1.0) / len * within + between / len;
  return std::sqrt(var_plus / within);
}

double gelman_rubin(const ChainArchive& archive, std::string_view name, std::size_t index,
                    bool split) {
  return gelman_rubin(archive_chains(archive, name, index), split);
}

EssResult effective_sample_size(const std::vector<std::vector<double>>& chains) {
  if (chains.empty()) throw ValidationError("ESS needs at least one chain");
  std::size_t n = chains.front().size();
  std::size_t total = 0;
  for (const auto& c : chains) {
    n = std::min(n, c.size());
    total += c.size();
  }
  if (total < 50) throw ValidationError("ESS needs at least 50 retained draws");
  if (n < 4) throw ValidationError("ESS needs at least 4 draws per chain");

  const std::size_t m = chains.size();
  const double len = static_cast<double>(n);
  std::vector<std::vector<double>> centered(m);
  std::vector<double> means(m);
  for (std::size_t j = 0; j < m; ++j) {
    const auto& c = chains[j];
    means[j] = mean_of({c.data(), n});
    centered[j].resize(n);
    for (std::size_t i = 0; i < n; ++i) centered[j][i] = c[i] - means[j];
  }
  // Chain-averaged biased autocovariance at lag t.
  auto mean_acov = [&](std::size_t t) {
    double a = 0.0;
    for (const auto& c : centered) {
      double s = 0.0;
      for (std::size_t i = 0; i + t < n; ++i) s += c[i] * c[i + t];
      a += s / len;
    }
    return a / static_cast<double>(m);
  };
  const double mean_var = mean_acov(0) * len / (len - 1.0);
  double var_plus = mean_var * (len - 1.0) / len;
  if (m > 1) {
    const double grand = mean_of(means);
    double b = 0.0;
    for (double mu : means) b += (mu - grand) * (mu - grand);
    var_plus += b / static_cast<double>(m - 1);
  }
  const double draws = static_cast<double>(m * n);
  if (!(var_plus > 0.0)) return {draws, true};

  auto rho = [&](std::size_t t) { return 1.0 - (mean_var - mean_acov(t)) / var_plus; };

  // Geyer initial positive then monotone sequence on paired sums.
  double tau = -1.0;
  double prev_pair = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t + 1 < n; t += 2) {
    double pair = rho(t) + rho(t + 1);
    if (pair < 0.0) break;
    pair = std::min(pair, prev_pair);
    prev_pair = pair;
    tau += 2.0 * pair;
  }
  tau = std::max(tau, 1.0 / std::log10(draws));
  return {std::min(draws / tau, draws), false};
}

EssResult effective_sample_size(const ChainArchive& archive, std::string_view name,
                                std::size_t index) {
  return effective_sample_size(archive_chains(archive, name, index));
}

double quantile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw ValidationError("quantile of empty data");
  if (p <= 0.0) return sorted.front();
  if (p >= 1.0) return sorted.back();
  const double h = static_cast<double>(sorted.size() - 1) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

double quantile(std::vector<double> values, double p) {
  std::sort(values.begin(), values.end());
  return quantile_sorted(values, p);
}

PosteriorSummary summarize_draws(std::span<const double> draws) {
  if (draws.empty()) throw ValidationError("posterior summary of empty draw set");
  std::vector<double> sorted(draws.begin(), draws.end());
  std::sort(sorted.begin(), sorted.end());
  PosteriorSummary s;
  s.mean = mean_of(draws);
  s.sd = std::sqrt(sample_variance(draws));
  s.q025 = quantile_sorted(sorted, 0.025);
  s.q50 = quantile_sorted(sorted, 0.5);
  s.q975 = quantile_sorted(sorted, 0.975);
  return s;
}

PosteriorSummary posterior_summary(const ChainArchive& archive, std::string_view name,
                                   std::size_t index) {
  return summarize_draws(archive.pooled(name, index));
}

std::string format_archive_csv(const ChainArchive& archive) {
  std::string out = "chain,iter,param,index,value\n";
  for (const auto& ch : archive.chains()) {
    const std::string chain_id = std::to_string(ch.id);
    for (std::size_t k = 0; k < ch.iterations.size(); ++k) {
      const std::string prefix = chain_id + "," + std::to_string(ch.iterations[k]) + ",";
      const double* row = ch.values.data() + k * archive.width();
      for (const auto& p : archive.params()) {
        for (std::size_t i = 0; i < p.size; ++i) {
          out += prefix;
          out += p.name;
          out += ',';
          out += std::to_string(i);
          out += ',';
          out += format_double(row[p.offset + i]);
          out += '\n';
        }
      }
    }
  }
  return out;
}

void write_archive(const ChainArchive& archive, const std::filesystem::path& csv_path,
                   const std::filesystem::path& metadata_path) {
  write_file_atomic(csv_path, format_archive_csv(archive));
  if (!metadata_path.empty()) {
    auto meta = archive.metadata;
    std::string layout;
    for (const auto& p : archive.params())
      layout += (layout.empty() ? "" : ";") + p.name + ":" + std::to_string(p.size);
    meta["layout"] = layout;
    write_file_atomic(metadata_path, format_key_value(meta));
  }
}

ChainArchive read_archive(const std::filesystem::path& csv_path,
                          const std::filesystem::path& metadata_path) {
  const auto table = read_csv(csv_path);
  const auto c_chain = table.column("chain");
  const auto c_iter = table.column("iter");
  const auto c_param = table.column("param");
  const auto c_index = table.column("index");
  const auto c_value = table.column("value");

  // First pass: layout in first-appearance order.
  std::vector<std::pair<std::string, std::size_t>> layout;
  std::map<std::string, std::size_t> slot;
  for (std::size_t r = 0; r < table.n_rows(); ++r) {
    const auto& name = table.cell(r, c_param);
    const auto idx = static_cast<std::size_t>(table.integer(r, c_index));
    auto it = slot.find(name);
    if (it == slot.end()) {
      slot.emplace(name, layout.size());
      layout.emplace_back(name, idx + 1);
    } else {
      auto& sz = layout[it->second].second;
      sz = std::max(sz, idx + 1);
    }
  }
  ChainArchive archive(layout);
  std::vector<std::size_t> offsets;
  for (const auto& p : archive.params()) offsets.push_back(p.offset);

  std::vector<double> row(archive.width(), std::nan(""));
  long long cur_chain = -1;
  long long cur_iter = -1;
  auto flush = [&] {
    if (cur_chain >= 0)
      archive.append_draw(static_cast<std::size_t>(cur_chain), static_cast<std::size_t>(cur_iter), row);
    std::fill(row.begin(), row.end(), std::nan(""));
  };
  for (std::size_t r = 0; r < table.n_rows(); ++r) {
    const long long ch = table.integer(r, c_chain);
    const long long it = table.integer(r, c_iter);
    if (ch != cur_chain || it != cur_iter) {
      flush();
      cur_chain = ch;
      cur_iter = it;
    }
    const auto idx = static_cast<std::size_t>(table.integer(r, c_index));
    row[offsets[slot[table.cell(r, c_param)]] + idx] = table.number(r, c_value);
  }
  flush();
  if (!metadata_path.empty()) {
    archive.metadata = read_key_value(metadata_path);
    archive.metadata.erase("layout");
  }
  return archive;
}

}  // namespace areal
