#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "teshu/core.hpp"
#include "teshu/topology.hpp"

namespace teshu {

struct SamplingConfig {
  double rate = 0.01;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(rate > 0.0 && rate <= 1.0)) throw InvalidArgument("sampling rate must be in (0, 1]");
  }
  /// Number of sampling groups, S = max(1, round(1/rate)).
  std::size_t group_count() const {
    validate();
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(1.0 / rate)));
  }
};

/// Sampling group of a message. Equal keys always land in the same group, on
/// every worker, so a group carries whole duplicate sets.
inline std::size_t group_of(const Message& msg, std::size_t groups) {
  if (groups == 0) throw InvalidArgument("group count must be >= 1");
  return static_cast<std::size_t>(group_hash64(msg.key()) % groups);
}

// Every scope member derives the same group from (seed, shuffle, stage); no
// coordination round is needed.
inline std::size_t choose_group(const SamplingConfig& cfg, std::uint64_t shuffle_id, std::uint64_t stage,
                                std::size_t groups) {
  std::uint64_t x = splitmix64(cfg.seed);
  x = splitmix64(x ^ shuffle_id);
  x = splitmix64(x ^ (stage + 0x51ed27ULL));
  return static_cast<std::size_t>(x % groups);
}

inline MessageBuffer extract_group(const MessageBuffer& buf, std::size_t groups, std::size_t j) {
  MessageBuffer out;
  for (const auto& m : buf)
    if (group_of(m, groups) == j) out.push_back(m);
  return out;
}

/// Bytes after combining divided by bytes before; 1.0 for an empty sample.
inline double estimate_reduction(const MessageBuffer& sample, const CombinerFn& comb) {
  if (sample.empty()) return 1.0;
  return static_cast<double>(combine_buffer(sample, comb).total_bytes()) /
         static_cast<double>(sample.total_bytes());
}

struct SampleRun {
  WorkerList scope;
  std::size_t groups = 1;
  std::size_t group = 0;
  WorkerId sampling_server = 0;
  MessageBuffer sample;
  double r_hat = 1.0;
  double eff = 0.0;
  double cost = 0.0;
};

/// Partition-aware sampling over a whole scope at once, with per-worker
/// buffers given in scope order. The engine performs the same steps with real
/// SENDs to the sampling server.
inline SampleRun partition_aware_sample(std::span<const MessageBuffer> buffers, const WorkerList& scope,
                                        const SamplingConfig& cfg, std::uint64_t shuffle_id,
                                        std::uint64_t stage, const CombinerFn& comb) {
  if (scope.empty() || buffers.size() != scope.size())
    throw InvalidArgument("partition_aware_sample: one buffer per scope worker required");
  SampleRun run;
  run.scope = scope;
  run.groups = cfg.group_count();
  run.group = choose_group(cfg, shuffle_id, stage, run.groups);
  run.sampling_server = *std::min_element(scope.begin(), scope.end());
  for (const auto& b : buffers) run.sample.append(extract_group(b, run.groups, run.group));
  run.r_hat = estimate_reduction(run.sample, comb);
  return run;
}

/// Baseline: each message kept independently with probability `rate`.
inline MessageBuffer samp_random(const MessageBuffer& buf, double rate, std::uint64_t seed) {
  if (!(rate > 0.0 && rate <= 1.0)) throw InvalidArgument("sampling rate must be in (0, 1]");
  std::mt19937_64 rng(splitmix64(seed));
  MessageBuffer out;
  for (const auto& m : buf) {
    double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    if (u < rate) out.push_back(m);
  }
  return out;
}

struct EffCost {
  double eff = 0.0;
  double cost = 0.0;
};

/// Time saved downstream by combining at `level` versus the time the level costs.
///   cost = transfer_time(B*(k-1)/k, level) + combine_cost*B
///   eff  = (1 - r_hat) * B / bandwidth(next_level)
inline EffCost compute_eff_cost(double r_hat, Level level, Level next_level,
                                std::span<const std::size_t> bytes_local, const Topology& topo,
                                const CostModel& cm) {
  if (bytes_local.empty()) throw InvalidArgument("compute_eff_cost: empty scope");
  double total = 0.0;
  for (auto b : bytes_local) total += static_cast<double>(b);
  const double k = static_cast<double>(bytes_local.size());
  EffCost out;
  out.cost = transfer_time(total * (k - 1.0) / k, level, topo, cm) + cm.combine_cost * total;
  out.eff = (1.0 - r_hat) * total / cm.bandwidth(next_level, topo);
  return out;
}

}  // namespace teshu
