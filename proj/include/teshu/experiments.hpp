#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "teshu/simulator.hpp"

namespace teshu::experiments {

inline std::string fmt(double v, int digits = 6) {
  if (std::isnan(v)) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// Workload specs contain commas, so text fields are always quoted.
inline std::string quoted(const std::string& s) {
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw InvalidArgument("median of empty sample");
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline MessageBuffer concat(const Workload& w) {
  MessageBuffer all;
  for (const auto& [_, b] : w) all.append(b);
  return all;
}

/// Reduction ratio of the whole population under the sum combiner.
inline double true_ratio(const Workload& w) {
  return estimate_reduction(concat(w), *FunctionRegistry::with_builtins().combiner("sum"));
}

/// Metrics of one run. Output buffers are summarised unless `with_outputs` is set.
inline nlohmann::json outcome_to_json(const ShuffleOutcome& o, bool with_outputs = false) {
  nlohmann::json j;
  j["bytes_by_level"] = {{"self", o.bytes_at(Level::Self)},
                         {"server", o.bytes_at(Level::Server)},
                         {"rack", o.bytes_at(Level::Rack)},
                         {"global", o.bytes_at(Level::Global)}};
  j["payload_bytes"] = o.payload_bytes;
  j["sampling_bytes"] = o.sampling_bytes;
  j["control_bytes"] = o.control_bytes;
  j["transfers"] = o.transfers.size();
  j["modeled_time"] = o.modeled_time;
  j["phases"] = o.phase_times.size();
  j["decision_trace"] = o.decision_trace;
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& s : o.samples)
    samples.push_back({{"level", to_string(s.level)}, {"server", s.server}, {"scope_size", s.scope_size},
                       {"groups", s.groups}, {"group", s.group}, {"sample_bytes", s.sample_bytes},
                       {"r_hat", s.r_hat}, {"eff", s.eff}, {"cost", s.cost}});
  j["samples"] = samples;
  j["start_records"] = o.start_records;
  j["end_records"] = o.end_records;
  nlohmann::json outs = nlohmann::json::object();
  for (const auto& [w, buf] : o.outputs) {
    if (with_outputs) {
      nlohmann::json kv = nlohmann::json::object();
      for (const auto& m : buf) kv[m.key()] = m.int_value();
      outs[std::to_string(w)] = kv;
    } else {
      std::int64_t total = 0;
      for (const auto& m : buf) total += m.int_value();
      outs[std::to_string(w)] = {{"keys", buf.size()}, {"value_sum", total}};
    }
  }
  j["outputs"] = outs;
  return j;
}

// ---------------------------------------------------------------------------
// Sampling sweep

struct SweepRow {
  std::string workload;
  std::string method;  // partition_aware | random
  double rate = 0.0;
  double r_hat_median = 0.0;
  double true_ratio = 0.0;
  double relative_error = 0.0;
  double sampling_bytes_fraction = 0.0;
  double modeled_overhead_fraction = NAN;  // random rows have no in-engine counterpart
};

inline const char* kSweepHeader =
    "workload,method,rate,r_hat_median,true_ratio,relative_error,sampling_bytes_fraction,modeled_overhead_fraction";

inline std::string to_csv(const SweepRow& r) {
  return quoted(r.workload) + "," + r.method + "," + fmt(r.rate, 6) + "," + fmt(r.r_hat_median) + "," + fmt(r.true_ratio) +
         "," + fmt(r.relative_error) + "," + fmt(r.sampling_bytes_fraction) + "," +
         fmt(r.modeled_overhead_fraction);
}

struct SweepOptions {
  std::vector<double> rates = {1e-2, 1e-3, 1e-4};
  std::vector<std::string> methods = {"partition_aware", "random"};
  std::size_t seeds = 30;
  std::uint64_t first_seed = 1;
  Scheduler scheduler = Scheduler::Deterministic;
};

/// Estimator accuracy per (method, rate) plus, for partition-aware sampling,
/// the in-engine sampling cost: network_aware with both guards pinned false
/// (sampling kept) against vanilla_push.
inline std::vector<SweepRow> sampling_sweep(Simulator& sim, const Topology& topo, const CostModel& cm, const std::string& name,
                                            const Workload& w, const SweepOptions& opt) {
  if (opt.seeds == 0) throw InvalidArgument("sampling sweep needs at least one seed");
  for (double r : opt.rates)
    if (!(r > 0.0 && r <= 1.0)) throw InvalidArgument("sampling rate must be in (0, 1]");
  const auto sum = *FunctionRegistry::with_builtins().combiner("sum");
  const double truth = true_ratio(w);
  WorkerList scope;
  std::vector<MessageBuffer> buffers;
  for (const auto& [id, b] : w) {
    scope.push_back(id);
    buffers.push_back(b);
  }
  double total_bytes = 0;
  for (const auto& b : buffers) total_bytes += static_cast<double>(b.total_bytes());

  RunConfig base;
  base.scheduler = opt.scheduler;
  const double vanilla_time = sim.run(topo, cm, "vanilla_push", w, base).modeled_time;

  std::vector<SweepRow> rows;
  for (const auto& method : opt.methods) {
    if (method != "partition_aware" && method != "random") throw InvalidArgument("unknown sampling method " + method);
    for (double rate : opt.rates) {
      std::vector<double> est, frac, over;
      for (std::uint64_t s = opt.first_seed; s < opt.first_seed + opt.seeds; ++s) {
        if (method == "partition_aware") {
          SamplingConfig sc{rate, s};
          est.push_back(partition_aware_sample(buffers, scope, sc, s, 0, sum).r_hat);
          RunConfig cfg = base;
          cfg.plan.sampling = sc;
          cfg.plan.forced = {{"S", false}, {"R", false}};
          cfg.plan.keep_sampling = true;
          auto o = sim.run(topo, cm, "network_aware", w, cfg);
          frac.push_back(o.payload_bytes ? static_cast<double>(o.sampling_bytes) / static_cast<double>(o.payload_bytes)
                                         : 0.0);
          over.push_back(o.modeled_time / vanilla_time - 1.0);
        } else {
          MessageBuffer sample;
          for (std::size_t i = 0; i < buffers.size(); ++i)
            sample.append(samp_random(buffers[i], rate, splitmix64(s) ^ scope[i]));
          est.push_back(estimate_reduction(sample, sum));
          frac.push_back(total_bytes > 0 ? static_cast<double>(sample.total_bytes()) / total_bytes : 0.0);
        }
      }
      SweepRow row{name, method, rate, median(est), truth, 0.0, median(frac), NAN};
      row.relative_error = truth > 0 ? std::abs(row.r_hat_median - truth) / truth : 0.0;
      if (!over.empty()) row.modeled_overhead_fraction = median(over);
      rows.push_back(row);
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Decision matrix

struct DecisionRow {
  double oversub = 1.0;
  std::string workload;
  std::string trace;
  std::string best_trace;
  double bytes_saved_fraction = 0.0;  // cross-rack bytes, versus vanilla_push
  double modeled_speedup = 1.0;       // vanilla time / network_aware time
  double modeled_time = 0.0;
  double best_time = 0.0;
};

inline const char* kDecisionHeader = "oversub,workload,trace,best_trace,bytes_saved_fraction,modeled_speedup";

inline std::string to_csv(const DecisionRow& r) {
  return fmt(r.oversub, 1) + "," + quoted(r.workload) + "," + quoted(r.trace) + "," + quoted(r.best_trace) + "," +
         fmt(r.bytes_saved_fraction) + "," + fmt(r.modeled_speedup);
}

inline DecisionRow decide(Simulator& sim, Topology topo, const CostModel& cm, double oversub, const std::string& name,
                          const Workload& w, const RunConfig& cfg = {}) {
  topo.oversubscription = oversub;
  auto v = sim.run(topo, cm, "vanilla_push", w, cfg);
  auto n = sim.run(topo, cm, "network_aware", w, cfg);
  auto best = sim.exhaustive_best_plan(topo, cm, w, cfg);
  DecisionRow r{oversub, name, n.trace_string(), best.trace, 0.0, v.modeled_time / n.modeled_time, n.modeled_time,
                best.modeled_time};
  auto vg = static_cast<double>(v.bytes_at(Level::Global));
  r.bytes_saved_fraction = vg > 0 ? 1.0 - static_cast<double>(n.bytes_at(Level::Global)) / vg : 0.0;
  return r;
}

// ---------------------------------------------------------------------------
// Link failures

struct FailureRow {
  std::uint64_t seed = 0;
  double vanilla_time = 0.0;
  double network_aware_time = 0.0;
  double no_failure_time = 0.0;  // network_aware on the intact topology
  std::string trace;
  double healthy_fraction = 1.0;
  double ratio_to_no_failure() const { return network_aware_time / no_failure_time; }
};

inline const char* kFailureHeader =
    "seed,healthy_fraction,vanilla_time,network_aware_time,no_failure_time,ratio_to_no_failure,trace";

inline std::string to_csv(const FailureRow& r) {
  return std::to_string(r.seed) + "," + fmt(r.healthy_fraction, 4) + "," + fmt(r.vanilla_time * 1e3) + "," +
         fmt(r.network_aware_time * 1e3) + "," + fmt(r.no_failure_time * 1e3) + "," + fmt(r.ratio_to_no_failure()) +
         "," + quoted(r.trace);
}

/// Scenario seeds first_seed .. first_seed+scenarios-1, each failing `k` spine links.
inline std::vector<FailureRow> failure_sweep(Simulator& sim, const Topology& topo, const CostModel& cm, const Workload& w,
                                             std::uint32_t k, std::size_t scenarios, std::uint64_t first_seed,
                                             const RunConfig& cfg = {}) {
  const double intact = sim.run(topo, cm, "network_aware", w, cfg).modeled_time;
  std::vector<FailureRow> rows;
  for (std::uint64_t s = first_seed; s < first_seed + scenarios; ++s) {
    Topology failed = inject_spine_failures(topo, k, s);
    FailureRow r;
    r.seed = s;
    r.healthy_fraction = failed.healthy_fraction();
    r.vanilla_time = sim.run(failed, cm, "vanilla_push", w, cfg).modeled_time;
    auto n = sim.run(failed, cm, "network_aware", w, cfg);
    r.network_aware_time = n.modeled_time;
    r.no_failure_time = intact;
    r.trace = n.trace_string();
    rows.push_back(r);
  }
  return rows;
}

struct FailureSummary {
  std::size_t scenarios = 0;
  std::size_t not_slower_than_vanilla = 0;
  std::size_t within_25pct_of_intact = 0;
  double ratio_min = 0, ratio_median = 0, ratio_max = 0;
};

inline FailureSummary summarize(const std::vector<FailureRow>& rows) {
  FailureSummary s;
  s.scenarios = rows.size();
  std::vector<double> ratios;
  for (const auto& r : rows) {
    if (r.network_aware_time <= r.vanilla_time) ++s.not_slower_than_vanilla;
    if (r.ratio_to_no_failure() <= 1.25) ++s.within_25pct_of_intact;
    ratios.push_back(r.ratio_to_no_failure());
  }
  if (!ratios.empty()) {
    s.ratio_min = *std::min_element(ratios.begin(), ratios.end());
    s.ratio_max = *std::max_element(ratios.begin(), ratios.end());
    s.ratio_median = median(ratios);
  }
  return s;
}

}  // namespace teshu::experiments
