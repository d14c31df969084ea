#pragma once

#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "teshu/algorithms.hpp"
#include "teshu/engine.hpp"
#include "teshu/manager.hpp"
#include "teshu/workload.hpp"

namespace teshu {

struct RunConfig {
  WorkerList srcs;  // empty: every worker in the topology
  WorkerList dsts;  // empty: every worker in the topology
  std::string part_func = "default";
  std::optional<std::string> comb_func = "sum";
  PlanOptions plan;
  Scheduler scheduler = Scheduler::Deterministic;
};

struct BestPlan {
  std::string trace;
  double modeled_time = 0.0;
  std::map<std::string, double> times;  // every forced variant
};

/// Hosts a manager, per-worker template caches and the execution engine.
/// One caller at a time per instance.
class Simulator {
 public:
  Simulator() : Simulator(algorithms::builtin_sources()) {}
  explicit Simulator(const std::map<std::string, std::string>& templates)
      : client_(manager_), registry_(FunctionRegistry::with_builtins()) {
    for (const auto& [_, body] : templates) manager_.install_template(body);
  }
  Simulator(const Simulator&) = delete;
  Simulator& operator=(const Simulator&) = delete;

  ShuffleManager& manager() { return manager_; }
  const ShuffleManager& manager() const { return manager_; }
  FunctionRegistry& registry() { return registry_; }
  std::uint64_t last_shuffle_id() const { return next_shuffle_ - 1; }
  /// Bytes exchanged with the manager so far (requests plus responses).
  std::size_t manager_traffic_bytes() const { return client_.bytes_exchanged(); }

  ShuffleOutcome run(const Topology& topo, const CostModel& cm, const std::string& template_id, const Workload& workload,
                     const RunConfig& cfg = {}) {
    topo.validate();
    WorkerList all = topo.all_workers();
    WorkerList srcs = cfg.srcs.empty() ? all : cfg.srcs;
    WorkerList dsts = cfg.dsts.empty() ? all : cfg.dsts;
    for (WorkerId s : srcs)
      if (!workload.contains(s)) throw InvalidArgument("workload has no buffer for source " + std::to_string(s));
    for (const auto& [w, _] : workload)
      if (std::find(srcs.begin(), srcs.end(), w) == srcs.end())
        throw InvalidArgument("workload assigns a buffer to non-source worker " + std::to_string(w));

    const std::uint64_t shuffle = next_shuffle_++;
    WorkerList participants = srcs;
    participants.insert(participants.end(), dsts.begin(), dsts.end());
    std::sort(participants.begin(), participants.end());
    participants.erase(std::unique(participants.begin(), participants.end()), participants.end());

    std::shared_ptr<const CompiledTemplate> compiled;
    std::vector<ShuffleCall> calls;
    for (WorkerId w : participants) {
      auto c = caches_[w].acquire(client_, w, shuffle, template_id);
      if (!compiled) compiled = c;
      ShuffleCall call{w, template_id, shuffle, srcs, dsts, {}, cfg.part_func, cfg.comb_func};
      if (auto it = workload.find(w); it != workload.end()) call.bufs = it->second;
      calls.push_back(std::move(call));
    }
    ShuffleOutcome out = run_shuffle(calls, compiled, topo, cm, cfg.plan, registry_, cfg.scheduler);
    for (WorkerId w : participants) client_.record_end(w, shuffle);
    out.start_records = manager_.count(RecordKind::Start, shuffle);
    out.end_records = manager_.count(RecordKind::End, shuffle);
    return out;
  }

  /// Runs the hierarchical template with each of its four guard settings pinned and returns the fastest.
  BestPlan exhaustive_best_plan(const Topology& topo, const CostModel& cm, const Workload& workload, RunConfig cfg = {}) {
    if (!cfg.comb_func) throw InvalidArgument("exhaustive_best_plan needs a combiner");
    static const std::vector<std::pair<std::string, std::map<std::string, bool>>> variants = {
        {"G", {{"S", false}, {"R", false}}},
        {"S,G", {{"S", true}, {"R", false}}},
        {"R,G", {{"S", false}, {"R", true}}},
        {"S,R,G", {{"S", true}, {"R", true}}},
    };
    BestPlan best;
    best.modeled_time = std::numeric_limits<double>::infinity();
    for (const auto& [trace, forced] : variants) {
      cfg.plan.forced = forced;
      double t = run(topo, cm, "network_aware", workload, cfg).modeled_time;
      best.times[trace] = t;
      if (t < best.modeled_time) {
        best.modeled_time = t;
        best.trace = trace;
      }
    }
    return best;
  }

 private:
  ShuffleManager manager_;
  InProcessClient client_;
  FunctionRegistry registry_;
  std::map<WorkerId, TemplateCache> caches_;
  std::uint64_t next_shuffle_ = 1;
};

}  // namespace teshu
