#include <gtest/gtest.h>

#include "oracle.hpp"
#include "teshu/simulator.hpp"

using namespace teshu;

namespace {
Workload duplicate_heavy(const Topology& topo, std::uint64_t seed = 1) {
  return gen_workload(parse_workload_spec("uniform:n=50000,keys=20000,seed=" + std::to_string(seed)), topo.all_workers());
}
Workload distinct_keys(const Topology& topo) {
  Workload w;
  for (WorkerId s : topo.all_workers()) {
    MessageBuffer b;
    for (int i = 0; i < 2000; ++i) b.push_back(Message("w" + std::to_string(s) + "_" + std::to_string(i), std::int64_t{1}));
    w[s] = b;
  }
  return w;
}
}  // namespace

TEST(Simulator, EmptyWorkloadOnlyLatency) {
  Topology topo;
  Workload w;
  for (WorkerId s : topo.all_workers()) w[s] = {};
  Simulator sim;
  auto o = sim.run(topo, CostModel{}, "vanilla_push", w);
  EXPECT_EQ(o.payload_bytes, 0u);
  EXPECT_EQ(o.sampling_bytes, 0u);
  // Nineteen non-self sends per worker, all in one phase.
  EXPECT_NEAR(o.modeled_time, 19 * CostModel{}.alpha, 1e-12);
}

TEST(Simulator, RejectsIncompleteWorkload) {
  Topology topo;
  Simulator sim;
  EXPECT_THROW(sim.run(topo, CostModel{}, "vanilla_push", Workload{{0, {}}}), InvalidArgument);
  Workload w;
  for (WorkerId s : topo.all_workers()) w[s] = {};
  EXPECT_THROW(sim.run(topo, CostModel{}, "no_such_template", w), NotFound);
}

TEST(Simulator, PlanErrorsNameTheWorker) {
  Topology topo;
  Simulator sim;
  sim.registry().add_partition({"broken", [](const Message&, std::span<const WorkerId> d) { return d.size() + 1; }});
  Workload w;
  for (WorkerId s : topo.all_workers()) w[s] = MessageBuffer{Message("a", std::int64_t{1})};
  RunConfig cfg;
  cfg.part_func = "broken";
  try {
    sim.run(topo, CostModel{}, "vanilla_push", w, cfg);
    FAIL();
  } catch (const PlanError& e) {
    EXPECT_NE(std::string(e.what()).find("worker 0"), std::string::npos) << e.what();
  }
}

TEST(Simulator, RepeatedRunsAreBitIdentical) {
  Topology topo;
  topo.oversubscription = 4;
  auto w = gen_workload(parse_workload_spec("zipf:n=3000,keys=4000,s=1.1,seed=3"), topo.all_workers());
  Simulator a, b;
  for (const auto& id : {"vanilla_push", "network_aware", "bruck"}) {
    auto oa = a.run(topo, CostModel{}, id, w);
    auto ob = b.run(topo, CostModel{}, id, w);
    EXPECT_TRUE(oa == ob) << id;
  }
  Simulator c;
  RunConfig par;
  par.scheduler = Scheduler::Parallel;
  Simulator d;
  EXPECT_TRUE(c.run(topo, CostModel{}, "network_aware", w) == d.run(topo, CostModel{}, "network_aware", w, par));
}

TEST(Simulator, NetworkAwareCutsGlobalBytesAtTenToOne) {
  Topology topo;
  topo.oversubscription = 10;
  auto w = duplicate_heavy(topo);
  Simulator sim;
  auto v = sim.run(topo, CostModel{}, "vanilla_push", w);
  auto n = sim.run(topo, CostModel{}, "network_aware", w);
  EXPECT_LE(n.bytes_at(Level::Global), 0.4 * static_cast<double>(v.bytes_at(Level::Global)));
  EXPECT_EQ(n.trace_string(), "S,R,G");
  EXPECT_EQ(oracle::flatten(n.outputs), oracle::flatten(v.outputs));
}

TEST(Simulator, NoDuplicationMeansGlobalOnly) {
  Topology topo;
  topo.oversubscription = 10;
  auto w = distinct_keys(topo);
  Simulator sim;
  EXPECT_EQ(sim.run(topo, CostModel{}, "network_aware", w).trace_string(), "G");
  EXPECT_EQ(sim.exhaustive_best_plan(topo, CostModel{}, w).trace, "G");
}

TEST(Simulator, ExhaustiveBestPlanOnDuplicateHeavyData) {
  Topology topo;
  auto w = duplicate_heavy(topo);
  Simulator sim;
  topo.oversubscription = 1;
  EXPECT_EQ(sim.exhaustive_best_plan(topo, CostModel{}, w).trace, "S,G");
  topo.oversubscription = 10;
  auto best = sim.exhaustive_best_plan(topo, CostModel{}, w);
  EXPECT_EQ(best.trace, "S,R,G");
  EXPECT_EQ(best.times.size(), 4u);
  for (const auto& [_, t] : best.times) EXPECT_GE(t, best.modeled_time);
}

TEST(Simulator, CrossRackBytesNeverExceedVanilla) {
  Topology topo;
  for (const char* spec : {"uniform:n=2000,keys=500,seed=2", "zipf:n=2000,keys=5000,s=1.0,seed=2", "letters:n=500,seed=2"}) {
    auto w = gen_workload(parse_workload_spec(spec), topo.all_workers());
    for (double os : {1.0, 4.0, 10.0}) {
      topo.oversubscription = os;
      Simulator sim;
      auto v = sim.run(topo, CostModel{}, "vanilla_push", w);
      auto n = sim.run(topo, CostModel{}, "network_aware", w);
      EXPECT_LE(n.bytes_at(Level::Global), v.bytes_at(Level::Global)) << spec << " " << os;
    }
  }
}

TEST(Simulator, FailuresNeverSpeedUpVanilla) {
  Topology topo;
  topo.oversubscription = 4;
  auto w = gen_workload(parse_workload_spec("uniform:n=2000,keys=3000,seed=5"), topo.all_workers());
  Simulator sim;
  double base = sim.run(topo, CostModel{}, "vanilla_push", w).modeled_time;
  for (std::uint64_t s = 0; s < 5; ++s) {
    auto failed = inject_spine_failures(topo, 3, s);
    EXPECT_GE(sim.run(failed, CostModel{}, "vanilla_push", w).modeled_time, base);
  }
}
