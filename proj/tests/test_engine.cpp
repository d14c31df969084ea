#include <gtest/gtest.h>

#include "oracle.hpp"
#include "teshu/algorithms.hpp"
#include "teshu/engine.hpp"

using namespace teshu;

namespace {

std::vector<ShuffleCall> make_calls(const Template& t, const WorkerList& srcs, const WorkerList& dsts, const Workload& w,
                                    std::optional<std::string> comb = "sum", const std::string& part = "default") {
  WorkerList all = srcs;
  all.insert(all.end(), dsts.begin(), dsts.end());
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  std::vector<ShuffleCall> calls;
  for (WorkerId id : all) {
    ShuffleCall c{id, t.id, 7, srcs, dsts, {}, part, comb};
    if (auto it = w.find(id); it != w.end()) c.bufs = it->second;
    calls.push_back(c);
  }
  return calls;
}

ShuffleOutcome run(const Template& t, const WorkerList& srcs, const WorkerList& dsts, const Workload& w,
                   Scheduler s = Scheduler::Deterministic, PlanOptions opts = {}, std::optional<std::string> comb = "sum") {
  return run_shuffle(make_calls(t, srcs, dsts, w, comb), t, Topology{}, CostModel{}, opts, FunctionRegistry::with_builtins(), s);
}

MessageBuffer buf(std::initializer_list<std::pair<const char*, int>> kv) {
  MessageBuffer b;
  for (auto [k, v] : kv) b.push_back(Message(k, std::int64_t{v}));
  return b;
}

}  // namespace

TEST(Engine, SendRecvIsFifoPerChannel) {
  std::string text = R"(template fifo
mode push
scope roles
sender:
  PART p bufs dsts
  LET one = SELECT p dsts
  SEND 1 bufs
  SEND 1 one
receiver:
  RECV a 0
  RECV b 0
  LET out = CONCAT a b
)";
  auto t = parse_template(text);
  Workload w{{0, buf({{"x", 1}, {"y", 2}})}};
  for (auto s : {Scheduler::Deterministic, Scheduler::Parallel}) {
    auto o = run(t, {0}, {1}, w, s);
    ASSERT_EQ(o.outputs.at(1).size(), 4u);
    EXPECT_EQ(o.outputs.at(1).messages()[0].key(), "x");
    EXPECT_EQ(o.outputs.at(1).messages()[1].key(), "y");
    EXPECT_EQ(o.transfers.size(), 2u);
    EXPECT_EQ(o.bytes_at(Level::Server), 2 * w.at(0).total_bytes());
  }
}

TEST(Engine, RecvWithoutSenderDeadlocksWithWaitGraph) {
  std::string text = R"(template stuck
mode push
scope roles
sender:
  LET x = EMPTY
receiver:
  RECV r 0
  LET out = COPY r
)";
  auto t = parse_template(text);
  for (auto s : {Scheduler::Deterministic, Scheduler::Parallel}) {
    try {
      run(t, {0}, {3}, Workload{{0, {}}}, s);
      FAIL() << "expected deadlock";
    } catch (const DeadlockError& e) {
      std::string msg = e.what();
      EXPECT_NE(msg.find("w3"), std::string::npos) << msg;
      EXPECT_NE(msg.find("RECV from w0"), std::string::npos) << msg;
    }
  }
}

TEST(Engine, FetchReturnsPublishedPartition) {
  Workload w{{0, buf({{"a", 1}, {"b", 2}, {"c", 3}})}, {1, buf({{"a", 10}})}};
  auto o = run(algorithms::vanilla_pull(), {0, 1}, {2, 3}, w);
  EXPECT_EQ(oracle::flatten(o.outputs), oracle::reduce(w, {2, 3}));
  EXPECT_EQ(o.transfers.size(), 4u);
}

TEST(Engine, DoubleFetchAndRepublishAreErrors) {
  std::string dbl = R"(template dbl
mode pull
scope roles
sender:
  PART p bufs dsts
  PUBLISH p
receiver:
  FETCH a 0
  FETCH b 0
  LET out = CONCAT a b
)";
  EXPECT_THROW(run(parse_template(dbl), {0}, {1}, Workload{{0, buf({{"a", 1}})}}), PlanError);
  std::string repub = R"(template repub
mode pull
scope roles
sender:
  PART p bufs dsts
  PUBLISH p
  PUBLISH p
receiver:
  FETCH a 0
  LET out = COPY a
)";
  EXPECT_THROW(run(parse_template(repub), {0}, {1}, Workload{{0, buf({{"a", 1}})}}), PlanError);
}

TEST(Engine, InstantiationErrors) {
  Workload w{{0, buf({{"a", 1}})}};
  auto t = algorithms::vanilla_push();
  EXPECT_THROW(run_shuffle(make_calls(t, {0}, {1}, w, "sum", "nope"), t, Topology{}, CostModel{}, {},
                           FunctionRegistry::with_builtins()),
               InstantiationError);
  EXPECT_THROW(run(t, {0}, {1}, w, Scheduler::Deterministic, {}, std::string("median")), InstantiationError);
  EXPECT_THROW(run(algorithms::network_aware(), {0}, {1}, w, Scheduler::Deterministic, {}, std::nullopt),
               InstantiationError);
}

TEST(Engine, CallValidation) {
  auto t = algorithms::vanilla_push();
  Workload w{{0, buf({{"a", 1}})}};
  auto calls = make_calls(t, {0}, {1}, w);
  calls[1].dsts = {1, 2};
  EXPECT_THROW(run_shuffle(calls, t, Topology{}, CostModel{}, {}, FunctionRegistry::with_builtins()), InvalidArgument);
  calls = make_calls(t, {0}, {1}, w);
  calls.pop_back();
  EXPECT_THROW(run_shuffle(calls, t, Topology{}, CostModel{}, {}, FunctionRegistry::with_builtins()), InvalidArgument);
  EXPECT_THROW(run(t, {0, 0}, {1}, w), InvalidArgument);
}

TEST(Engine, WithoutCombinerOutputsAreConcatenations) {
  Workload w{{0, buf({{"a", 1}, {"a", 2}})}, {1, buf({{"a", 3}})}};
  auto o = run(algorithms::vanilla_push(), {0, 1}, {2}, w, Scheduler::Deterministic, {}, std::nullopt);
  EXPECT_EQ(o.outputs.at(2).size(), 3u);
}

TEST(Engine, EmptyWorkloadCostsOnlyLatency) {
  Workload w{{0, {}}, {1, {}}};
  auto o = run(algorithms::vanilla_push(), {0, 1}, {2, 3}, w);
  EXPECT_EQ(o.payload_bytes, 0u);
  for (std::size_t l = 0; l < 4; ++l) EXPECT_EQ(o.bytes_by_level[l], 0u);
  EXPECT_GT(o.modeled_time, 0.0);
  EXPECT_DOUBLE_EQ(o.modeled_time, 2 * CostModel{}.alpha);
}

TEST(Engine, PrimitiveCoverageAcrossShippedTemplates) {
  std::set<Op> ops;
  for (const auto& [_, body] : algorithms::builtin_sources())
    for (Op op : parse_template(body).ops_used()) ops.insert(op);
  for (Op op : {Op::Send, Op::Recv, Op::Fetch, Op::Part, Op::Comb, Op::Samp}) EXPECT_TRUE(ops.contains(op)) << op_name(op);
}

TEST(Engine, CounterConservationAndSchedulerEquivalence) {
  Topology topo;
  WorkerList all = topo.all_workers();
  std::mt19937_64 rng(99);
  Workload w;
  for (WorkerId s : all) {
    MessageBuffer b;
    for (int i = 0; i < 300; ++i) b.push_back(Message("k" + std::to_string(rng() % 150), std::int64_t{1}));
    w[s] = b;
  }
  for (const auto& [id, body] : algorithms::builtin_sources()) {
    auto t = parse_template(body);
    auto a = run(t, all, all, w, Scheduler::Deterministic);
    auto b = run(t, all, all, w, Scheduler::Parallel);
    EXPECT_TRUE(a == b) << id;
    std::size_t levels = 0, transferred = 0;
    for (auto x : a.bytes_by_level) levels += x;
    for (const auto& tr : a.transfers) transferred += tr.bytes;
    EXPECT_EQ(levels, a.payload_bytes) << id;
    EXPECT_EQ(transferred + a.sampling_bytes, a.payload_bytes) << id;
    EXPECT_EQ(oracle::flatten(a.outputs), oracle::reduce(w, all)) << id;
  }
}

TEST(Engine, ScopeMembersTakeIdenticalBranches) {
  Topology topo;
  WorkerList all = topo.all_workers();
  Workload w;
  for (WorkerId s : all) {
    MessageBuffer b;
    for (int i = 0; i < 400; ++i) b.push_back(Message("k" + std::to_string(i % 40), std::int64_t{1}));
    w[s] = b;
  }
  auto o = run(algorithms::network_aware(), all, all, w);
  std::map<std::pair<std::string, WorkerId>, std::set<bool>> branches;
  for (const auto& d : o.decisions) branches[{d.label, d.scope_server}].insert(d.taken);
  EXPECT_FALSE(branches.empty());
  for (const auto& [k, v] : branches) EXPECT_EQ(v.size(), 1u) << k.first << "@" << k.second;
}

TEST(Engine, ForcedGuardsSkipSampling) {
  Topology topo;
  WorkerList all = topo.all_workers();
  Workload w;
  for (WorkerId s : all) w[s] = buf({{"a", 1}, {"b", 1}});
  PlanOptions opts;
  opts.forced = {{"S", true}, {"R", false}};
  auto o = run(algorithms::network_aware(), all, all, w, Scheduler::Deterministic, opts);
  EXPECT_EQ(o.sampling_bytes, 0u);
  EXPECT_EQ(o.trace_string(), "S,G");
  opts.keep_sampling = true;
  auto k = run(algorithms::network_aware(), all, all, w, Scheduler::Deterministic, opts);
  EXPECT_GT(k.sampling_bytes + k.control_bytes, 0u);
  EXPECT_EQ(k.trace_string(), "S,G");
}
