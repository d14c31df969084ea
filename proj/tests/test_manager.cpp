#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "conformance.hpp"
#include "teshu/algorithms.hpp"
#include "teshu/manager.hpp"
#include "teshu/simulator.hpp"
#include "teshu/wire.hpp"

using namespace teshu;

using conformance::CountingClient;

TEST(Manager, ProgressIncludesExpectedWorkers) {
  ShuffleManager mgr;
  mgr.install_template(std::string(algorithms::kVanillaPull));
  mgr.get_template(1, 5, "vanilla_pull");
  auto p = mgr.progress(5, {0, 1, 2});
  EXPECT_EQ(p.at(0), WorkerProgress::NotStarted);
  EXPECT_EQ(p.at(1), WorkerProgress::InFlight);
  EXPECT_EQ(mgr.check_invariants(false), "");
  EXPECT_NE(mgr.check_invariants(true), "");
}

TEST(Manager, ConformanceInProcess) {
  ShuffleManager mgr;
  InProcessClient client(mgr);
  EXPECT_EQ(conformance::run(client, mgr, [] {}), "");
}

TEST(Manager, ConformanceOverLoopbackTcp) {
  ShuffleManager mgr;
  wire::TcpManagerServer server(mgr);
  auto port = server.start(0);
  ASSERT_GT(port, 0);
  wire::TcpManagerClient client("127.0.0.1", port);
  EXPECT_EQ(conformance::run(client, mgr, [&] { client.flush(); }), "");
}

TEST(Manager, UnknownOpAndBadFrames) {
  ShuffleManager mgr;
  EXPECT_EQ(handle_request(mgr, {{"op", "dance"}})["err"], "unknown_op");
  EXPECT_FALSE(handle_request(mgr, {{"op", "record_end"}})["ok"].get<bool>());
  auto frame = wire::encode_frame({{"op", "progress"}, {"shuffleId", 1}});
  EXPECT_EQ(static_cast<unsigned char>(frame[0]), 0u);
  EXPECT_EQ(frame.size(), 4 + nlohmann::json({{"op", "progress"}, {"shuffleId", 1}}).dump().size());
  nlohmann::json out;
  EXPECT_EQ(wire::decode_frame(frame.substr(0, 3), out), 0u);
  EXPECT_EQ(wire::decode_frame(frame, out), frame.size());
  EXPECT_EQ(out["op"], "progress");
}

TEST(Manager, SpillFileIsJsonLines) {
  auto path = std::filesystem::temp_directory_path() / "teshu_manager_spill.jsonl";
  std::filesystem::remove(path);
  {
    ShuffleManager mgr(path.string());
    mgr.install_template(std::string(algorithms::kVanillaPush));
    mgr.get_template(0, 1, "vanilla_push");
    mgr.record_end(0, 1);
  }
  std::ifstream in(path);
  std::string a, b;
  std::getline(in, a);
  std::getline(in, b);
  EXPECT_EQ(nlohmann::json::parse(a)["kind"], "START");
  EXPECT_EQ(nlohmann::json::parse(b)["kind"], "END");
  std::filesystem::remove(path);
}

TEST(Cache, OneFetchThenCachedStarts) {
  ShuffleManager mgr;
  for (const auto& [_, body] : algorithms::builtin_sources()) mgr.install_template(body);
  InProcessClient inner(mgr);
  CountingClient client(inner);
  TemplateCache cache;
  const int K = 7;
  for (int k = 1; k <= K; ++k) {
    auto compiled = cache.acquire(client, 2, static_cast<std::uint64_t>(k), "network_aware");
    EXPECT_EQ(compiled->source.id, "network_aware");
    client.record_end(2, static_cast<std::uint64_t>(k));
  }
  EXPECT_EQ(client.gets.at(2), 1);
  EXPECT_EQ(client.notifies.at(2), K - 1);
  EXPECT_EQ(client.ends.at(2), K);
  EXPECT_EQ(mgr.count(RecordKind::Start), static_cast<std::size_t>(K));
  EXPECT_EQ(mgr.check_invariants(), "");
}

TEST(Cache, OverTcp) {
  ShuffleManager mgr;
  for (const auto& [_, body] : algorithms::builtin_sources()) mgr.install_template(body);
  wire::TcpManagerServer server(mgr);
  auto port = server.start(0);
  wire::TcpManagerClient tcp("127.0.0.1", port);
  CountingClient client(tcp);
  TemplateCache cache;
  for (std::uint64_t k = 1; k <= 5; ++k) cache.acquire(client, 9, k, "bruck");
  tcp.flush();
  for (std::uint64_t k = 1; k <= 5; ++k) client.record_end(9, k);
  EXPECT_EQ(client.gets.at(9), 1);
  EXPECT_EQ(client.notifies.at(9), 4);
  EXPECT_EQ(mgr.count(RecordKind::Start), 5u);
  EXPECT_EQ(mgr.check_invariants(), "");
}

TEST(Simulator, RecordsAndManagerTrafficIndependentOfWorkloadSize) {
  Topology topo;
  auto small = gen_workload(parse_workload_spec("uniform:n=10,keys=100,seed=1"), topo.all_workers());
  auto large = gen_workload(parse_workload_spec("uniform:n=3000,keys=100,seed=1"), topo.all_workers());
  Simulator a, b;
  for (int i = 0; i < 3; ++i) {
    auto oa = a.run(topo, CostModel{}, "vanilla_push", small);
    auto ob = b.run(topo, CostModel{}, "vanilla_push", large);
    EXPECT_EQ(oa.start_records, 20u);
    EXPECT_EQ(ob.end_records, 20u);
  }
  EXPECT_EQ(a.manager_traffic_bytes(), b.manager_traffic_bytes());
  EXPECT_EQ(a.manager().check_invariants(), "");
  EXPECT_EQ(a.manager().count(RecordKind::Start), 60u);
}
