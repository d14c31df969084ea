#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "teshu/core.hpp"

namespace teshu {

enum class Level { Self = 0, Server = 1, Rack = 2, Global = 3 };

inline const char* to_string(Level l) {
  switch (l) {
    case Level::Self: return "SELF";
    case Level::Server: return "SERVER";
    case Level::Rack: return "RACK";
    case Level::Global: return "GLOBAL";
  }
  return "?";
}

/// Leaf-spine cluster layout: workers densely packed onto servers, servers onto racks.
struct Topology {
  std::uint32_t racks = 2;
  std::uint32_t servers_per_rack = 5;
  std::uint32_t workers_per_server = 2;
  double oversubscription = 1.0;
  double nic_bandwidth = 1.25e9;  // bytes/s (10 Gbps)
  std::uint32_t spine_links_per_rack = 4;
  std::set<std::pair<RackId, std::uint32_t>> failed_spine_links;

  std::uint32_t num_servers() const { return racks * servers_per_rack; }
  std::uint32_t num_workers() const { return num_servers() * workers_per_server; }

  void validate() const {
    if (racks < 1 || servers_per_rack < 1 || workers_per_server < 1 || spine_links_per_rack < 1)
      throw InvalidArgument("topology counts must be >= 1");
    if (!(oversubscription >= 1.0)) throw InvalidArgument("oversubscription must be >= 1");
    if (!(nic_bandwidth > 0.0)) throw InvalidArgument("nic_bandwidth must be > 0");
    for (RackId r = 0; r < racks; ++r)
      if (failures_on(r) >= spine_links_per_rack)
        throw InvalidArgument("rack " + std::to_string(r) + " has no healthy spine link");
    for (const auto& [r, l] : failed_spine_links)
      if (r >= racks || l >= spine_links_per_rack) throw InvalidArgument("failed link out of range");
  }

  void check_worker(WorkerId w) const {
    if (w >= num_workers()) throw InvalidArgument("unknown worker id " + std::to_string(w));
  }
  ServerId server_of(WorkerId w) const {
    check_worker(w);
    return w / workers_per_server;
  }
  RackId rack_of(WorkerId w) const { return server_of(w) / servers_per_rack; }

  std::uint32_t failures_on(RackId r) const {
    return static_cast<std::uint32_t>(std::count_if(failed_spine_links.begin(), failed_spine_links.end(),
                                                    [r](const auto& f) { return f.first == r; }));
  }
  // Healthy fraction of the worst rack; that rack bounds every cross-rack transfer.
  double healthy_fraction() const {
    std::uint32_t worst = 0;
    for (RackId r = 0; r < racks; ++r) worst = std::max(worst, failures_on(r));
    return static_cast<double>(spine_links_per_rack - worst) / spine_links_per_rack;
  }

  WorkerList all_workers() const {
    WorkerList out(num_workers());
    for (WorkerId w = 0; w < out.size(); ++w) out[w] = w;
    return out;
  }
};

inline Level level_of(WorkerId a, WorkerId b, const Topology& topo) {
  topo.check_worker(a);
  topo.check_worker(b);
  if (a == b) return Level::Self;
  if (topo.server_of(a) == topo.server_of(b)) return Level::Server;
  if (topo.rack_of(a) == topo.rack_of(b)) return Level::Rack;
  return Level::Global;
}

/// Alpha-beta cost model. Bandwidths derive from the topology they are queried against.
struct CostModel {
  double alpha = 10e-6;              // s per transfer
  double combine_cost = 0.2e-9;      // s per byte fed to a combine
  double intra_server_factor = 10.0;  // intra-server bw = factor * nic

  double bandwidth(Level level, const Topology& topo) const {
    switch (level) {
      case Level::Self:
      case Level::Server: return topo.nic_bandwidth * intra_server_factor;
      case Level::Rack: return topo.nic_bandwidth;
      case Level::Global: return topo.nic_bandwidth * topo.healthy_fraction() / topo.oversubscription;
    }
    return topo.nic_bandwidth;
  }
};

inline double transfer_time(double bytes, Level level, const Topology& topo, const CostModel& cm) {
  if (level == Level::Self) return 0.0;
  return cm.alpha + bytes / cm.bandwidth(level, topo);
}

namespace detail {

inline WorkerList neighbors_within(WorkerId w, std::span<const WorkerId> scope, const Topology& topo,
                                   Level max_level) {
  topo.check_worker(w);
  if (std::find(scope.begin(), scope.end(), w) == scope.end())
    throw InvalidArgument("worker " + std::to_string(w) + " is not in the neighbor scope");
  WorkerList out;
  for (WorkerId x : scope)
    if (level_of(w, x, topo) <= max_level) out.push_back(x);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace detail

inline WorkerList neighbors_same_server(WorkerId w, std::span<const WorkerId> scope, const Topology& topo) {
  return detail::neighbors_within(w, scope, topo, Level::Server);
}

inline WorkerList neighbors_same_rack(WorkerId w, std::span<const WorkerId> scope, const Topology& topo) {
  return detail::neighbors_within(w, scope, topo, Level::Rack);
}

/// Fails `k` spine links chosen uniformly among the layouts that leave every rack connected.
inline Topology inject_spine_failures(const Topology& topo, std::uint32_t k, std::uint64_t seed) {
  const std::uint32_t capacity = topo.racks * (topo.spine_links_per_rack - 1);
  std::uint32_t already = static_cast<std::uint32_t>(topo.failed_spine_links.size());
  if (k + already > capacity)
    throw InvalidArgument("cannot fail " + std::to_string(k) + " spine links without disconnecting a rack");
  std::vector<std::pair<RackId, std::uint32_t>> healthy;
  for (RackId r = 0; r < topo.racks; ++r)
    for (std::uint32_t l = 0; l < topo.spine_links_per_rack; ++l)
      if (!topo.failed_spine_links.contains({r, l})) healthy.emplace_back(r, l);

  std::mt19937_64 rng(splitmix64(seed ^ 0x5a17e5ULL));
  for (;;) {
    Topology out = topo;
    auto pool = healthy;
    // Partial Fisher-Yates with an explicit modulo draw so the choice is libstdc++-independent.
    for (std::uint32_t i = 0; i < k; ++i) {
      std::size_t j = i + static_cast<std::size_t>(rng() % (pool.size() - i));
      std::swap(pool[i], pool[j]);
      out.failed_spine_links.insert(pool[i]);
    }
    bool connected = true;
    for (RackId r = 0; r < topo.racks; ++r)
      if (out.failures_on(r) >= topo.spine_links_per_rack) connected = false;
    if (connected) return out;
  }
}

// JSON shape:
// {"racks":2,"servers_per_rack":5,"workers_per_server":2,"oversubscription":10,
//  "nic_bandwidth":1.25e9,"spine_links_per_rack":4,"failed_links":[[0,1]]}
inline Topology topology_from_json(const nlohmann::json& j) {
  Topology t;
  t.racks = j.value("racks", t.racks);
  t.servers_per_rack = j.value("servers_per_rack", t.servers_per_rack);
  t.workers_per_server = j.value("workers_per_server", t.workers_per_server);
  t.oversubscription = j.value("oversubscription", t.oversubscription);
  t.nic_bandwidth = j.value("nic_bandwidth", t.nic_bandwidth);
  t.spine_links_per_rack = j.value("spine_links_per_rack", t.spine_links_per_rack);
  if (j.contains("failed_links"))
    for (const auto& f : j.at("failed_links"))
      t.failed_spine_links.insert({f.at(0).get<RackId>(), f.at(1).get<std::uint32_t>()});
  t.validate();
  return t;
}

inline nlohmann::json topology_to_json(const Topology& t) {
  nlohmann::json failed = nlohmann::json::array();
  for (const auto& [r, l] : t.failed_spine_links) failed.push_back({r, l});
  return {{"racks", t.racks},
          {"servers_per_rack", t.servers_per_rack},
          {"workers_per_server", t.workers_per_server},
          {"oversubscription", t.oversubscription},
          {"nic_bandwidth", t.nic_bandwidth},
          {"spine_links_per_rack", t.spine_links_per_rack},
          {"failed_links", failed}};
}

inline Topology load_topology(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open topology file " + path);
  try {
    return topology_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument("bad topology file " + path + ": " + e.what());
  }
}

}  // namespace teshu
