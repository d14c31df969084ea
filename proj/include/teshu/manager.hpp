#pragma once

#include <chrono>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "teshu/plan.hpp"
#include "teshu/template.hpp"

namespace teshu {

enum class RecordKind { Start, End };
enum class WorkerProgress { NotStarted, InFlight, Done };

inline const char* to_string(WorkerProgress p) {
  switch (p) {
    case WorkerProgress::NotStarted: return "NOT_STARTED";
    case WorkerProgress::InFlight: return "IN_FLIGHT";
    case WorkerProgress::Done: return "DONE";
  }
  return "?";
}

struct ShuffleRecord {
  WorkerId wId = 0;
  std::uint64_t shuffle_id = 0;
  std::string template_id;
  RecordKind kind = RecordKind::Start;
  std::int64_t timestamp_ns = 0;  // steady clock
};

/// Central controller: template store plus an append-only start/end log.
class ShuffleManager {
 public:
  ShuffleManager() = default;
  explicit ShuffleManager(std::string spill_path) : spill_path_(std::move(spill_path)) {}

  /// Parses and validates before accepting; an existing id is replaced.
  void install_template(const std::string& body) {
    Template t = parse_template(body);
    std::unique_lock lk(templates_mu_);
    templates_[t.id] = body;
  }

  bool has_template(const std::string& id) const {
    std::shared_lock lk(templates_mu_);
    return templates_.contains(id);
  }

  std::vector<std::string> template_ids() const {
    std::shared_lock lk(templates_mu_);
    std::vector<std::string> ids;
    for (const auto& [id, _] : templates_) ids.push_back(id);
    return ids;
  }

  /// Returns the serialized body and logs a START for (wId, shuffle).
  std::string get_template(WorkerId w, std::uint64_t shuffle, const std::string& template_id) {
    std::string body;
    {
      std::shared_lock lk(templates_mu_);
      auto it = templates_.find(template_id);
      if (it == templates_.end()) throw NotFound("template '" + template_id + "' is not installed");
      body = it->second;
    }
    record_start(w, shuffle, template_id);
    return body;
  }

  void record_start(WorkerId w, std::uint64_t shuffle, const std::string& template_id) {
    std::lock_guard lk(log_mu_);
    auto& st = state_[{w, shuffle}];
    if (st.started) throw ProtocolError("duplicate START for worker " + std::to_string(w) + " shuffle " + std::to_string(shuffle));
    st.started = true;
    append_locked({w, shuffle, template_id, RecordKind::Start, now()});
  }

  void record_end(WorkerId w, std::uint64_t shuffle) {
    std::lock_guard lk(log_mu_);
    auto it = state_.find({w, shuffle});
    if (it == state_.end() || !it->second.started)
      throw ProtocolError("END without START for worker " + std::to_string(w) + " shuffle " + std::to_string(shuffle));
    if (it->second.ended) throw ProtocolError("duplicate END for worker " + std::to_string(w) + " shuffle " + std::to_string(shuffle));
    it->second.ended = true;
    std::string tid;
    for (auto r = log_.rbegin(); r != log_.rend(); ++r)
      if (r->wId == w && r->shuffle_id == shuffle) {
        tid = r->template_id;
        break;
      }
    append_locked({w, shuffle, tid, RecordKind::End, now()});
  }

  /// Status of every worker with a record for `shuffle`; `expected` adds NOT_STARTED entries.
  std::map<WorkerId, WorkerProgress> progress(std::uint64_t shuffle, const WorkerList& expected = {}) const {
    std::lock_guard lk(log_mu_);
    std::map<WorkerId, WorkerProgress> out;
    for (WorkerId w : expected) out[w] = WorkerProgress::NotStarted;
    for (const auto& [key, st] : state_) {
      if (key.second != shuffle) continue;
      out[key.first] = st.ended ? WorkerProgress::Done : WorkerProgress::InFlight;
    }
    return out;
  }

  std::vector<ShuffleRecord> records() const {
    std::lock_guard lk(log_mu_);
    return log_;
  }

  std::size_t count(RecordKind kind, std::optional<std::uint64_t> shuffle = std::nullopt) const {
    std::lock_guard lk(log_mu_);
    std::size_t n = 0;
    for (const auto& r : log_)
      if (r.kind == kind && (!shuffle || r.shuffle_id == *shuffle)) ++n;
    return n;
  }

  /// Empty string when every (worker, shuffle) has one START, at most one END, and END follows START.
  std::string check_invariants(bool require_complete = true) const {
    std::lock_guard lk(log_mu_);
    std::map<std::pair<WorkerId, std::uint64_t>, std::vector<const ShuffleRecord*>> by_key;
    for (const auto& r : log_) by_key[{r.wId, r.shuffle_id}].push_back(&r);
    for (const auto& [key, rs] : by_key) {
      std::string who = "worker " + std::to_string(key.first) + " shuffle " + std::to_string(key.second);
      if (rs.front()->kind != RecordKind::Start) return who + ": first record is not START";
      if (rs.size() > 2) return who + ": more than one START/END pair";
      if (rs.size() == 2) {
        if (rs[1]->kind != RecordKind::End) return who + ": two STARTs";
        if (rs[1]->timestamp_ns < rs[0]->timestamp_ns) return who + ": END precedes START";
      } else if (require_complete) {
        return who + ": no END";
      }
    }
    return {};
  }

 private:
  struct KeyState {
    bool started = false;
    bool ended = false;
  };

  std::int64_t now() {
    auto t = std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now().time_since_epoch()).count();
    last_ts_ = std::max(last_ts_, static_cast<std::int64_t>(t));
    return last_ts_;
  }

  void append_locked(ShuffleRecord r) {
    if (!spill_path_.empty()) {
      std::ofstream out(spill_path_, std::ios::app);
      out << nlohmann::json{{"wId", r.wId},
                            {"shuffleId", r.shuffle_id},
                            {"templateId", r.template_id},
                            {"kind", r.kind == RecordKind::Start ? "START" : "END"},
                            {"ts", r.timestamp_ns}}
                 .dump()
          << "\n";
    }
    log_.push_back(std::move(r));
  }

  mutable std::shared_mutex templates_mu_;
  std::map<std::string, std::string> templates_;
  mutable std::mutex log_mu_;
  std::vector<ShuffleRecord> log_;
  std::map<std::pair<WorkerId, std::uint64_t>, KeyState> state_;
  std::int64_t last_ts_ = 0;
  std::string spill_path_;
};

// ---------------------------------------------------------------------------
// Request dispatch shared by the in-process and TCP transports.

inline nlohmann::json handle_request(ShuffleManager& mgr, const nlohmann::json& req) {
  using nlohmann::json;
  try {
    const std::string op = req.at("op").get<std::string>();
    if (op == "get_template") {
      return {{"ok", true},
              {"body", mgr.get_template(req.at("wId").get<WorkerId>(), req.at("shuffleId").get<std::uint64_t>(),
                                        req.at("templateId").get<std::string>())}};
    }
    if (op == "record_start") {
      mgr.record_start(req.at("wId").get<WorkerId>(), req.at("shuffleId").get<std::uint64_t>(),
                       req.at("templateId").get<std::string>());
      return {{"ok", true}};
    }
    if (op == "record_end") {
      mgr.record_end(req.at("wId").get<WorkerId>(), req.at("shuffleId").get<std::uint64_t>());
      return {{"ok", true}};
    }
    if (op == "progress") {
      json status = json::object();
      for (const auto& [w, p] : mgr.progress(req.at("shuffleId").get<std::uint64_t>()))
        status[std::to_string(w)] = to_string(p);
      return {{"ok", true}, {"status", status}};
    }
    if (op == "install_template") {
      mgr.install_template(req.at("body").get<std::string>());
      return {{"ok", true}};
    }
    return {{"ok", false}, {"err", "unknown_op"}};
  } catch (const NotFound&) {
    return {{"ok", false}, {"err", "not_found"}};
  } catch (const ProtocolError& e) {
    return {{"ok", false}, {"err", std::string("protocol: ") + e.what()}};
  } catch (const TemplateParseError& e) {
    return {{"ok", false}, {"err", std::string("invalid_template: ") + e.what()}};
  } catch (const nlohmann::json::exception& e) {
    return {{"ok", false}, {"err", std::string("bad_request: ") + e.what()}};
  }
}

/// Worker-side view of the manager.
class ManagerClient {
 public:
  virtual ~ManagerClient() = default;
  virtual std::string get_template(WorkerId w, std::uint64_t shuffle, const std::string& template_id) = 0;
  virtual void record_start(WorkerId w, std::uint64_t shuffle, const std::string& template_id) = 0;
  virtual void record_end(WorkerId w, std::uint64_t shuffle) = 0;
  virtual std::map<WorkerId, WorkerProgress> progress(std::uint64_t shuffle) = 0;
  virtual void install_template(const std::string& body) = 0;

  /// Fire-and-forget START for cache hits. Failures are logged, never raised.
  virtual void notify_start(WorkerId w, std::uint64_t shuffle, const std::string& template_id) {
    try {
      record_start(w, shuffle, template_id);
    } catch (const std::exception& e) {
      std::clog << "teshu: warning: start record for worker " << w << " shuffle " << shuffle << " lost: " << e.what() << "\n";
    }
  }
};

inline WorkerProgress parse_progress(const std::string& s) {
  if (s == "DONE") return WorkerProgress::Done;
  if (s == "IN_FLIGHT") return WorkerProgress::InFlight;
  return WorkerProgress::NotStarted;
}

/// Shared client logic over a request/response transport.
class JsonManagerClient : public ManagerClient {
 public:
  std::string get_template(WorkerId w, std::uint64_t shuffle, const std::string& template_id) override {
    auto r = call({{"op", "get_template"}, {"wId", w}, {"shuffleId", shuffle}, {"templateId", template_id}});
    return r.at("body").get<std::string>();
  }
  void record_start(WorkerId w, std::uint64_t shuffle, const std::string& template_id) override {
    call({{"op", "record_start"}, {"wId", w}, {"shuffleId", shuffle}, {"templateId", template_id}});
  }
  void record_end(WorkerId w, std::uint64_t shuffle) override {
    call({{"op", "record_end"}, {"wId", w}, {"shuffleId", shuffle}});
  }
  std::map<WorkerId, WorkerProgress> progress(std::uint64_t shuffle) override {
    auto r = call({{"op", "progress"}, {"shuffleId", shuffle}});
    std::map<WorkerId, WorkerProgress> out;
    for (const auto& [k, v] : r.at("status").items()) out[static_cast<WorkerId>(std::stoul(k))] = parse_progress(v.get<std::string>());
    return out;
  }
  void install_template(const std::string& body) override { call({{"op", "install_template"}, {"body", body}}); }

  std::size_t bytes_exchanged() const { return bytes_; }

 protected:
  virtual nlohmann::json roundtrip(const nlohmann::json& req) = 0;

  nlohmann::json call(const nlohmann::json& req) {
    auto resp = roundtrip(req);
    if (!resp.value("ok", false)) {
      std::string err = resp.value("err", "unknown");
      if (err == "not_found") throw NotFound("manager: template not found");
      if (err.rfind("invalid_template", 0) == 0) throw InvalidArgument("manager rejected template: " + err);
      throw ProtocolError("manager: " + err);
    }
    return resp;
  }
  void account(std::size_t n) { bytes_ += n; }

 private:
  std::size_t bytes_ = 0;
};

/// In-process transport: same JSON messages, delivered by direct call.
class InProcessClient : public JsonManagerClient {
 public:
  explicit InProcessClient(ShuffleManager& mgr) : mgr_(mgr) {}

 protected:
  nlohmann::json roundtrip(const nlohmann::json& req) override {
    auto resp = handle_request(mgr_, req);
    account(req.dump().size() + resp.dump().size());
    return resp;
  }

 private:
  ShuffleManager& mgr_;
};

/// Worker-local cache of compiled templates. The first use of a template id
/// fetches it (which logs START); later uses send a fire-and-forget START.
class TemplateCache {
 public:
  std::shared_ptr<const CompiledTemplate> acquire(ManagerClient& client, WorkerId w, std::uint64_t shuffle,
                                                  const std::string& template_id) {
    if (auto it = cache_.find(template_id); it != cache_.end()) {
      client.notify_start(w, shuffle, template_id);
      return it->second;
    }
    auto compiled = compile_template(parse_template(client.get_template(w, shuffle, template_id)));
    cache_[template_id] = compiled;
    return compiled;
  }
  bool contains(const std::string& id) const { return cache_.contains(id); }

 private:
  std::map<std::string, std::shared_ptr<const CompiledTemplate>> cache_;
};

}  // namespace teshu
