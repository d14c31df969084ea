#pragma once

#include <array>
#include <condition_variable>
#include <deque>
#include <exception>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>
#include <tuple>
#include <vector>

#include "teshu/plan.hpp"

namespace teshu {

enum class Scheduler { Deterministic, Parallel };

inline constexpr std::size_t kControlMessageBytes = 16;

struct Transfer {
  WorkerId src = 0;
  WorkerId dst = 0;
  std::size_t bytes = 0;
  friend bool operator==(const Transfer&, const Transfer&) = default;
};

struct Decision {
  std::string label;
  bool taken = false;
  WorkerId scope_server = 0;
  WorkerId worker = 0;
  friend bool operator==(const Decision&, const Decision&) = default;
};

struct SampleSummary {
  Level level = Level::Global;
  WorkerId server = 0;
  std::size_t scope_size = 0;
  std::size_t groups = 1;
  std::size_t group = 0;
  std::size_t sample_bytes = 0;
  double r_hat = 1.0;
  double eff = 0.0;
  double cost = 0.0;
  friend bool operator==(const SampleSummary&, const SampleSummary&) = default;
};

struct ShuffleOutcome {
  std::map<WorkerId, MessageBuffer> outputs;
  // Indexed by Level; Self counts bytes a worker sent to itself.
  std::array<std::size_t, 4> bytes_by_level{};
  std::size_t payload_bytes = 0;   // every SEND/FETCH and sample transfer
  std::size_t sampling_bytes = 0;  // subset of payload_bytes moved by SAMP
  std::size_t control_bytes = 0;   // EFF/COST broadcasts
  std::vector<Transfer> transfers;  // data SEND/FETCH, sender-major order
  double modeled_time = 0.0;
  std::map<std::tuple<int, std::size_t, std::size_t>, double> phase_times;
  std::vector<std::string> decision_trace;
  std::vector<Decision> decisions;
  std::vector<SampleSummary> samples;
  std::size_t start_records = 0;
  std::size_t end_records = 0;

  std::size_t bytes_at(Level l) const { return bytes_by_level[static_cast<std::size_t>(l)]; }
  std::string trace_string() const {
    std::string s;
    for (const auto& t : decision_trace) s += (s.empty() ? "" : ",") + t;
    return s;
  }
  friend bool operator==(const ShuffleOutcome&, const ShuffleOutcome&) = default;
};

namespace detail {

enum class ChannelKind { Data = 0, Sample = 1, Control = 2 };

struct ChannelKey {
  WorkerId src;
  WorkerId dst;
  ChannelKind kind;
  std::size_t stage;
  friend auto operator<=>(const ChannelKey&, const ChannelKey&) = default;
};

struct Packet {
  MessageBuffer buf;
  double a = 0.0;
  double b = 0.0;
  std::size_t meta = 0;
};

struct WaitFor {
  std::vector<ChannelKey> keys;
  std::optional<std::pair<WorkerId, WorkerId>> slot;
  std::string what;
};

struct Aborted : std::exception {};

/// Shared state of one shuffle: FIFO channels, pull slots, and scheduling bookkeeping.
class World {
 public:
  explicit World(std::size_t workers) : blocked_(workers), done_(workers, false) {}

  void push(const ChannelKey& key, Packet p) {
    {
      std::lock_guard lk(mu_);
      channels_[key].push_back(std::move(p));
    }
    cv_.notify_all();
  }
  std::optional<Packet> try_pop(const ChannelKey& key) {
    std::lock_guard lk(mu_);
    auto it = channels_.find(key);
    if (it == channels_.end() || it->second.empty()) return std::nullopt;
    Packet p = std::move(it->second.front());
    it->second.pop_front();
    return p;
  }
  void publish(WorkerId src, WorkerId dst, MessageBuffer buf) {
    {
      std::lock_guard lk(mu_);
      auto& s = slots_[{src, dst}];
      if (s.published) throw PlanError("worker " + std::to_string(src) + " republished partition for " + std::to_string(dst));
      s.published = true;
      s.buf = std::move(buf);
    }
    cv_.notify_all();
  }
  std::optional<MessageBuffer> try_fetch(WorkerId src, WorkerId dst) {
    std::lock_guard lk(mu_);
    auto& s = slots_[{src, dst}];
    if (s.fetched) throw PlanError("worker " + std::to_string(dst) + " fetched from " + std::to_string(src) + " twice");
    if (!s.published) return std::nullopt;
    s.fetched = true;
    return std::move(s.buf);
  }

  // Parallel mode only: park `self` until `w` is satisfiable. Throws on deadlock or abort.
  void wait(std::size_t self, const WaitFor& w) {
    std::unique_lock lk(mu_);
    for (;;) {
      if (aborted_) throw Aborted{};
      if (ready_locked(w)) {
        blocked_[self].reset();
        return;
      }
      blocked_[self] = w;
      if (deadlocked_locked()) {
        abort_locked(std::make_exception_ptr(DeadlockError(describe_locked())));
        throw Aborted{};
      }
      cv_.wait(lk);
    }
  }
  void mark_done(std::size_t self) {
    std::lock_guard lk(mu_);
    done_[self] = true;
    blocked_[self].reset();
    if (!aborted_ && deadlocked_locked()) abort_locked(std::make_exception_ptr(DeadlockError(describe_locked())));
    cv_.notify_all();
  }
  void abort(std::exception_ptr e) {
    std::lock_guard lk(mu_);
    abort_locked(std::move(e));
  }
  std::exception_ptr error() {
    std::lock_guard lk(mu_);
    return error_;
  }

  bool ready(const WaitFor& w) {
    std::lock_guard lk(mu_);
    return ready_locked(w);
  }

  void set_names(std::vector<WorkerId> names) { names_ = std::move(names); }

  // Deterministic mode: every live worker is known to be blocked.
  std::string describe_blocked(const std::vector<std::optional<WaitFor>>& waits) {
    std::lock_guard lk(mu_);
    blocked_ = waits;
    return describe_locked();
  }

 private:
  struct Slot {
    bool published = false;
    bool fetched = false;
    MessageBuffer buf;
  };

  bool ready_locked(const WaitFor& w) const {
    for (const auto& k : w.keys) {
      auto it = channels_.find(k);
      if (it == channels_.end() || it->second.empty()) return false;
    }
    if (w.slot) {
      auto it = slots_.find(*w.slot);
      if (it == slots_.end() || !it->second.published) return false;
    }
    return true;
  }
  bool deadlocked_locked() const {
    bool any_blocked = false;
    for (std::size_t i = 0; i < done_.size(); ++i) {
      if (done_[i]) continue;
      if (!blocked_[i] || ready_locked(*blocked_[i])) return false;
      any_blocked = true;
    }
    return any_blocked;
  }
  std::string describe_locked() const {
    std::ostringstream os;
    os << "shuffle deadlock; wait graph:";
    for (std::size_t i = 0; i < blocked_.size(); ++i)
      if (blocked_[i]) os << " [w" << (i < names_.size() ? names_[i] : i) << " " << blocked_[i]->what << "]";
    return os.str();
  }
  void abort_locked(std::exception_ptr e) {
    if (!aborted_) {
      aborted_ = true;
      error_ = std::move(e);
    }
    cv_.notify_all();
  }

  std::mutex mu_;
  std::condition_variable cv_;
  std::map<ChannelKey, std::deque<Packet>> channels_;
  std::map<std::pair<WorkerId, WorkerId>, Slot> slots_;
  std::vector<std::optional<WaitFor>> blocked_;
  std::vector<bool> done_;
  std::vector<WorkerId> names_;
  bool aborted_ = false;
  std::exception_ptr error_;
};

struct StepResult {
  enum class Status { Progress, Blocked, Done } status;
  WaitFor wait;
};

struct LoopFrame {
  std::size_t begin;
  std::vector<Value> items;
  std::size_t idx;
  std::string var;
};

// Per-worker interpreter over a ShufflePlan. One instruction per step().
class WorkerTask {
 public:
  WorkerTask(ShufflePlan plan, const Topology& topo, const CostModel& cm)
      : plan_(std::move(plan)), topo_(topo), cm_(cm), self_(plan_.call.wId) {
    env_["bufs"] = plan_.call.bufs;
    env_["srcs"] = plan_.call.srcs;
    env_["dsts"] = plan_.call.dsts;
    env_["wId"] = self_;
    program_ = plan_.runs_sender ? 0 : (plan_.runs_receiver ? 1 : 2);
  }

  WorkerId id() const { return self_; }
  bool runs_receiver() const { return plan_.runs_receiver; }

  StepResult step(World& world) {
    for (;;) {
      if (program_ >= 2) return {StepResult::Status::Done, {}};
      const auto& code = program().code;
      if (pc_ < code.size()) break;
      end_phase(-1);
      program_ = (program_ == 0 && plan_.runs_receiver) ? 1 : 2;
      pc_ = 0;
      occurrences_.clear();
    }
    const auto& ins = program().code[pc_];
    try {
      if (auto wait = execute(ins, world)) return {StepResult::Status::Blocked, std::move(*wait)};
    } catch (const PlanError& e) {
      throw PlanError("worker " + std::to_string(self_) + " line " + std::to_string(ins.line) + ": " + e.what());
    } catch (const std::bad_variant_access&) {
      throw PlanError("worker " + std::to_string(self_) + " line " + std::to_string(ins.line) + ": operand type mismatch");
    }
    return {StepResult::Status::Progress, {}};
  }

  // Results, valid once step() returns Done.
  MessageBuffer output() const {
    auto it = env_.find("out");
    if (it == env_.end()) throw PlanError("receiver program of worker " + std::to_string(self_) + " never assigned `out`");
    return std::get<MessageBuffer>(it->second);
  }

  std::array<std::size_t, 4> bytes_by_level{};
  std::size_t payload_bytes = 0;
  std::size_t sampling_bytes = 0;
  std::size_t control_bytes = 0;
  std::vector<Transfer> transfers;
  std::map<std::tuple<int, std::size_t, std::size_t>, double> phases;
  std::vector<Decision> decisions;
  std::vector<SampleSummary> samples;

 private:
  const CompiledProgram& program() const {
    return program_ == 0 ? plan_.tmpl->sender : plan_.tmpl->receiver;
  }

  void end_phase(long pc) {
    auto key_pc = static_cast<std::size_t>(pc < 0 ? program().code.size() : static_cast<std::size_t>(pc));
    auto occ = occurrences_[key_pc]++;
    phases[{program_, key_pc, occ}] += phase_time_;
    phase_time_ = 0.0;
  }

  // ---- operand access
  const Value& lookup(const std::string& name) const {
    auto it = env_.find(name);
    if (it == env_.end()) throw PlanError("undefined variable '" + name + "'");
    return it->second;
  }
  const Value& param(const std::string& name) const {
    auto it = plan_.params.find(name);
    if (it == plan_.params.end()) throw PlanError("unresolved parameter $" + name);
    return it->second;
  }
  Value eval(const Operand& o) const {
    switch (o.kind) {
      case Operand::Kind::Name: return lookup(o.name);
      case Operand::Kind::Param: return param(o.name);
      case Operand::Kind::Number: return o.number;
      case Operand::Kind::Index: {
        const auto& m = std::get<BufferMap>(lookup(o.name));
        auto it = m.find(eval_worker(Operand::parse(o.sub)));
        return it == m.end() ? MessageBuffer{} : it->second;
      }
      case Operand::Kind::Field: {
        const auto& r = std::get<Record>(lookup(o.name));
        if (o.sub == "to") return r.to;
        if (o.sub == "from") return r.from;
        return r.sel;
      }
    }
    return std::monostate{};
  }
  WorkerId eval_worker(const Operand& o) const {
    Value v = eval(o);
    if (auto* w = std::get_if<WorkerId>(&v)) return *w;
    if (auto* d = std::get_if<double>(&v)) return static_cast<WorkerId>(*d);
    throw PlanError("operand is not a worker");
  }
  WorkerList eval_list(const Operand& o) const { return std::get<WorkerList>(eval(o)); }
  double eval_number(const Operand& o) const { return std::get<double>(eval(o)); }
  // Direct reference when the operand names a stored buffer; nullptr otherwise.
  const MessageBuffer* buffer_ref(const Operand& o) const {
    if (o.kind == Operand::Kind::Name) {
      auto it = env_.find(o.name);
      if (it != env_.end()) return std::get_if<MessageBuffer>(&it->second);
    } else if (o.kind == Operand::Kind::Index) {
      auto it = env_.find(o.name);
      if (it == env_.end()) return nullptr;
      if (const auto* m = std::get_if<BufferMap>(&it->second)) {
        auto b = m->find(eval_worker(Operand::parse(o.sub)));
        if (b != m->end()) return &b->second;
      }
    }
    return nullptr;
  }
  // Buffers and maps both flatten to one buffer (maps in ascending worker order).
  MessageBuffer eval_buffer(const Operand& o) const {
    Value v = eval(o);
    if (auto* b = std::get_if<MessageBuffer>(&v)) return std::move(*b);
    if (auto* m = std::get_if<BufferMap>(&v)) {
      MessageBuffer out;
      for (auto& [w, b] : *m) out.append(std::move(b));
      return out;
    }
    if (std::holds_alternative<std::monostate>(v)) return {};
    throw PlanError("operand is not a buffer");
  }
  void assign(const Operand& lv, Value v) {
    if (lv.kind == Operand::Kind::Index) {
      auto& slot = env_[lv.name];
      if (!std::holds_alternative<BufferMap>(slot)) slot = BufferMap{};
      std::get<BufferMap>(slot)[eval_worker(Operand::parse(lv.sub))] = std::get<MessageBuffer>(std::move(v));
    } else {
      env_[lv.name] = std::move(v);
    }
  }

  void charge_transfer(WorkerId dst, std::size_t bytes, bool sampling) {
    Level l = level_of(self_, dst, topo_);
    bytes_by_level[static_cast<std::size_t>(l)] += bytes;
    payload_bytes += bytes;
    if (sampling) sampling_bytes += bytes;
    phase_time_ += transfer_time(static_cast<double>(bytes), l, topo_, cm_);
  }

  static Level next_level_after(Level l, const Topology& topo) {
    if (l == Level::Server && topo.servers_per_rack > 1) return Level::Rack;
    return Level::Global;
  }

  std::optional<WaitFor> execute(const CompiledInstr& ins, World& world) {
    const auto shuffle = plan_.call.shuffle_id;
    switch (ins.op) {
      case ExecOp::Comb: {
        const MessageBuffer* ref = buffer_ref(ins.operands[0]);
        MessageBuffer in;
        if (!ref) {
          in = eval_buffer(ins.operands[0]);
          ref = &in;
        }
        if (plan_.comb) {
          phase_time_ += cm_.combine_cost * static_cast<double>(ref->total_bytes());
          env_[ins.words[0]] = combine_buffer(*ref, *plan_.comb);
        } else {
          env_[ins.words[0]] = ref == &in ? std::move(in) : MessageBuffer(*ref);
        }
        break;
      }
      case ExecOp::Part: {
        const MessageBuffer* ref = buffer_ref(ins.operands[0]);
        MessageBuffer in;
        if (!ref) {
          in = eval_buffer(ins.operands[0]);
          ref = &in;
        }
        WorkerList to = eval_list(ins.operands[1]);
        env_[ins.words[0]] = to.empty() ? BufferMap{} : partition_buffer(*ref, to, *plan_.part);
        break;
      }
      case ExecOp::Publish: {
        const auto& parts = std::get<BufferMap>(lookup(ins.operands[0].name));
        for (WorkerId d : plan_.call.dsts) {
          auto it = parts.find(d);
          world.publish(self_, d, it == parts.end() ? MessageBuffer{} : it->second);
        }
        break;
      }
      case ExecOp::Send: {
        WorkerId dst = eval_worker(ins.operands[0]);
        topo_.check_worker(dst);
        const MessageBuffer* ref = buffer_ref(ins.operands[1]);
        MessageBuffer buf = ref ? *ref : eval_buffer(ins.operands[1]);
        charge_transfer(dst, buf.total_bytes(), false);
        transfers.push_back({self_, dst, buf.total_bytes()});
        world.push({self_, dst, ChannelKind::Data, 0}, Packet{std::move(buf)});
        break;
      }
      case ExecOp::Recv: {
        WorkerId src = eval_worker(ins.operands[1]);
        ChannelKey key{src, self_, ChannelKind::Data, 0};
        auto p = world.try_pop(key);
        if (!p) return WaitFor{{key}, std::nullopt, "RECV from w" + std::to_string(src) + " (line " + std::to_string(ins.line) + ")"};
        assign(ins.operands[0], std::move(p->buf));
        break;
      }
      case ExecOp::Fetch: {
        WorkerId src = eval_worker(ins.operands[1]);
        auto b = world.try_fetch(src, self_);
        if (!b)
          return WaitFor{{}, std::make_pair(src, self_), "FETCH from w" + std::to_string(src) + " (line " + std::to_string(ins.line) + ")"};
        // Pull transfers are charged to the fetching worker.
        Level l = level_of(src, self_, topo_);
        bytes_by_level[static_cast<std::size_t>(l)] += b->total_bytes();
        payload_bytes += b->total_bytes();
        phase_time_ += transfer_time(static_cast<double>(b->total_bytes()), l, topo_, cm_);
        transfers.push_back({src, self_, b->total_bytes()});
        assign(ins.operands[0], std::move(*b));
        break;
      }
      case ExecOp::Samp: {
        SampleHandle h;
        h.scope = eval_list(ins.operands[1]);
        if (std::find(h.scope.begin(), h.scope.end(), self_) == h.scope.end())
          throw PlanError("SAMP scope does not contain the calling worker");
        h.server = *std::min_element(h.scope.begin(), h.scope.end());
        h.stage = pc_;
        if (!plan_.options.forced.empty() && !plan_.options.keep_sampling) {
          h.bypassed = true;
        } else {
          MessageBuffer local = eval_buffer(ins.operands[0]);
          h.groups = plan_.options.sampling.group_count();
          h.group = choose_group(plan_.options.sampling, shuffle, pc_, h.groups);
          MessageBuffer piece = extract_group(local, h.groups, h.group);
          charge_transfer(h.server, piece.total_bytes(), true);
          world.push({self_, h.server, ChannelKind::Sample, pc_}, Packet{std::move(piece), 0, 0, local.total_bytes()});
        }
        env_[ins.words[0]] = std::move(h);
        break;
      }
      case ExecOp::SampGather: {
        auto& h = std::get<SampleHandle>(env_.at(ins.words[0]));
        if (h.bypassed || h.server != self_) break;
        WaitFor w;
        for (WorkerId m : h.scope) w.keys.push_back({m, self_, ChannelKind::Sample, h.stage});
        if (!world.ready(w)) {
          w.what = "SAMP gather (line " + std::to_string(ins.line) + ")";
          return w;
        }
        for (const auto& k : w.keys) {
          auto p = world.try_pop(k);
          h.bytes_local.push_back(p->meta);
          h.sample.append(std::move(p->buf));
        }
        if (plan_.comb) {
          phase_time_ += cm_.combine_cost * static_cast<double>(h.sample.total_bytes());
          h.r_hat = estimate_reduction(h.sample, *plan_.comb);
        }
        break;
      }
      case ExecOp::EffCost: {
        const auto& h = std::get<SampleHandle>(lookup(ins.words[2]));
        scope_of_[ins.words[0]] = h.server;
        if (h.bypassed) {
          env_[ins.words[0]] = 0.0;
          env_[ins.words[1]] = 0.0;
          break;
        }
        if (h.server == self_) {
          EffCost ec = compute_eff_cost(h.r_hat, ins.level, next_level_after(ins.level, topo_), h.bytes_local, topo_, cm_);
          samples.push_back({ins.level, self_, h.scope.size(), h.groups, h.group, h.sample.total_bytes(), h.r_hat, ec.eff, ec.cost});
          for (WorkerId m : h.scope) {
            if (m == self_) continue;
            control_bytes += kControlMessageBytes;
            phase_time_ += transfer_time(kControlMessageBytes, level_of(self_, m, topo_), topo_, cm_);
            world.push({self_, m, ChannelKind::Control, h.stage}, Packet{{}, ec.eff, ec.cost, 0});
          }
          env_[ins.words[0]] = ec.eff;
          env_[ins.words[1]] = ec.cost;
        } else {
          ChannelKey key{h.server, self_, ChannelKind::Control, h.stage};
          auto p = world.try_pop(key);
          if (!p) return WaitFor{{key}, std::nullopt, "EFF_COST broadcast from w" + std::to_string(h.server) + " (line " + std::to_string(ins.line) + ")"};
          env_[ins.words[0]] = p->a;
          env_[ins.words[1]] = p->b;
        }
        break;
      }
      case ExecOp::FindNbr: {
        const auto& table = program_ == 0 ? plan_.sender_nbrs : plan_.receiver_nbrs;
        env_[ins.words[0]] = table.at(pc_);
        break;
      }
      case ExecOp::If: {
        bool taken;
        auto forced = ins.label.empty() ? plan_.options.forced.end() : plan_.options.forced.find(ins.label);
        if (forced != plan_.options.forced.end()) {
          taken = forced->second;
        } else {
          double a = eval_number(ins.operands[0]), b = eval_number(ins.operands[1]);
          taken = ins.greater ? a > b : a < b;
        }
        if (!ins.label.empty()) {
          auto sc = scope_of_.find(ins.operands[0].name);
          decisions.push_back({ins.label, taken, sc == scope_of_.end() ? self_ : sc->second, self_});
        }
        if (!taken) {
          pc_ = ins.jump;
          return std::nullopt;
        }
        break;
      }
      case ExecOp::Jump:
        pc_ = ins.jump;
        return std::nullopt;
      case ExecOp::ForBegin: {
        Value v = eval(ins.operands[0]);
        std::vector<Value> items;
        if (auto* l = std::get_if<WorkerList>(&v))
          for (WorkerId w : *l) items.emplace_back(w);
        else
          for (auto& r : std::get<RecordList>(v)) items.emplace_back(r);
        if (items.empty()) {
          pc_ = ins.jump;
          return std::nullopt;
        }
        env_[ins.words[0]] = items.front();
        loops_.push_back({pc_, std::move(items), 0, ins.words[0]});
        break;
      }
      case ExecOp::ForEnd: {
        auto& f = loops_.back();
        if (++f.idx < f.items.size()) {
          env_[f.var] = f.items[f.idx];
          pc_ = f.begin + 1;
          return std::nullopt;
        }
        loops_.pop_back();
        break;
      }
      case ExecOp::Let: {
        const auto& op = ins.let_op;
        Value result;
        if (op == "EMPTY") {
          result = MessageBuffer{};
        } else if (op == "COPY") {
          result = eval(ins.operands[0]);
        } else if (op == "CONCAT") {
          MessageBuffer a = eval_buffer(ins.operands[0]);
          a.append(eval_buffer(ins.operands[1]));
          result = std::move(a);
        } else {
          auto m = std::get<BufferMap>(eval(ins.operands[0]));
          WorkerList sel = eval_list(ins.operands[1]);
          const bool keep_selected = op == "SELECT";
          MessageBuffer out;
          for (auto& [w, b] : m)
            if ((std::find(sel.begin(), sel.end(), w) != sel.end()) == keep_selected) out.append(std::move(b));
          result = std::move(out);
        }
        env_[ins.words[0]] = std::move(result);
        break;
      }
    }
    if (ins.phase_end) end_phase(static_cast<long>(pc_));
    ++pc_;
    return std::nullopt;
  }

  ShufflePlan plan_;
  const Topology& topo_;
  const CostModel& cm_;
  WorkerId self_;
  int program_ = 0;  // 0 sender, 1 receiver, 2 finished
  std::size_t pc_ = 0;
  std::map<std::string, Value> env_;
  std::map<std::string, WorkerId> scope_of_;
  std::vector<LoopFrame> loops_;
  double phase_time_ = 0.0;
  std::map<std::size_t, std::size_t> occurrences_;
};

inline void run_deterministic(std::vector<WorkerTask>& tasks, World& world) {
  std::vector<bool> done(tasks.size(), false);
  std::vector<std::optional<WaitFor>> waits(tasks.size());
  for (;;) {
    bool progress = false, all_done = true;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      if (done[i]) continue;
      for (;;) {
        auto r = tasks[i].step(world);
        if (r.status == StepResult::Status::Done) {
          done[i] = true;
          waits[i].reset();
          break;
        }
        if (r.status == StepResult::Status::Blocked) {
          waits[i] = std::move(r.wait);
          break;
        }
        progress = true;
        waits[i].reset();
      }
      if (!done[i]) all_done = false;
    }
    if (all_done) return;
    if (!progress) throw DeadlockError(world.describe_blocked(waits));
  }
}

inline void run_parallel(std::vector<WorkerTask>& tasks, World& world) {
  std::vector<std::thread> threads;
  threads.reserve(tasks.size());
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    threads.emplace_back([&, i] {
      try {
        for (;;) {
          auto r = tasks[i].step(world);
          if (r.status == StepResult::Status::Done) break;
          if (r.status == StepResult::Status::Blocked) world.wait(i, r.wait);
        }
        world.mark_done(i);
      } catch (const Aborted&) {
      } catch (...) {
        world.abort(std::current_exception());
      }
    });
  }
  for (auto& t : threads) t.join();
  if (auto e = world.error()) std::rethrow_exception(e);
}

}  // namespace detail

/// Executes one shuffle given every participant's call. Calls must agree on the collective arguments.
inline ShuffleOutcome run_shuffle(const std::vector<ShuffleCall>& calls, std::shared_ptr<const CompiledTemplate> tmpl,
                                  const Topology& topo, const CostModel& cm, const PlanOptions& opts,
                                  const FunctionRegistry& registry, Scheduler sched = Scheduler::Deterministic) {
  if (calls.empty()) throw InvalidArgument("run_shuffle: no calls");
  for (const auto& c : calls)
    if (!c.collective_matches(calls.front()))
      throw InvalidArgument("run_shuffle: worker " + std::to_string(c.wId) + " disagrees on the collective arguments");
  const auto participants = detail::sorted_union(calls.front().srcs, calls.front().dsts);
  std::map<WorkerId, const ShuffleCall*> by_worker;
  for (const auto& c : calls)
    if (!by_worker.emplace(c.wId, &c).second) throw InvalidArgument("run_shuffle: duplicate call for worker " + std::to_string(c.wId));
  for (WorkerId w : participants)
    if (!by_worker.contains(w)) throw InvalidArgument("run_shuffle: missing call for worker " + std::to_string(w));
  if (by_worker.size() != participants.size()) throw InvalidArgument("run_shuffle: call from a non-participant");

  std::vector<detail::WorkerTask> tasks;
  tasks.reserve(participants.size());
  for (WorkerId w : participants) tasks.emplace_back(instantiate(tmpl, *by_worker[w], topo, opts, registry), topo, cm);

  detail::World world(tasks.size());
  world.set_names(participants);
  if (sched == Scheduler::Deterministic)
    detail::run_deterministic(tasks, world);
  else
    detail::run_parallel(tasks, world);

  ShuffleOutcome out;
  std::map<std::tuple<int, std::size_t, std::size_t>, double> phase_max;
  for (auto& t : tasks) {
    for (std::size_t l = 0; l < 4; ++l) out.bytes_by_level[l] += t.bytes_by_level[l];
    out.payload_bytes += t.payload_bytes;
    out.sampling_bytes += t.sampling_bytes;
    out.control_bytes += t.control_bytes;
    out.transfers.insert(out.transfers.end(), t.transfers.begin(), t.transfers.end());
    out.decisions.insert(out.decisions.end(), t.decisions.begin(), t.decisions.end());
    out.samples.insert(out.samples.end(), t.samples.begin(), t.samples.end());
    for (const auto& [k, v] : t.phases) phase_max[k] = std::max(phase_max[k], v);
    const auto& dsts = calls.front().dsts;
    if (std::find(dsts.begin(), dsts.end(), t.id()) != dsts.end()) out.outputs[t.id()] = t.output();
  }
  out.phase_times = phase_max;
  for (const auto& [k, v] : phase_max) out.modeled_time += v;

  // Workers sharing a sampling scope must agree on every guarded branch.
  std::map<std::tuple<std::string, WorkerId, std::size_t>, bool> agreed;
  std::map<std::pair<std::string, WorkerId>, std::size_t> seen;
  for (const auto& d : out.decisions) {
    auto occ = seen[{d.label + "#" + std::to_string(d.worker), d.scope_server}]++;
    auto [it, fresh] = agreed.try_emplace({d.label, d.scope_server, occ}, d.taken);
    if (!fresh && it->second != d.taken)
      throw PlanError("scope divergence: workers sampled by w" + std::to_string(d.scope_server) +
                      " took different branches at " + d.label);
  }
  for (const auto& label : tmpl->decide_labels)
    if (std::any_of(out.decisions.begin(), out.decisions.end(), [&](const Decision& d) { return d.label == label && d.taken; }))
      out.decision_trace.push_back(label);
  out.decision_trace.push_back("G");
  return out;
}

inline ShuffleOutcome run_shuffle(const std::vector<ShuffleCall>& calls, const Template& t, const Topology& topo,
                                  const CostModel& cm, const PlanOptions& opts, const FunctionRegistry& registry,
                                  Scheduler sched = Scheduler::Deterministic) {
  return run_shuffle(calls, compile_template(t), topo, cm, opts, registry, sched);
}

}  // namespace teshu
