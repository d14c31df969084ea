#pragma once

#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "teshu/core.hpp"
#include "teshu/sampling.hpp"
#include "teshu/schedules.hpp"
#include "teshu/template.hpp"
#include "teshu/topology.hpp"

namespace teshu {

/// One worker's invocation of the shuffle API.
struct ShuffleCall {
  WorkerId wId = 0;
  std::string template_id;
  std::uint64_t shuffle_id = 0;
  WorkerList srcs;
  WorkerList dsts;
  MessageBuffer bufs;
  std::string part_func = "default";
  std::optional<std::string> comb_func;

  void validate() const {
    auto dup_free = [](WorkerList l) {
      std::sort(l.begin(), l.end());
      return std::adjacent_find(l.begin(), l.end()) == l.end();
    };
    if (srcs.empty() || dsts.empty()) throw InvalidArgument("shuffle call needs non-empty srcs and dsts");
    if (!dup_free(srcs) || !dup_free(dsts)) throw InvalidArgument("srcs and dsts must be duplicate-free");
    if (std::find(srcs.begin(), srcs.end(), wId) == srcs.end() &&
        std::find(dsts.begin(), dsts.end(), wId) == dsts.end())
      throw InvalidArgument("worker " + std::to_string(wId) + " is neither a source nor a destination");
  }
  bool collective_matches(const ShuffleCall& o) const {
    return template_id == o.template_id && shuffle_id == o.shuffle_id && srcs == o.srcs && dsts == o.dsts &&
           part_func == o.part_func && comb_func == o.comb_func;
  }
};

struct PlanOptions {
  SamplingConfig sampling;
  std::optional<std::size_t> group_size;  // two-level exchange; nullopt = ceil(sqrt(n))
  // DECIDE labels pinned to a branch. Pinning any label also skips sampling unless keep_sampling is set.
  std::map<std::string, bool> forced;
  bool keep_sampling = false;
};

struct Record {
  WorkerId to = 0;
  WorkerId from = 0;
  WorkerList sel;
};
using RecordList = std::vector<Record>;
using BufferMap = std::map<WorkerId, MessageBuffer>;

struct SampleHandle {
  WorkerList scope;
  WorkerId server = 0;
  std::size_t groups = 1;
  std::size_t group = 0;
  std::uint64_t stage = 0;
  bool bypassed = false;
  // Populated at the sampling server once the gather completes.
  MessageBuffer sample;
  std::vector<std::size_t> bytes_local;
  double r_hat = 1.0;
};

using Value = std::variant<std::monostate, MessageBuffer, BufferMap, WorkerList, WorkerId, double, RecordList, Record,
                           SampleHandle>;

// ---------------------------------------------------------------------------
// Compiled form: flat instruction list with resolved jumps.

struct Operand {
  enum class Kind { Name, Param, Index, Field, Number };
  Kind kind = Kind::Name;
  std::string name;
  std::string sub;  // index operand or field name
  double number = 0.0;

  static Operand parse(const std::string& tok) {
    Operand o;
    if (tok[0] == '$') {
      o.kind = Kind::Param;
      o.name = tok.substr(1);
    } else if (std::isdigit(static_cast<unsigned char>(tok[0])) || tok[0] == '-' || tok[0] == '.') {
      o.kind = Kind::Number;
      o.number = std::stod(tok);
    } else if (auto lb = tok.find('['); lb != std::string::npos) {
      o.kind = Kind::Index;
      o.name = tok.substr(0, lb);
      o.sub = tok.substr(lb + 1, tok.size() - lb - 2);
    } else if (auto dot = tok.find('.'); dot != std::string::npos) {
      o.kind = Kind::Field;
      o.name = tok.substr(0, dot);
      o.sub = tok.substr(dot + 1);
    } else {
      o.name = tok;
    }
    return o;
  }
};

enum class ExecOp {
  Comb, Part, Publish, Send, Recv, Fetch, Samp, SampGather, EffCost, FindNbr, If, Jump, ForBegin, ForEnd, Let
};

struct CompiledInstr {
  ExecOp op;
  std::vector<Operand> operands;
  std::vector<std::string> words;  // raw tokens
  int line = 0;
  std::size_t jump = 0;     // If: false target; Jump: target; ForBegin: past loop
  std::size_t partner = 0;  // ForEnd: matching ForBegin
  bool phase_end = false;
  Level level = Level::Global;
  std::string label;        // If: DECIDE label
  bool greater = true;      // If: comparator
  std::string let_op;
};

struct CompiledProgram {
  std::vector<CompiledInstr> code;
};

struct CompiledTemplate {
  Template source;
  CompiledProgram sender;
  CompiledProgram receiver;
  std::vector<std::string> decide_labels;  // program order
};

namespace detail {

inline Level parse_level(const std::string& w) {
  if (w == "SERVER") return Level::Server;
  if (w == "RACK") return Level::Rack;
  return Level::Global;
}

inline bool is_comm(ExecOp op) {
  return op == ExecOp::Send || op == ExecOp::Recv || op == ExecOp::Fetch || op == ExecOp::Samp ||
         op == ExecOp::SampGather || op == ExecOp::EffCost;
}

inline CompiledProgram compile_program(const std::vector<Instruction>& prog, std::vector<std::string>& labels) {
  CompiledProgram out;
  auto& code = out.code;
  struct Open {
    Op kind;
    std::size_t at;                   // If or ForBegin index
    std::optional<std::size_t> else_jump;
  };
  std::vector<Open> open;
  for (const auto& ins : prog) {
    CompiledInstr c{};
    c.line = ins.line;
    c.words = ins.args;
    auto ops = [&](std::initializer_list<std::size_t> idx) {
      for (auto i : idx) c.operands.push_back(Operand::parse(ins.args[i]));
    };
    switch (ins.op) {
      case Op::Comb: c.op = ExecOp::Comb; ops({1}); break;
      case Op::Part: c.op = ExecOp::Part; ops({1, 2}); break;
      case Op::Publish: c.op = ExecOp::Publish; ops({0}); break;
      case Op::Send: c.op = ExecOp::Send; ops({0, 1}); break;
      case Op::Recv: c.op = ExecOp::Recv; ops({0, 1}); break;
      case Op::Fetch: c.op = ExecOp::Fetch; ops({0, 1}); break;
      case Op::FindNbr: c.op = ExecOp::FindNbr; c.level = parse_level(ins.args[1]); ops({2}); break;
      case Op::EffCost: c.op = ExecOp::EffCost; c.level = parse_level(ins.args[3]); c.phase_end = true; break;
      case Op::Samp: {
        c.op = ExecOp::Samp;
        ops({1, 3});
        code.push_back(c);
        CompiledInstr g{};
        g.op = ExecOp::SampGather;
        g.line = ins.line;
        g.words = ins.args;
        g.phase_end = true;
        code.push_back(std::move(g));
        continue;
      }
      case Op::If:
        c.op = ExecOp::If;
        c.greater = ins.args[1] == ">";
        c.operands.push_back(Operand::parse(ins.args[0]));
        c.operands.push_back(Operand::parse(ins.args[2]));
        if (ins.args.size() == 5) {
          c.label = ins.args[4];
          if (std::find(labels.begin(), labels.end(), c.label) == labels.end()) labels.push_back(c.label);
        }
        open.push_back({Op::If, code.size(), std::nullopt});
        break;
      case Op::Else: {
        c.op = ExecOp::Jump;
        auto& o = open.back();
        code[o.at].jump = code.size() + 1;
        o.else_jump = code.size();
        break;
      }
      case Op::For:
        c.op = ExecOp::ForBegin;
        ops({2});
        open.push_back({Op::For, code.size(), std::nullopt});
        break;
      case Op::End: {
        auto o = open.back();
        open.pop_back();
        if (o.kind == Op::If) {
          if (o.else_jump)
            code[*o.else_jump].jump = code.size();
          else
            code[o.at].jump = code.size();
          continue;
        }
        c.op = ExecOp::ForEnd;
        c.partner = o.at;
        for (std::size_t i = o.at + 1; i < code.size(); ++i)
          if (is_comm(code[i].op)) c.phase_end = true;
        code[o.at].jump = code.size() + 1;
        break;
      }
      case Op::Let: {
        c.op = ExecOp::Let;
        c.let_op = ins.args[2];
        for (std::size_t i = 3; i < ins.args.size(); ++i) c.operands.push_back(Operand::parse(ins.args[i]));
        break;
      }
    }
    code.push_back(std::move(c));
  }
  return out;
}

}  // namespace detail

inline std::shared_ptr<const CompiledTemplate> compile_template(const Template& t) {
  auto c = std::make_shared<CompiledTemplate>();
  c->source = t;
  c->sender = detail::compile_program(t.sender, c->decide_labels);
  c->receiver = detail::compile_program(t.receiver, c->decide_labels);
  return c;
}

// ---------------------------------------------------------------------------
// Instantiation

/// A compiled template specialized for one worker and one invocation.
struct ShufflePlan {
  std::shared_ptr<const CompiledTemplate> tmpl;
  ShuffleCall call;
  bool runs_sender = false;
  bool runs_receiver = false;
  std::shared_ptr<const PartitionFn> part;
  std::shared_ptr<const CombinerFn> comb;  // may be null
  std::map<std::string, Value> params;
  std::map<std::size_t, WorkerList> sender_nbrs;  // FIND_NBR pc -> workers
  std::map<std::size_t, WorkerList> receiver_nbrs;
  PlanOptions options;
  WorkerList participants;  // srcs ∪ dsts, ascending

  bool has_unresolved_params() const {
    for (const auto& p : tmpl->source.params)
      if (!params.contains(p)) return true;
    return false;
  }
};

namespace detail {

inline WorkerList sorted_union(const WorkerList& a, const WorkerList& b) {
  std::set<WorkerId> s(a.begin(), a.end());
  s.insert(b.begin(), b.end());
  return {s.begin(), s.end()};
}

inline std::size_t index_in(const WorkerList& l, WorkerId w) {
  auto it = std::find(l.begin(), l.end(), w);
  return it == l.end() ? l.size() : static_cast<std::size_t>(it - l.begin());
}

inline Value resolve_param(const std::string& name, const ShuffleCall& call, const WorkerList& participants,
                           const PlanOptions& opts) {
  const WorkerId self = call.wId;
  if (name == "RATE") {
    opts.sampling.validate();
    return opts.sampling.rate;
  }
  if (name == "RING_ORDER") {
    WorkerList order;
    std::size_t j = index_in(call.dsts, self);
    if (j == call.dsts.size()) return order;
    for (auto i : ring_receive_order(j, call.srcs.size(), call.dsts.size())) order.push_back(call.srcs[i]);
    return order;
  }
  if (name == "BRUCK_ROUNDS") {
    const std::size_t n = participants.size();
    const std::size_t i = index_in(participants, self);
    RecordList rounds;
    for (const auto& r : bruck_schedule(n)) {
      Record rec;
      rec.to = participants[(i + r.offset) % n];
      rec.from = participants[(i + n - r.offset) % n];
      for (WorkerId d : call.dsts) {
        std::size_t rel = (index_in(participants, d) + n - i) % n;
        if (r.moves(rel)) rec.sel.push_back(d);
      }
      rounds.push_back(std::move(rec));
    }
    return rounds;
  }
  if (name == "GROUP_SLICES" || name == "MY_SLICE" || name == "FORWARDERS") {
    if (opts.group_size && *opts.group_size > call.srcs.size())
      std::clog << "teshu: warning: group size " << *opts.group_size << " exceeds " << call.srcs.size()
                << " senders; clamping\n";
    const auto groups = make_groups(call.srcs, resolve_group_size(opts.group_size, call.srcs.size()));
    if (name == "FORWARDERS") {
      WorkerList fwd;
      std::size_t t = index_in(call.dsts, self);
      if (t == call.dsts.size()) return fwd;
      for (const auto& g : groups)
        if (!slice_for_rank(call.dsts, t % g.size(), g.size()).empty()) fwd.push_back(g[t % g.size()]);
      return fwd;
    }
    for (const auto& g : groups) {
      std::size_t rank = index_in(g, self);
      if (rank == g.size()) continue;
      if (name == "MY_SLICE") return slice_for_rank(call.dsts, rank, g.size());
      RecordList recs;
      for (std::size_t q = 0; q < g.size(); ++q) recs.push_back({g[q], g[q], slice_for_rank(call.dsts, q, g.size())});
      return recs;
    }
    return name == "MY_SLICE" ? Value{WorkerList{}} : Value{RecordList{}};
  }
  throw InstantiationError("no resolver for template parameter $" + name);
}

inline WorkerList resolve_list_operand(const Operand& o, const ShuffleCall& call, const ShufflePlan& plan) {
  if (o.kind == Operand::Kind::Name && o.name == "srcs") return call.srcs;
  if (o.kind == Operand::Kind::Name && o.name == "dsts") return call.dsts;
  if (o.kind == Operand::Kind::Param) {
    auto it = plan.params.find(o.name);
    if (it != plan.params.end() && std::holds_alternative<WorkerList>(it->second))
      return std::get<WorkerList>(it->second);
  }
  throw InstantiationError("FIND_NBR scope must be srcs, dsts or a worker-list parameter");
}

inline void resolve_neighbors(const CompiledProgram& prog, const ShuffleCall& call, const ShufflePlan& plan,
                              const Topology& topo, std::map<std::size_t, WorkerList>& out) {
  for (std::size_t pc = 0; pc < prog.code.size(); ++pc) {
    const auto& c = prog.code[pc];
    if (c.op != ExecOp::FindNbr) continue;
    WorkerList scope = resolve_list_operand(c.operands[0], call, plan);
    out[pc] = c.level == Level::Server ? neighbors_same_server(call.wId, scope, topo)
                                       : neighbors_same_rack(call.wId, scope, topo);
  }
}

}  // namespace detail

/// Binds call arguments, `$` parameters and neighbor sets into a per-worker plan.
inline ShufflePlan instantiate(std::shared_ptr<const CompiledTemplate> tmpl, ShuffleCall call, const Topology& topo,
                               const PlanOptions& opts, const FunctionRegistry& registry) {
  call.validate();
  const Template& t = tmpl->source;
  if (call.template_id != t.id)
    throw InstantiationError("call names template '" + call.template_id + "' but plan is for '" + t.id + "'");
  ShufflePlan plan;
  plan.tmpl = tmpl;
  plan.part = registry.partition(call.part_func);
  if (call.comb_func) plan.comb = registry.combiner(*call.comb_func);
  if (t.requires_combiner && !plan.comb)
    throw InstantiationError("template '" + t.id + "' requires a combiner function");
  plan.participants = detail::sorted_union(call.srcs, call.dsts);
  for (WorkerId w : plan.participants) topo.check_worker(w);
  const bool is_src = std::find(call.srcs.begin(), call.srcs.end(), call.wId) != call.srcs.end();
  const bool is_dst = std::find(call.dsts.begin(), call.dsts.end(), call.wId) != call.dsts.end();
  plan.runs_sender = t.all_participants || is_src;
  plan.runs_receiver = t.all_participants || is_dst;
  plan.options = opts;
  for (const auto& p : t.params) plan.params[p] = detail::resolve_param(p, call, plan.participants, opts);
  if (plan.runs_sender) detail::resolve_neighbors(tmpl->sender, call, plan, topo, plan.sender_nbrs);
  if (plan.runs_receiver) detail::resolve_neighbors(tmpl->receiver, call, plan, topo, plan.receiver_nbrs);
  plan.call = std::move(call);
  return plan;
}

inline ShufflePlan instantiate(const Template& t, ShuffleCall call, const Topology& topo, const PlanOptions& opts,
                               const FunctionRegistry& registry) {
  return instantiate(compile_template(t), std::move(call), topo, opts, registry);
}

}  // namespace teshu
