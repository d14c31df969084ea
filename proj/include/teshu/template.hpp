#pragma once

#include <cctype>
#include <cstdint>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "teshu/core.hpp"

// Shuffle templates are plain text, one instruction per line:
//
//   template <id>
//   mode push|pull
//   scope roles|all          roles: srcs run `sender`, dsts run `receiver`
//                            all:   every participant runs both
//   requires combFunc        (optional)
//   param <NAME>             one line per `$NAME` the body uses
//   sender:
//     <instruction>...
//   receiver:
//     <instruction>...
//
// Instructions (indentation is ignored; `#` starts a comment):
//   COMB <dst> <src>                    fold equal keys (plain concat without combFunc)
//   PART <dst> <src> <list>             partition into a map keyed by worker
//   PUBLISH <map>                       expose partitions for FETCH
//   SEND <worker> <buf>
//   RECV <lvalue> <worker>
//   FETCH <lvalue> <worker>
//   SAMP <dst> <src> $RATE <scope>      partition-aware sample gathered at min(scope)
//   EFF_COST <eff> <cost> <sample> SERVER|RACK|GLOBAL
//   FIND_NBR <dst> SERVER|RACK <list>   resolved to a worker list at instantiation
//   IF <a> > <b> [DECIDE <label>] ... [ELSE ...] END
//   FOR <var> IN <list> ... END
//   LET <var> = COPY <x> | EMPTY | CONCAT <a> <b> | SELECT <map> <list> | EXCLUDE <map> <list>
//
// Operands: variables, builtins (bufs srcs dsts wId), `$PARAM`, `map[w]`, `rec.to|from|sel`,
// and numeric literals.

namespace teshu {

enum class Op { Comb, Part, Publish, Send, Recv, Fetch, Samp, EffCost, FindNbr, If, Else, End, For, Let };

inline const char* op_name(Op op) {
  switch (op) {
    case Op::Comb: return "COMB";
    case Op::Part: return "PART";
    case Op::Publish: return "PUBLISH";
    case Op::Send: return "SEND";
    case Op::Recv: return "RECV";
    case Op::Fetch: return "FETCH";
    case Op::Samp: return "SAMP";
    case Op::EffCost: return "EFF_COST";
    case Op::FindNbr: return "FIND_NBR";
    case Op::If: return "IF";
    case Op::Else: return "ELSE";
    case Op::End: return "END";
    case Op::For: return "FOR";
    case Op::Let: return "LET";
  }
  return "?";
}

struct Instruction {
  Op op;
  std::vector<std::string> args;  // raw operand tokens, keywords stripped
  int line = 0;
};

struct Template {
  std::string id;
  std::string mode = "push";
  bool all_participants = false;
  bool requires_combiner = false;
  std::set<std::string> params;
  std::vector<Instruction> sender;
  std::vector<Instruction> receiver;

  /// Every primitive the template can execute, across both programs.
  std::set<Op> ops_used() const {
    std::set<Op> out;
    for (const auto& i : sender) out.insert(i.op);
    for (const auto& i : receiver) out.insert(i.op);
    return out;
  }
};

struct TemplateParseError : std::runtime_error {
  TemplateParseError(int line, const std::string& what)
      : std::runtime_error("template line " + std::to_string(line) + ": " + what), line(line) {}
  int line;
};

namespace detail {

inline std::vector<std::string> tokenize(std::string_view line) {
  if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
  std::vector<std::string> out;
  std::istringstream in{std::string(line)};
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

inline bool is_identifier(std::string_view s) {
  if (s.empty()) return false;
  if (!(std::isalpha(static_cast<unsigned char>(s[0])) || s[0] == '_')) return false;
  for (char c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_')) return false;
  return true;
}

inline bool is_level_keyword(std::string_view s) { return s == "SERVER" || s == "RACK" || s == "GLOBAL"; }

// Checks operand shape: name, $PARAM, name[index], name.field, or a number.
inline void check_operand(const std::string& tok, int line, std::set<std::string>& params_seen) {
  if (tok.empty()) throw TemplateParseError(line, "empty operand");
  if (tok[0] == '$') {
    if (!is_identifier(std::string_view(tok).substr(1))) throw TemplateParseError(line, "bad parameter " + tok);
    params_seen.insert(tok.substr(1));
    return;
  }
  if (std::isdigit(static_cast<unsigned char>(tok[0])) || tok[0] == '-' || tok[0] == '.') {
    try {
      std::size_t pos = 0;
      (void)std::stod(tok, &pos);
      if (pos == tok.size()) return;
    } catch (const std::exception&) {
    }
    throw TemplateParseError(line, "bad number " + tok);
  }
  if (auto lb = tok.find('['); lb != std::string::npos) {
    if (tok.back() != ']') throw TemplateParseError(line, "unterminated index in " + tok);
    check_operand(tok.substr(0, lb), line, params_seen);
    check_operand(tok.substr(lb + 1, tok.size() - lb - 2), line, params_seen);
    return;
  }
  if (auto dot = tok.find('.'); dot != std::string::npos) {
    auto field = tok.substr(dot + 1);
    if (field != "to" && field != "from" && field != "sel") throw TemplateParseError(line, "unknown field " + field);
    check_operand(tok.substr(0, dot), line, params_seen);
    return;
  }
  if (!is_identifier(tok)) throw TemplateParseError(line, "bad operand " + tok);
}

inline Instruction parse_instruction(const std::vector<std::string>& t, int line, std::set<std::string>& params_seen) {
  auto need = [&](std::size_t n) {
    if (t.size() != n)
      throw TemplateParseError(line, t[0] + " expects " + std::to_string(n - 1) + " operands, got " +
                                         std::to_string(t.size() - 1));
  };
  auto operands = [&](std::size_t from, std::size_t to) {
    for (std::size_t i = from; i < to; ++i) check_operand(t[i], line, params_seen);
  };
  auto name = [&](std::size_t i) {
    if (!is_identifier(t[i])) throw TemplateParseError(line, "expected a variable name, got " + t[i]);
  };
  const std::string& kw = t[0];
  Instruction ins{Op::End, {}, line};
  if (kw == "COMB") {
    need(3); name(1); operands(2, 3); ins.op = Op::Comb;
  } else if (kw == "PART") {
    need(4); name(1); operands(2, 4); ins.op = Op::Part;
  } else if (kw == "PUBLISH") {
    need(2); operands(1, 2); ins.op = Op::Publish;
  } else if (kw == "SEND") {
    need(3); operands(1, 3); ins.op = Op::Send;
  } else if (kw == "RECV" || kw == "FETCH") {
    need(3); operands(1, 3); ins.op = kw == "RECV" ? Op::Recv : Op::Fetch;
  } else if (kw == "SAMP") {
    need(5); name(1); operands(2, 5); ins.op = Op::Samp;
    if (t[3] != "$RATE") throw TemplateParseError(line, "SAMP rate operand must be $RATE");
  } else if (kw == "EFF_COST") {
    need(5); name(1); name(2); name(3); ins.op = Op::EffCost;
    if (!is_level_keyword(t[4])) throw TemplateParseError(line, "EFF_COST level must be SERVER, RACK or GLOBAL");
  } else if (kw == "FIND_NBR") {
    need(4); name(1); operands(3, 4); ins.op = Op::FindNbr;
    if (t[2] != "SERVER" && t[2] != "RACK") throw TemplateParseError(line, "FIND_NBR level must be SERVER or RACK");
  } else if (kw == "IF") {
    if (!(t.size() == 4 || (t.size() == 6 && t[4] == "DECIDE")))
      throw TemplateParseError(line, "IF expects: IF <a> > <b> [DECIDE <label>]");
    if (t[2] != ">" && t[2] != "<") throw TemplateParseError(line, "IF comparator must be > or <");
    check_operand(t[1], line, params_seen);
    check_operand(t[3], line, params_seen);
    ins.op = Op::If;
  } else if (kw == "ELSE") {
    need(1); ins.op = Op::Else;
  } else if (kw == "END") {
    need(1); ins.op = Op::End;
  } else if (kw == "FOR") {
    need(4); name(1);
    if (t[2] != "IN") throw TemplateParseError(line, "FOR expects: FOR <var> IN <list>");
    operands(3, 4); ins.op = Op::For;
  } else if (kw == "LET") {
    if (t.size() < 4 || t[2] != "=") throw TemplateParseError(line, "LET expects: LET <var> = <op> ...");
    name(1);
    const std::string& fn = t[3];
    std::size_t arity = fn == "EMPTY" ? 0 : fn == "COPY" ? 1 : (fn == "CONCAT" || fn == "SELECT" || fn == "EXCLUDE") ? 2 : 99;
    if (arity == 99) throw TemplateParseError(line, "unknown LET operator " + fn);
    need(4 + arity);
    operands(4, 4 + arity);
    ins.op = Op::Let;
  } else {
    throw TemplateParseError(line, "unknown instruction " + kw);
  }
  ins.args.assign(t.begin() + 1, t.end());
  return ins;
}

inline void check_nesting(const std::vector<Instruction>& prog, const std::string& section) {
  std::vector<const Instruction*> open;
  for (const auto& i : prog) {
    if (i.op == Op::If || i.op == Op::For) {
      open.push_back(&i);
    } else if (i.op == Op::Else) {
      if (open.empty() || open.back()->op != Op::If) throw TemplateParseError(i.line, "ELSE without IF");
    } else if (i.op == Op::End) {
      if (open.empty()) throw TemplateParseError(i.line, "END without IF/FOR");
      open.pop_back();
    }
  }
  if (!open.empty()) throw TemplateParseError(open.back()->line, "unterminated block in " + section);
}

inline std::string join(const std::vector<std::string>& toks) {
  std::string out;
  for (const auto& t : toks) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

}  // namespace detail

inline Template parse_template(std::string_view text) {
  Template t;
  std::set<std::string> params_seen;
  std::vector<Instruction>* section = nullptr;
  bool saw_sender = false, saw_receiver = false;
  std::istringstream in{std::string(text)};
  int line_no = 0;
  for (std::string raw; std::getline(in, raw);) {
    ++line_no;
    auto toks = detail::tokenize(raw);
    if (toks.empty()) continue;
    const std::string& kw = toks[0];
    if (kw == "template") {
      if (toks.size() != 2 || !detail::is_identifier(toks[1])) throw TemplateParseError(line_no, "bad template header");
      if (!t.id.empty()) throw TemplateParseError(line_no, "duplicate template header");
      t.id = toks[1];
    } else if (kw == "mode") {
      if (toks.size() != 2 || (toks[1] != "push" && toks[1] != "pull")) throw TemplateParseError(line_no, "mode must be push or pull");
      t.mode = toks[1];
    } else if (kw == "scope") {
      if (toks.size() != 2 || (toks[1] != "roles" && toks[1] != "all")) throw TemplateParseError(line_no, "scope must be roles or all");
      t.all_participants = toks[1] == "all";
    } else if (kw == "requires") {
      if (toks.size() != 2 || toks[1] != "combFunc") throw TemplateParseError(line_no, "only 'requires combFunc' is supported");
      t.requires_combiner = true;
    } else if (kw == "param") {
      if (toks.size() != 2 || !detail::is_identifier(toks[1])) throw TemplateParseError(line_no, "bad param declaration");
      t.params.insert(toks[1]);
    } else if (kw == "sender:") {
      if (saw_sender) throw TemplateParseError(line_no, "duplicate sender section");
      saw_sender = true;
      section = &t.sender;
    } else if (kw == "receiver:") {
      if (saw_receiver) throw TemplateParseError(line_no, "duplicate receiver section");
      saw_receiver = true;
      section = &t.receiver;
    } else {
      if (section == nullptr) throw TemplateParseError(line_no, "instruction outside a program section");
      section->push_back(detail::parse_instruction(toks, line_no, params_seen));
    }
  }
  if (t.id.empty()) throw TemplateParseError(line_no, "missing template header");
  if (!saw_sender || !saw_receiver) throw TemplateParseError(line_no, "template needs sender: and receiver: sections");
  detail::check_nesting(t.sender, "sender");
  detail::check_nesting(t.receiver, "receiver");
  for (const auto& p : params_seen)
    if (!t.params.contains(p)) throw TemplateParseError(0, "undeclared parameter $" + p);
  for (const auto& p : t.params)
    if (!params_seen.contains(p)) throw TemplateParseError(0, "declared parameter $" + p + " is never used");
  return t;
}

/// Canonical text form; parse_template(serialize_template(t)) reproduces t.
inline std::string serialize_template(const Template& t) {
  std::ostringstream out;
  out << "template " << t.id << "\n";
  out << "mode " << t.mode << "\n";
  out << "scope " << (t.all_participants ? "all" : "roles") << "\n";
  if (t.requires_combiner) out << "requires combFunc\n";
  for (const auto& p : t.params) out << "param " << p << "\n";
  auto emit = [&](const char* header, const std::vector<Instruction>& prog) {
    out << header << "\n";
    int depth = 1;
    for (const auto& i : prog) {
      if (i.op == Op::End || i.op == Op::Else) --depth;
      out << std::string(2 * static_cast<std::size_t>(depth), ' ') << op_name(i.op);
      if (!i.args.empty()) out << ' ' << detail::join(i.args);
      out << "\n";
      if (i.op == Op::If || i.op == Op::For || i.op == Op::Else) ++depth;
    }
  };
  emit("sender:", t.sender);
  emit("receiver:", t.receiver);
  return out.str();
}

}  // namespace teshu
