#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "teshu/core.hpp"

namespace teshu {

enum class WorkloadKind { Zipf, Uniform, LetterCount, File };

inline const char* to_string(WorkloadKind k) {
  switch (k) {
    case WorkloadKind::Zipf: return "zipf";
    case WorkloadKind::Uniform: return "uniform";
    case WorkloadKind::LetterCount: return "letters";
    case WorkloadKind::File: return "file";
  }
  return "?";
}

struct WorkloadSpec {
  WorkloadKind kind = WorkloadKind::Uniform;
  std::size_t n_messages = 1000;  // per source worker
  std::size_t key_space = 1000;
  double zipf_s = 1.1;
  std::uint64_t seed = 1;
  std::string path;  // FILE only

  void validate() const {
    if (kind == WorkloadKind::Zipf && !(zipf_s > 0)) throw InvalidArgument("zipf workload needs s > 0");
    if ((kind == WorkloadKind::Zipf || kind == WorkloadKind::Uniform) && key_space == 0 && n_messages > 0)
      throw InvalidArgument("workload key_space must be >= 1");
    if (kind == WorkloadKind::File && path.empty()) throw InvalidArgument("file workload needs a path");
  }

  std::string describe() const {
    std::ostringstream os;
    os << to_string(kind);
    if (kind == WorkloadKind::File) {
      os << ":path=" << path;
      return os.str();
    }
    os << ":n=" << n_messages;
    if (kind != WorkloadKind::LetterCount) os << ",keys=" << key_space;
    if (kind == WorkloadKind::Zipf) os << ",s=" << zipf_s;
    os << ",seed=" << seed;
    return os.str();
  }
};

using Workload = std::map<WorkerId, MessageBuffer>;

/// "k" followed by at least eight zero-padded digits.
inline std::string numbered_key(std::uint64_t k) {
  char digits[24];
  auto end = std::to_chars(digits, digits + sizeof digits, k).ptr;
  auto n = static_cast<std::size_t>(end - digits);
  std::string out = "k";
  if (n < 8) out.append(8 - n, '0');
  out.append(digits, n);
  return out;
}

namespace detail {

inline double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline std::vector<double> zipf_cdf(std::size_t n, double s) {
  std::vector<double> cdf(n);
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i) cdf[i] = acc += 1.0 / std::pow(static_cast<double>(i + 1), s);
  for (auto& c : cdf) c /= acc;
  return cdf;
}

inline Workload read_workload_file(const std::string& path, const WorkerList& srcs) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot read workload file '" + path + "'");
  Workload out;
  for (WorkerId w : srcs) out[w];
  std::string line;
  std::size_t lineno = 0, i = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0)
      throw InvalidArgument(path + ":" + std::to_string(lineno) + ": expected key<TAB>integer");
    std::int64_t v = 0;
    const char* b = line.data() + tab + 1;
    const char* e = line.data() + line.size();
    auto [p, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || p != e || b == e)
      throw InvalidArgument(path + ":" + std::to_string(lineno) + ": value is not a 64-bit integer");
    out[srcs[i++ % srcs.size()]].push_back(Message(line.substr(0, tab), v));
  }
  return out;
}

}  // namespace detail

/// Per-source buffers; each worker's stream depends only on (spec, seed, worker id).
inline Workload gen_workload(const WorkloadSpec& spec, const WorkerList& srcs) {
  spec.validate();
  if (spec.kind == WorkloadKind::File) return detail::read_workload_file(spec.path, srcs);
  std::vector<double> cdf;
  if (spec.kind == WorkloadKind::Zipf && spec.n_messages > 0) cdf = detail::zipf_cdf(spec.key_space, spec.zipf_s);
  Workload out;
  for (WorkerId w : srcs) {
    std::mt19937_64 rng(splitmix64(spec.seed ^ fmix64(0x5eedULL + w)));
    auto& buf = out[w];
    for (std::size_t i = 0; i < spec.n_messages; ++i) {
      switch (spec.kind) {
        case WorkloadKind::LetterCount: {
          char c = static_cast<char>('a' + rng() % 26);
          buf.push_back(Message(std::string(1, c), std::int64_t{1}));
          break;
        }
        case WorkloadKind::Uniform:
          buf.push_back(Message(numbered_key(rng() % spec.key_space), static_cast<std::int64_t>(1 + rng() % 100)));
          break;
        case WorkloadKind::Zipf: {
          double u = detail::unit_uniform(rng);
          auto k = static_cast<std::size_t>(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
          buf.push_back(Message(numbered_key(std::min(k, spec.key_space - 1)), static_cast<std::int64_t>(1 + rng() % 100)));
          break;
        }
        case WorkloadKind::File: break;
      }
    }
  }
  return out;
}

/// Parses "zipf:n=1000,keys=5000,s=1.1,seed=3", "uniform:n=..,keys=..", "letters:n=..", "file:path=..".
/// `dup=<d>` on uniform/zipf sets keys so that each key appears about d times over `sources` workers.
inline WorkloadSpec parse_workload_spec(const std::string& text, std::size_t sources = 1) {
  WorkloadSpec spec;
  auto colon = text.find(':');
  std::string kind = text.substr(0, colon);
  if (kind == "zipf")
    spec.kind = WorkloadKind::Zipf;
  else if (kind == "uniform")
    spec.kind = WorkloadKind::Uniform;
  else if (kind == "letters")
    spec.kind = WorkloadKind::LetterCount;
  else if (kind == "file")
    spec.kind = WorkloadKind::File;
  else
    throw InvalidArgument("unknown workload kind '" + kind + "'");
  std::optional<double> dup;
  if (colon != std::string::npos) {
    std::stringstream ss(text.substr(colon + 1));
    std::string kv;
    while (std::getline(ss, kv, ',')) {
      auto eq = kv.find('=');
      if (eq == std::string::npos) throw InvalidArgument("workload option '" + kv + "' is not key=value");
      std::string k = kv.substr(0, eq), v = kv.substr(eq + 1);
      try {
        if (k == "n")
          spec.n_messages = std::stoull(v);
        else if (k == "keys")
          spec.key_space = std::stoull(v);
        else if (k == "s")
          spec.zipf_s = std::stod(v);
        else if (k == "seed")
          spec.seed = std::stoull(v);
        else if (k == "path")
          spec.path = v;
        else if (k == "dup")
          dup = std::stod(v);
        else
          throw InvalidArgument("unknown workload option '" + k + "'");
      } catch (const InvalidArgument&) {
        throw;
      } catch (const std::logic_error&) {
        throw InvalidArgument("bad value for workload option '" + k + "'");
      }
    }
  }
  if (dup) {
    if (!(*dup > 0)) throw InvalidArgument("dup must be > 0");
    spec.key_space = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(spec.n_messages * sources / *dup)));
  }
  spec.validate();
  return spec;
}

inline std::size_t workload_bytes(const Workload& w) {
  std::size_t n = 0;
  for (const auto& [_, b] : w) n += b.total_bytes();
  return n;
}

}  // namespace teshu
