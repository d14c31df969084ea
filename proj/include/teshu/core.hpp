#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace teshu {

using WorkerId = std::uint32_t;
using ServerId = std::uint32_t;
using RackId = std::uint32_t;
using WorkerList = std::vector<WorkerId>;

// Error kinds surfaced by the library. Each carries a human-readable message.
struct InvalidArgument : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct PlanError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InstantiationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DeadlockError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NotFound : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// FNV-1a 64-bit. Stable across platforms and runs.
constexpr std::uint64_t fnv1a64(std::string_view bytes) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::uint64_t fmix64(std::uint64_t k) noexcept {
  k ^= k >> 33;
  k *= 0xff51afd7ed558ccdULL;
  k ^= k >> 33;
  k *= 0xc4ceb9fe1a85ec53ULL;
  k ^= k >> 33;
  return k;
}

// Secondary hash used for sampling groups; independent of the partition hash
// so group membership is not correlated with the destination index.
constexpr std::uint64_t group_hash64(std::string_view bytes) noexcept {
  return fmix64(fnv1a64(bytes) ^ 0x9e3779b97f4a7c15ULL);
}

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Fixed framing overhead charged to every message.
inline constexpr std::size_t kMessageHeaderBytes = 8;

// Fixed-width little-endian 8-byte integer codec for numeric values.
inline std::string encode_i64(std::int64_t v) {
  std::string out(8, '\0');
  auto u = static_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out[i] = static_cast<char>((u >> (8 * i)) & 0xff);
  return out;
}

inline std::int64_t decode_i64(std::string_view bytes) {
  if (bytes.size() != 8) throw InvalidArgument("value is not an 8-byte integer");
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i)
    u |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[i])) << (8 * i);
  return static_cast<std::int64_t>(u);
}

class Message {
 public:
  Message(std::string key, std::string value) : key_(std::move(key)), value_(std::move(value)) {
    if (key_.empty()) throw InvalidArgument("message key must be non-empty");
  }
  Message(std::string key, std::int64_t v) : Message(std::move(key), encode_i64(v)) {}

  const std::string& key() const noexcept { return key_; }
  const std::string& value() const noexcept { return value_; }
  std::int64_t int_value() const { return decode_i64(value_); }
  std::size_t size() const noexcept { return key_.size() + value_.size() + kMessageHeaderBytes; }

  friend bool operator==(const Message&, const Message&) = default;
  friend auto operator<=>(const Message&, const Message&) = default;

 private:
  std::string key_;
  std::string value_;
};

/// Ordered multiset of messages with a cached byte total.
class MessageBuffer {
 public:
  MessageBuffer() = default;
  MessageBuffer(std::initializer_list<Message> msgs) {
    for (const auto& m : msgs) push_back(m);
  }
  explicit MessageBuffer(std::vector<Message> msgs) : msgs_(std::move(msgs)) {
    for (const auto& m : msgs_) bytes_ += m.size();
  }

  void push_back(Message m) {
    bytes_ += m.size();
    msgs_.push_back(std::move(m));
  }
  void append(const MessageBuffer& other) {
    msgs_.insert(msgs_.end(), other.msgs_.begin(), other.msgs_.end());
    bytes_ += other.bytes_;
  }
  void append(MessageBuffer&& other) {
    if (msgs_.empty()) {
      *this = std::move(other);
    } else {
      msgs_.insert(msgs_.end(), std::make_move_iterator(other.msgs_.begin()),
                   std::make_move_iterator(other.msgs_.end()));
      bytes_ += other.bytes_;
    }
    other.clear();
  }
  void clear() noexcept {
    msgs_.clear();
    bytes_ = 0;
  }

  std::span<const Message> messages() const noexcept { return msgs_; }
  auto begin() const noexcept { return msgs_.begin(); }
  auto end() const noexcept { return msgs_.end(); }
  std::size_t size() const noexcept { return msgs_.size(); }
  bool empty() const noexcept { return msgs_.empty(); }
  std::size_t total_bytes() const noexcept { return bytes_; }

  bool invariant_holds() const noexcept {
    std::size_t sum = 0;
    for (const auto& m : msgs_) sum += m.size();
    return sum == bytes_;
  }

  friend bool operator==(const MessageBuffer& a, const MessageBuffer& b) { return a.msgs_ == b.msgs_; }

 private:
  std::vector<Message> msgs_;
  std::size_t bytes_ = 0;
};

struct PartitionFn {
  std::string id;
  std::function<std::size_t(const Message&, std::span<const WorkerId>)> eval;
};

struct CombinerFn {
  std::string id;
  std::function<Message(const Message&, const Message&)> eval;
};

inline std::size_t default_partition(const Message& msg, std::span<const WorkerId> dsts) {
  if (dsts.empty()) throw InvalidArgument("default_partition: empty destination list");
  return static_cast<std::size_t>(fnv1a64(msg.key()) % dsts.size());
}

namespace combiners {

inline Message sum(const Message& a, const Message& b) {
  return Message(a.key(), a.int_value() + b.int_value());
}
inline Message min(const Message& a, const Message& b) {
  return Message(a.key(), std::min(a.int_value(), b.int_value()));
}
inline Message max(const Message& a, const Message& b) {
  return Message(a.key(), std::max(a.int_value(), b.int_value()));
}

}  // namespace combiners

// Name -> function lookup for templates. Functions cross the shuffle API by id.
class FunctionRegistry {
 public:
  static FunctionRegistry with_builtins() {
    FunctionRegistry r;
    r.add_partition({"default", default_partition});
    r.add_combiner({"sum", combiners::sum});
    r.add_combiner({"min", combiners::min});
    r.add_combiner({"max", combiners::max});
    return r;
  }

  void add_partition(PartitionFn fn) {
    auto id = fn.id;
    partitions_[id] = std::make_shared<const PartitionFn>(std::move(fn));
  }
  void add_combiner(CombinerFn fn) {
    auto id = fn.id;
    combiners_[id] = std::make_shared<const CombinerFn>(std::move(fn));
  }

  std::shared_ptr<const PartitionFn> partition(const std::string& id) const {
    auto it = partitions_.find(id);
    if (it == partitions_.end()) throw InstantiationError("unknown partition function '" + id + "'");
    return it->second;
  }
  std::shared_ptr<const CombinerFn> combiner(const std::string& id) const {
    auto it = combiners_.find(id);
    if (it == combiners_.end()) throw InstantiationError("unknown combiner function '" + id + "'");
    return it->second;
  }
  bool has_combiner(const std::string& id) const { return combiners_.contains(id); }

 private:
  std::map<std::string, std::shared_ptr<const PartitionFn>> partitions_;
  std::map<std::string, std::shared_ptr<const CombinerFn>> combiners_;
};

/// Folds every equal-key group to one message; distinct keys keep first-occurrence order.
inline MessageBuffer combine_buffer(const MessageBuffer& buf, const CombinerFn& comb) {
  std::vector<Message> out;
  std::unordered_map<std::string_view, std::size_t> slot;
  out.reserve(buf.size());
  slot.reserve(buf.size());
  // Keys are looked up through views into `buf`, which outlives this loop.
  for (const auto& m : buf) {
    auto [it, fresh] = slot.try_emplace(std::string_view(m.key()), out.size());
    if (fresh) {
      out.push_back(m);
    } else {
      out[it->second] = comb.eval(out[it->second], m);
    }
  }
  return MessageBuffer(std::move(out));
}

/// Splits `buf` over `dsts`; the result holds one (possibly empty) buffer per destination.
inline std::map<WorkerId, MessageBuffer> partition_buffer(const MessageBuffer& buf,
                                                          std::span<const WorkerId> dsts,
                                                          const PartitionFn& part) {
  if (dsts.empty()) throw InvalidArgument("partition_buffer: empty destination list");
  std::vector<MessageBuffer> slots(dsts.size());
  for (const auto& m : buf) {
    std::size_t idx = part.eval(m, dsts);
    if (idx >= dsts.size())
      throw PlanError("partition function '" + part.id + "' returned index " + std::to_string(idx) +
                      " for " + std::to_string(dsts.size()) + " destinations");
    slots[idx].push_back(m);
  }
  std::map<WorkerId, MessageBuffer> out;
  for (std::size_t i = 0; i < dsts.size(); ++i) out[dsts[i]].append(std::move(slots[i]));
  return out;
}

}  // namespace teshu
