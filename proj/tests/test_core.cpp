#include <gtest/gtest.h>

#include <random>

#include "oracle.hpp"
#include "teshu/core.hpp"

using namespace teshu;

TEST(Hash, FrozenValues) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a64("a") % 26, 24u);
}

TEST(Hash, LetterPartitionIndices) {
  // Computed offline from the FNV-1a definition.
  const std::vector<std::size_t> expected = {24, 25, 16, 23, 14, 15, 6, 1, 18, 19, 10, 17, 8,
                                             9,  0,  21, 12, 13, 4,  11, 2, 3,  20, 15, 6, 7};
  WorkerList dsts(26);
  for (WorkerId i = 0; i < 26; ++i) dsts[i] = i;
  for (int c = 0; c < 26; ++c) {
    Message m(std::string(1, static_cast<char>('a' + c)), std::int64_t{1});
    EXPECT_EQ(default_partition(m, dsts), expected[c]) << static_cast<char>('a' + c);
  }
}

TEST(Hash, MatchesReferenceOnRandomKeys) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 500; ++i) {
    std::string k(1 + rng() % 20, 'x');
    for (auto& ch : k) ch = static_cast<char>(rng() % 256);
    EXPECT_EQ(fnv1a64(k), oracle::fnv(k));
  }
}

TEST(Codec, RoundTrip) {
  for (std::int64_t v : {std::int64_t{0}, std::int64_t{1}, std::int64_t{-1}, std::int64_t{1} << 40,
                         std::numeric_limits<std::int64_t>::min(), std::numeric_limits<std::int64_t>::max()}) {
    auto enc = encode_i64(v);
    EXPECT_EQ(enc.size(), 8u);
    EXPECT_EQ(decode_i64(enc), v);
    EXPECT_EQ(oracle::le64(enc), v);
  }
  EXPECT_EQ(encode_i64(1), std::string("\x01\0\0\0\0\0\0\0", 8));
  EXPECT_THROW(decode_i64("abc"), InvalidArgument);
}

TEST(Message, SizeAndValidation) {
  Message m("abc", std::int64_t{5});
  EXPECT_EQ(m.size(), 3u + 8u + kMessageHeaderBytes);
  EXPECT_EQ(m.int_value(), 5);
  EXPECT_THROW(Message("", std::int64_t{1}), InvalidArgument);
}

TEST(MessageBuffer, ByteTotalInvariant) {
  MessageBuffer b;
  EXPECT_EQ(b.total_bytes(), 0u);
  b.push_back(Message("a", std::int64_t{1}));
  b.push_back(Message("bbbb", std::int64_t{2}));
  MessageBuffer c{Message("zz", std::int64_t{3})};
  b.append(c);
  EXPECT_TRUE(b.invariant_holds());
  EXPECT_EQ(b.total_bytes(), 17u + 20u + 18u);
  b.append(MessageBuffer{});
  EXPECT_EQ(b.size(), 3u);
}

namespace {
MessageBuffer random_buffer(std::mt19937_64& rng, std::size_t n, std::size_t keys) {
  MessageBuffer b;
  for (std::size_t i = 0; i < n; ++i)
    b.push_back(Message("k" + std::to_string(rng() % keys), static_cast<std::int64_t>(rng() % 1000) - 500));
  return b;
}
oracle::KeyMap sums(const MessageBuffer& b) {
  oracle::KeyMap m;
  for (const auto& x : b) m[x.key()] += x.int_value();
  return m;
}
}  // namespace

TEST(Combine, FoldsEqualKeysAndKeepsFirstOccurrenceOrder) {
  MessageBuffer b{Message("b", std::int64_t{1}), Message("a", std::int64_t{2}), Message("b", std::int64_t{3})};
  auto out = combine_buffer(b, {"sum", combiners::sum});
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out.messages()[0].key(), "b");
  EXPECT_EQ(out.messages()[0].int_value(), 4);
  EXPECT_EQ(out.messages()[1].int_value(), 2);
  EXPECT_TRUE(out.invariant_holds());
  EXPECT_EQ(combine_buffer(MessageBuffer{}, {"sum", combiners::sum}).size(), 0u);
}

TEST(Combine, PropertyPreservesTotalsAndIsIdempotent) {
  std::mt19937_64 rng(11);
  CombinerFn sum{"sum", combiners::sum};
  for (int trial = 0; trial < 100; ++trial) {
    auto b = random_buffer(rng, rng() % 300, 1 + rng() % 40);
    auto c = combine_buffer(b, sum);
    EXPECT_EQ(sums(c), sums(b));
    EXPECT_LE(c.total_bytes(), b.total_bytes());
    EXPECT_EQ(combine_buffer(c, sum), c);
  }
}

TEST(Combine, BuiltinCombinersAreCommutativeAndAssociative) {
  std::mt19937_64 rng(3);
  for (auto fn : {combiners::sum, combiners::min, combiners::max}) {
    for (int i = 0; i < 200; ++i) {
      Message a("k", static_cast<std::int64_t>(rng() % 2000) - 1000);
      Message b("k", static_cast<std::int64_t>(rng() % 2000) - 1000);
      Message c("k", static_cast<std::int64_t>(rng() % 2000) - 1000);
      EXPECT_EQ(fn(a, b), fn(b, a));
      EXPECT_EQ(fn(fn(a, b), c), fn(a, fn(b, c)));
    }
  }
}

TEST(Partition, EveryMessageLandsOnceAtItsHashedDestination) {
  std::mt19937_64 rng(5);
  PartitionFn part{"default", default_partition};
  for (int trial = 0; trial < 50; ++trial) {
    auto b = random_buffer(rng, rng() % 400, 100);
    WorkerList dsts;
    for (WorkerId w = 0, n = 1 + static_cast<WorkerId>(rng() % 9); w < n; ++w) dsts.push_back(w * 3 + 1);
    auto parts = partition_buffer(b, dsts, part);
    ASSERT_EQ(parts.size(), dsts.size());
    std::size_t count = 0, bytes = 0;
    for (const auto& [d, pb] : parts) {
      count += pb.size();
      bytes += pb.total_bytes();
      for (const auto& m : pb) EXPECT_EQ(dsts[oracle::fnv(m.key()) % dsts.size()], d);
    }
    EXPECT_EQ(count, b.size());
    EXPECT_EQ(bytes, b.total_bytes());
  }
}

TEST(Partition, Errors) {
  MessageBuffer b{Message("a", std::int64_t{1})};
  EXPECT_THROW(partition_buffer(b, WorkerList{}, {"default", default_partition}), InvalidArgument);
  PartitionFn bad{"bad", [](const Message&, std::span<const WorkerId> d) { return d.size(); }};
  try {
    partition_buffer(b, WorkerList{0, 1}, bad);
    FAIL();
  } catch (const PlanError& e) {
    EXPECT_NE(std::string(e.what()).find("bad"), std::string::npos);
  }
}

TEST(Registry, LookupAndUnknownIds) {
  auto r = FunctionRegistry::with_builtins();
  EXPECT_EQ(r.partition("default")->id, "default");
  EXPECT_TRUE(r.has_combiner("sum"));
  EXPECT_TRUE(r.has_combiner("min"));
  EXPECT_THROW(r.combiner("median"), InstantiationError);
  EXPECT_THROW(r.partition("range"), InstantiationError);
}
