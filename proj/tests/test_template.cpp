#include <gtest/gtest.h>

#include "teshu/algorithms.hpp"
#include "teshu/template.hpp"

using namespace teshu;

namespace {
int error_line(const std::string& text) {
  try {
    parse_template(text);
  } catch (const TemplateParseError& e) {
    return e.line;
  }
  return -1;
}
}  // namespace

TEST(Parse, VanillaPush) {
  auto t = algorithms::vanilla_push();
  EXPECT_EQ(t.id, "vanilla_push");
  EXPECT_EQ(t.mode, "push");
  EXPECT_FALSE(t.all_participants);
  EXPECT_FALSE(t.requires_combiner);
  EXPECT_TRUE(t.params.empty());
  ASSERT_EQ(t.sender.size(), 4u);
  EXPECT_EQ(t.sender[0].op, Op::Part);
  EXPECT_EQ(t.sender[0].args, (std::vector<std::string>{"parts", "bufs", "dsts"}));
}

TEST(Parse, NetworkAwareHeader) {
  auto t = algorithms::network_aware();
  EXPECT_TRUE(t.requires_combiner);
  EXPECT_EQ(t.params, (std::set<std::string>{"RATE"}));
  auto ops = t.ops_used();
  for (Op op : {Op::Comb, Op::Part, Op::Send, Op::Recv, Op::Samp}) EXPECT_TRUE(ops.contains(op)) << op_name(op);
}

TEST(Parse, SerializeRoundTripIsStable) {
  for (const auto& [id, body] : algorithms::builtin_sources()) {
    auto once = serialize_template(parse_template(body));
    auto twice = serialize_template(parse_template(once));
    EXPECT_EQ(once, twice) << id;
    EXPECT_EQ(parse_template(once).id, id);
  }
}

TEST(Parse, CommentsAndBlankLinesIgnored) {
  std::string text =
      "# leading comment\n\ntemplate t\nmode push\nscope roles\nsender:\n  PART p bufs dsts  # trailing\n"
      "  FOR d IN dsts\n    SEND d p[d]\n  END\nreceiver:\n  FOR n IN srcs\n    RECV r[n] n\n  END\n  COMB out r\n";
  auto t = parse_template(text);
  EXPECT_EQ(t.sender.size(), 4u);
  EXPECT_EQ(t.receiver.size(), 4u);
}

TEST(Parse, MalformedInputsReportLine) {
  const std::string head = "template t\nmode push\nscope roles\n";
  EXPECT_EQ(error_line(head + "sender:\n  BOGUS x\nreceiver:\n"), 5);
  EXPECT_EQ(error_line(head + "sender:\n  FOR d IN dsts\n    SEND d bufs\nreceiver:\n"), 5);  // unterminated FOR
  EXPECT_EQ(error_line(head + "sender:\n  SEND d\nreceiver:\n"), 5);
  EXPECT_EQ(error_line(head + "sender:\n  END\nreceiver:\n"), 5);
  EXPECT_GT(error_line("mode push\nsender:\nreceiver:\n"), 0);
  EXPECT_GT(error_line("template t\nmode sideways\nsender:\nreceiver:\n"), 0);
}

TEST(Parse, ParamsMustBeDeclaredAndUsed) {
  const std::string body = "sender:\n  FOR n IN $RING_ORDER\n    SEND n bufs\n  END\nreceiver:\n";
  EXPECT_THROW(parse_template("template t\nmode push\nscope roles\n" + body), TemplateParseError);
  EXPECT_NO_THROW(parse_template("template t\nmode push\nscope roles\nparam RING_ORDER\n" + body));
  EXPECT_THROW(parse_template("template t\nmode push\nscope roles\nparam RATE\nsender:\nreceiver:\n"), TemplateParseError);
}

TEST(Parse, ShippedTemplatesHaveModestSize) {
  for (const auto& [id, body] : algorithms::builtin_sources()) {
    auto t = parse_template(body);
    EXPECT_LE(t.sender.size() + t.receiver.size(), 40u) << id;
    EXPECT_GE(t.sender.size() + t.receiver.size(), 2u) << id;
  }
}
