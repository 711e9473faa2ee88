#include <gtest/gtest.h>

#include <random>

#include <nlohmann/json.hpp>

#include "cotprune/errors.hpp"
#include "cotprune/trace.hpp"
#include "test_support.hpp"

namespace ct = cotprune::testing;

using namespace cotprune;

namespace {

std::string random_word(std::mt19937& rng) {
  static const std::vector<std::string> pieces = {"a", "bc", "99^2", "=", "+", "9801", "x", "y", "é", "步骤", "(1)", "."};
  std::uniform_int_distribution<std::size_t> pick(0, pieces.size() - 1);
  std::uniform_int_distribution<int> len(1, 3);
  std::string w;
  for (int i = len(rng); i > 0; --i) w += pieces[pick(rng)];
  return w;
}

std::string random_step(std::mt19937& rng) {
  std::uniform_int_distribution<int> words(1, 6);
  std::uniform_int_distribution<int> sep(0, 3);
  std::string s;
  for (int i = words(rng); i > 0; --i) {
    if (!s.empty()) s += sep(rng) == 0 ? "\n" : " ";
    s += random_word(rng);
  }
  return s;
}

}  // namespace

TEST(Segment, SplitsOnBlankLines) {
  const auto chain = segment_chain("a\n\nb\n\nc");
  ASSERT_EQ(chain.size(), 3u);
  EXPECT_EQ(chain.texts(), (std::vector<std::string>{"a", "b", "c"}));
  for (std::size_t i = 0; i < chain.size(); ++i) EXPECT_EQ(chain[i].index, i);
}

TEST(Segment, EmptyAndSingle) {
  EXPECT_TRUE(segment_chain("").empty());
  EXPECT_TRUE(segment_chain("\n\n \n\n").empty());
  EXPECT_EQ(segment_chain("only one step, no blank lines").size(), 1u);
}

TEST(Segment, LongBreaksAndPadding) {
  EXPECT_EQ(segment_chain("a\n\n\n\n\nb").texts(), (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(segment_chain("  a \n\n\t b\t").texts(), (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(segment_chain("one\ntwo\n\nthree").texts(), (std::vector<std::string>{"one\ntwo", "three"}));
  EXPECT_EQ(segment_chain("a\r\n\r\nb").texts(), (std::vector<std::string>{"a", "b"}));
}

TEST(Segment, GoldenFixture) {
  const auto golden = nlohmann::json::parse(ct::slurp(ct::fixture_dir() / "metrics" / "golden.json"));
  for (const auto& c : golden.at("segment_chain")) {
    EXPECT_EQ(segment_chain(c.at("text").get<std::string>()).texts(), c.at("steps").get<std::vector<std::string>>())
        << c.at("text");
  }
  for (const auto& c : golden.at("count_tokens")) {
    EXPECT_EQ(count_tokens(c.at("text").get<std::string>()), c.at("tokens").get<std::size_t>()) << c.at("text");
  }
}

TEST(Segment, RoundTripProperty) {
  std::mt19937 rng(7);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<std::string> steps;
    for (int n = std::uniform_int_distribution<int>(0, 6)(rng); n > 0; --n) steps.push_back(random_step(rng));
    const auto chain = Chain::from_texts(steps);
    EXPECT_EQ(segment_chain(serialize_chain(chain)), chain);
  }
}

TEST(Chain, RejectsInvalidSteps) {
  EXPECT_THROW(Chain::from_texts({"ok", ""}), InvalidArgument);
  EXPECT_THROW(Chain::from_texts({" padded"}), InvalidArgument);
  EXPECT_THROW(Chain::from_texts({"two\n\nsteps"}), InvalidArgument);
  EXPECT_NO_THROW(Chain::from_texts({"one\nline break"}));
}

TEST(Tokens, Examples) {
  EXPECT_EQ(count_tokens("Compute 99^2 + 99 + 1"), 6u);
  EXPECT_EQ(count_tokens(""), 0u);
  EXPECT_EQ(count_tokens("a  b"), 2u);
  EXPECT_EQ(count_tokens("a b　c"), 3u);
}

TEST(Tokens, InvariantUnderWhitespaceEdits) {
  std::mt19937 rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    const std::string text = random_step(rng);
    const auto n = count_tokens(text);
    EXPECT_EQ(count_tokens("  \t" + text + "\n "), n);
    std::string widened = text;
    if (const auto pos = widened.find(' '); pos != std::string::npos) widened.replace(pos, 1, "    ");
    EXPECT_EQ(count_tokens(widened), n);
  }
}

TEST(Metrics, Examples) {
  const auto three = Chain::from_texts({"a b", "c d", "e f"});
  EXPECT_EQ(chain_metrics(three), (ChainMetrics{6, 3}));
  EXPECT_EQ(chain_metrics(Chain{}), (ChainMetrics{0, 0}));
  EXPECT_EQ(chain_metrics(Chain::from_texts({"x y z"})), (ChainMetrics{3, 1}));
}

TEST(Metrics, AdditiveAndStepsBelowTokens) {
  std::mt19937 rng(13);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<std::string> a, b;
    for (int n = std::uniform_int_distribution<int>(0, 5)(rng); n > 0; --n) a.push_back(random_step(rng));
    for (int n = std::uniform_int_distribution<int>(0, 5)(rng); n > 0; --n) b.push_back(random_step(rng));
    auto ab = a;
    ab.insert(ab.end(), b.begin(), b.end());
    const auto ma = chain_metrics(Chain::from_texts(a));
    const auto mb = chain_metrics(Chain::from_texts(b));
    const auto mab = chain_metrics(Chain::from_texts(ab));
    EXPECT_EQ(mab.tokens, ma.tokens + mb.tokens);
    EXPECT_EQ(mab.steps, ma.steps + mb.steps);
    if (mab.tokens > 0) {
      EXPECT_LE(mab.steps, mab.tokens);
    }
  }
}

TEST(Answers, ModeExamples) {
  EXPECT_TRUE(answers_match("72.0", "72", AnswerMode::kNumeric));
  EXPECT_TRUE(answers_match("B", "b", AnswerMode::kChoiceLetter));
  EXPECT_TRUE(answers_match("the answer is \\boxed{9901}", "9901", AnswerMode::kBoxed));
  EXPECT_TRUE(answers_match("  9901 ", "9901", AnswerMode::kExact));
  EXPECT_FALSE(answers_match("9901", "9901.", AnswerMode::kExact));
  EXPECT_FALSE(answers_match("Abc", "abc", AnswerMode::kExact));
}

TEST(Answers, NumericParsing) {
  EXPECT_TRUE(answers_match("total is 1,234.50 dollars", "1234.5", AnswerMode::kNumeric));
  EXPECT_TRUE(answers_match("so x = -3", "-3", AnswerMode::kNumeric));
  EXPECT_TRUE(answers_match("first 5 then 8", "8", AnswerMode::kNumeric));
  EXPECT_FALSE(answers_match("first 5 then 8", "5", AnswerMode::kNumeric));
  EXPECT_EQ(compare_answers("no digits", "5", AnswerMode::kNumeric), MatchResult::kUnparseable);
  EXPECT_EQ(compare_answers("5", "none", AnswerMode::kNumeric), MatchResult::kUnparseable);
  EXPECT_EQ(compare_answers("4", "5", AnswerMode::kNumeric), MatchResult::kMismatch);
}

TEST(Answers, BoxedAndChoice) {
  EXPECT_EQ(extract_boxed("x \\boxed{\\frac{1}{2}} y"), "\\frac{1}{2}");
  EXPECT_TRUE(answers_match("\\boxed{\\frac{1}{2}}", "\\frac{1}{2}", AnswerMode::kBoxed));
  EXPECT_TRUE(answers_match("\\boxed{42}", "\\boxed{42.0}", AnswerMode::kBoxed));
  EXPECT_TRUE(answers_match("plain 7", "7", AnswerMode::kBoxed));
  EXPECT_TRUE(answers_match("(c) because", "C", AnswerMode::kChoiceLetter));
  EXPECT_EQ(compare_answers("123", "A", AnswerMode::kChoiceLetter), MatchResult::kUnparseable);
}

TEST(Answers, ReflexiveProperty) {
  std::mt19937 rng(17);
  for (int trial = 0; trial < 300; ++trial) {
    const auto x = random_step(rng);
    EXPECT_TRUE(answers_match(x, x, AnswerMode::kExact)) << x;
  }
}

TEST(Answers, ModeNames) {
  for (auto mode : {AnswerMode::kExact, AnswerMode::kNumeric, AnswerMode::kChoiceLetter, AnswerMode::kBoxed}) {
    EXPECT_EQ(parse_answer_mode(to_string(mode)), mode);
  }
  EXPECT_FALSE(parse_answer_mode("fuzzy"));
}

TEST(Answers, FinalAnswerIsLastStep) {
  EXPECT_EQ(extract_final_answer(segment_chain("9801 + 99 + 1\n\n9901")), "9901");
  EXPECT_EQ(extract_final_answer(Chain{}), "");
}
