#pragma once

// Reasoning traces and the whitespace/blank-line metrics used to measure them.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cotprune {

struct Query {
  std::string id;
  std::string text;

  bool operator==(const Query&) const = default;
};

struct Step {
  std::size_t index = 0;
  std::string text;

  bool operator==(const Step&) const = default;
};

/// Ordered reasoning steps. Every step is trimmed, non-empty and free of
/// blank-line boundaries, so serialize/segment round-trips exactly.
class Chain {
 public:
  Chain() = default;

  /// Throws InvalidArgument if any text is not a valid single step.
  static Chain from_texts(std::span<const std::string> texts);
  static Chain from_texts(std::initializer_list<std::string> texts);

  const std::vector<Step>& steps() const noexcept { return steps_; }
  std::vector<std::string> texts() const;
  std::size_t size() const noexcept { return steps_.size(); }
  bool empty() const noexcept { return steps_.empty(); }
  const Step& operator[](std::size_t i) const { return steps_[i]; }

  bool operator==(const Chain&) const = default;

 private:
  std::vector<Step> steps_;
};

struct CoTTrace {
  Query query;
  std::string gold_answer;
  Chain chain;
  std::optional<std::string> predicted_answer;
};

struct ChainMetrics {
  std::size_t tokens = 0;
  std::size_t steps = 0;

  bool operator==(const ChainMetrics&) const = default;
};

/// True for the Unicode White_Space code points.
bool is_unicode_space(char32_t cp) noexcept;

/// Strips leading and trailing Unicode whitespace.
std::string_view trim(std::string_view text) noexcept;

/// Splits on runs of two or more newlines ("\r\n" counts as one newline),
/// trims every segment and drops the empty ones.
Chain segment_chain(std::string_view text);

/// Joins steps with exactly one blank line.
std::string serialize_chain(const Chain& chain);
std::string join_steps(std::span<const std::string> steps);

/// Number of maximal runs of non-whitespace code points.
std::size_t count_tokens(std::string_view text) noexcept;

ChainMetrics chain_metrics(const Chain& chain) noexcept;

bool is_valid_step(std::string_view text);

enum class AnswerMode { kExact, kNumeric, kChoiceLetter, kBoxed };

enum class MatchResult { kMatch, kMismatch, kUnparseable };

std::string_view to_string(AnswerMode mode) noexcept;
/// Accepts "exact", "numeric", "choice-letter", "boxed".
std::optional<AnswerMode> parse_answer_mode(std::string_view name) noexcept;

/// Last number in the text; understands "-", decimals and "1,234" grouping.
std::optional<double> parse_last_number(std::string_view text);

/// Payload of the last (innermost) `boxed{...}` group, braces balanced.
std::optional<std::string> extract_boxed(std::string_view text);

/// Full comparison. kUnparseable is returned in numeric mode when either side
/// has no number, and in choice-letter mode when either side has no letter.
MatchResult compare_answers(std::string_view predicted, std::string_view gold, AnswerMode mode);

/// compare_answers() == kMatch.
bool answers_match(std::string_view predicted, std::string_view gold, AnswerMode mode);

/// The answer a chain commits to: its last step, or "" for an empty chain.
std::string_view extract_final_answer(const Chain& chain) noexcept;

}  // namespace cotprune
