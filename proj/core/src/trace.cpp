#include "cotprune/trace.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <regex>

#include "cotprune/errors.hpp"

namespace cotprune {
namespace {

struct Decoded {
  char32_t cp;
  std::size_t length;
};

// Invalid sequences decode as a single opaque byte, which is never whitespace.
Decoded decode_utf8(std::string_view s, std::size_t i) noexcept {
  const auto b0 = static_cast<unsigned char>(s[i]);
  if (b0 < 0x80) return {b0, 1};
  std::size_t len = 0;
  char32_t cp = 0;
  if ((b0 & 0xE0) == 0xC0) {
    len = 2;
    cp = b0 & 0x1F;
  } else if ((b0 & 0xF0) == 0xE0) {
    len = 3;
    cp = b0 & 0x0F;
  } else if ((b0 & 0xF8) == 0xF0) {
    len = 4;
    cp = b0 & 0x07;
  } else {
    return {0xFFFD, 1};
  }
  if (i + len > s.size()) return {0xFFFD, 1};
  for (std::size_t k = 1; k < len; ++k) {
    const auto b = static_cast<unsigned char>(s[i + k]);
    if ((b & 0xC0) != 0x80) return {0xFFFD, 1};
    cp = (cp << 6) | (b & 0x3F);
  }
  return {cp, len};
}

std::string normalize_newlines(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '\r' && i + 1 < text.size() && text[i + 1] == '\n') continue;
    out.push_back(text[i]);
  }
  return out;
}

MatchResult compare_numeric(std::string_view predicted, std::string_view gold) {
  const auto p = parse_last_number(predicted);
  const auto g = parse_last_number(gold);
  if (!p || !g) return MatchResult::kUnparseable;
  return std::fabs(*p - *g) <= 1e-9 ? MatchResult::kMatch : MatchResult::kMismatch;
}

MatchResult compare_exact(std::string_view predicted, std::string_view gold) {
  return trim(predicted) == trim(gold) ? MatchResult::kMatch : MatchResult::kMismatch;
}

std::optional<char> first_letter(std::string_view s) {
  for (char c : s) {
    if (std::isalpha(static_cast<unsigned char>(c))) {
      return static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
  }
  return std::nullopt;
}

}  // namespace

bool is_unicode_space(char32_t cp) noexcept {
  switch (cp) {
    case 0x09: case 0x0A: case 0x0B: case 0x0C: case 0x0D: case 0x20:
    case 0x85: case 0xA0: case 0x1680:
    case 0x2028: case 0x2029: case 0x202F: case 0x205F: case 0x3000:
      return true;
    default:
      return cp >= 0x2000 && cp <= 0x200A;
  }
}

std::string_view trim(std::string_view text) noexcept {
  std::size_t begin = 0;
  while (begin < text.size()) {
    const auto d = decode_utf8(text, begin);
    if (!is_unicode_space(d.cp)) break;
    begin += d.length;
  }
  // Scan forward remembering the end of the last non-space code point.
  std::size_t end = begin;
  for (std::size_t i = begin; i < text.size();) {
    const auto d = decode_utf8(text, i);
    i += d.length;
    if (!is_unicode_space(d.cp)) end = i;
  }
  return text.substr(begin, end - begin);
}

Chain Chain::from_texts(std::span<const std::string> texts) {
  Chain chain;
  chain.steps_.reserve(texts.size());
  for (const auto& text : texts) {
    if (!is_valid_step(text)) {
      throw InvalidArgument("invalid step text at index " + std::to_string(chain.steps_.size()) +
                            ": \"" + text + "\"");
    }
    chain.steps_.push_back(Step{chain.steps_.size(), text});
  }
  return chain;
}

Chain Chain::from_texts(std::initializer_list<std::string> texts) {
  return from_texts(std::span<const std::string>(texts.begin(), texts.size()));
}

std::vector<std::string> Chain::texts() const {
  std::vector<std::string> out;
  out.reserve(steps_.size());
  for (const auto& s : steps_) out.push_back(s.text);
  return out;
}

Chain segment_chain(std::string_view text) {
  const std::string normalized = normalize_newlines(text);
  std::vector<std::string> segments;
  std::size_t seg_start = 0;
  std::size_t i = 0;
  auto flush = [&](std::size_t seg_end) {
    auto piece = trim(std::string_view(normalized).substr(seg_start, seg_end - seg_start));
    if (!piece.empty()) segments.emplace_back(piece);
  };
  while (i < normalized.size()) {
    if (normalized[i] == '\n') {
      std::size_t run = i;
      while (run < normalized.size() && normalized[run] == '\n') ++run;
      if (run - i >= 2) {
        flush(i);
        seg_start = run;
      }
      i = run;
    } else {
      ++i;
    }
  }
  flush(normalized.size());
  return Chain::from_texts(segments);
}

std::string join_steps(std::span<const std::string> steps) {
  std::string out;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (i) out += "\n\n";
    out += steps[i];
  }
  return out;
}

std::string serialize_chain(const Chain& chain) {
  const auto texts = chain.texts();
  return join_steps(texts);
}

bool is_valid_step(std::string_view text) {
  if (text.empty() || trim(text) != text) return false;
  // Segmentation rewrites "\r\n", so a step holding one would not round-trip.
  return text.find("\n\n") == std::string_view::npos &&
         text.find("\r\n") == std::string_view::npos;
}

std::size_t count_tokens(std::string_view text) noexcept {
  std::size_t count = 0;
  bool in_token = false;
  for (std::size_t i = 0; i < text.size();) {
    const auto d = decode_utf8(text, i);
    i += d.length;
    const bool space = is_unicode_space(d.cp);
    if (!space && !in_token) ++count;
    in_token = !space;
  }
  return count;
}

ChainMetrics chain_metrics(const Chain& chain) noexcept {
  ChainMetrics m;
  m.steps = chain.size();
  for (const auto& step : chain.steps()) m.tokens += count_tokens(step.text);
  return m;
}

std::string_view to_string(AnswerMode mode) noexcept {
  switch (mode) {
    case AnswerMode::kExact: return "exact";
    case AnswerMode::kNumeric: return "numeric";
    case AnswerMode::kChoiceLetter: return "choice-letter";
    case AnswerMode::kBoxed: return "boxed";
  }
  return "exact";
}

std::optional<AnswerMode> parse_answer_mode(std::string_view name) noexcept {
  if (name == "exact") return AnswerMode::kExact;
  if (name == "numeric") return AnswerMode::kNumeric;
  if (name == "choice-letter") return AnswerMode::kChoiceLetter;
  if (name == "boxed") return AnswerMode::kBoxed;
  return std::nullopt;
}

std::optional<double> parse_last_number(std::string_view text) {
  static const std::regex kNumber(R"(-?(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?|-?\.\d+)");
  const std::string s(text);
  std::optional<std::string> last;
  for (auto it = std::sregex_iterator(s.begin(), s.end(), kNumber); it != std::sregex_iterator();
       ++it) {
    last = it->str();
  }
  if (!last) return std::nullopt;
  std::string digits;
  for (char c : *last) {
    if (c != ',') digits.push_back(c);
  }
  try {
    return std::stod(digits);
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

std::optional<std::string> extract_boxed(std::string_view text) {
  constexpr std::string_view kOpen = "boxed{";
  const auto pos = text.rfind(kOpen);
  if (pos == std::string_view::npos) return std::nullopt;
  const std::size_t start = pos + kOpen.size();
  int depth = 1;
  for (std::size_t i = start; i < text.size(); ++i) {
    if (text[i] == '{') {
      ++depth;
    } else if (text[i] == '}' && --depth == 0) {
      return std::string(trim(text.substr(start, i - start)));
    }
  }
  return std::nullopt;
}

MatchResult compare_answers(std::string_view predicted, std::string_view gold, AnswerMode mode) {
  switch (mode) {
    case AnswerMode::kExact:
      return compare_exact(predicted, gold);
    case AnswerMode::kNumeric:
      return compare_numeric(predicted, gold);
    case AnswerMode::kChoiceLetter: {
      const auto p = first_letter(predicted);
      const auto g = first_letter(gold);
      if (!p || !g) return MatchResult::kUnparseable;
      return *p == *g ? MatchResult::kMatch : MatchResult::kMismatch;
    }
    case AnswerMode::kBoxed: {
      const std::string p = extract_boxed(predicted).value_or(std::string(predicted));
      const std::string g = extract_boxed(gold).value_or(std::string(gold));
      if (compare_numeric(p, g) == MatchResult::kMatch) return MatchResult::kMatch;
      return compare_exact(p, g);
    }
  }
  return MatchResult::kMismatch;
}

bool answers_match(std::string_view predicted, std::string_view gold, AnswerMode mode) {
  return compare_answers(predicted, gold, mode) == MatchResult::kMatch;
}

std::string_view extract_final_answer(const Chain& chain) noexcept {
  if (chain.empty()) return {};
  return chain.steps().back().text;
}

}  // namespace cotprune
