#include "cotprune/validation.hpp"

#include <cctype>

#include "cotprune/errors.hpp"
#include "cotprune/prompts.hpp"

namespace cotprune {

std::string_view to_string(ValidationMode mode) noexcept {
  return mode == ValidationMode::kCoherence ? "coherence" : "answer-only";
}

std::optional<ValidationMode> parse_validation_mode(std::string_view name) noexcept {
  if (name == "answer-only") return ValidationMode::kAnswerOnly;
  if (name == "coherence") return ValidationMode::kCoherence;
  return std::nullopt;
}

bool parse_yes_no(std::string_view reply) noexcept {
  reply = trim(reply);
  while (!reply.empty() && !std::isalpha(static_cast<unsigned char>(reply.front()))) {
    reply.remove_prefix(1);
  }
  if (reply.size() < 3) return false;
  auto lower = [](char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); };
  const bool yes = lower(reply[0]) == 'y' && lower(reply[1]) == 'e' && lower(reply[2]) == 's';
  return yes && (reply.size() == 3 || !std::isalpha(static_cast<unsigned char>(reply[3])));
}

Verdict validate_chain(Backend* validator, const Query& query, const Chain& intervened_chain,
                       std::string_view gold_answer, const ValidationOptions& options) {
  if (intervened_chain.empty()) throw InvalidArgument("cannot validate an empty chain");
  const bool answer_ok =
      answers_match(extract_final_answer(intervened_chain), gold_answer, options.answer_mode);
  if (options.mode == ValidationMode::kAnswerOnly || !answer_ok) {
    return answer_ok ? Verdict::kPass : Verdict::kFail;
  }
  if (validator == nullptr) return Verdict::kMissing;
  const auto steps = intervened_chain.texts();
  try {
    const auto reply =
        validator->generate(coherence_prompt(query.text, steps, options.rubric), options.params);
    return parse_yes_no(reply.text) ? Verdict::kPass : Verdict::kFail;
  } catch (const std::exception&) {
    return Verdict::kMissing;
  }
}

}  // namespace cotprune
