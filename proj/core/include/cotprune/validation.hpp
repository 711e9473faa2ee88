#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "cotprune/gateway.hpp"
#include "cotprune/trace.hpp"

namespace cotprune {

enum class ValidationMode { kAnswerOnly, kCoherence };

std::string_view to_string(ValidationMode mode) noexcept;
/// Accepts "answer-only" and "coherence".
std::optional<ValidationMode> parse_validation_mode(std::string_view name) noexcept;

/// Validator output for one intervened chain. kMissing means the validator
/// failed and the sample carries no information.
enum class Verdict { kFail = 0, kPass = 1, kMissing };

struct ValidationOptions {
  AnswerMode answer_mode = AnswerMode::kExact;
  ValidationMode mode = ValidationMode::kAnswerOnly;
  std::optional<std::string> rubric;
  GenParams params;
};

/// Answer-only: kPass iff the chain's last step matches the gold answer.
/// Coherence: additionally requires the validator to reply "yes"; the
/// validator is not consulted when the answer is already wrong. Validator
/// errors give kMissing. Throws InvalidArgument for an empty chain.
Verdict validate_chain(Backend* validator, const Query& query, const Chain& intervened_chain,
                       std::string_view gold_answer, const ValidationOptions& options);

/// True when the first word of the reply is "yes" (case-insensitive).
bool parse_yes_no(std::string_view reply) noexcept;

}  // namespace cotprune
