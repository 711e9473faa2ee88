#pragma once

// Prompt templates: counterfactual-intervention rollouts, ICL baselines, and
// the artifact's own answer-scoring and coherence prompts.

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cotprune/gateway.hpp"

namespace cotprune {

enum class InterventionKind { kDirect, kPromptBased, kExternal };

std::string_view to_string(InterventionKind kind) noexcept;
/// Accepts "direct", "prompt-based", "external".
std::optional<InterventionKind> parse_intervention_kind(std::string_view name) noexcept;

/// System message shared by every intervention rollout.
extern const std::string_view kInterventionSystemMessage;
/// System message shared by every ICL variant.
extern const std::string_view kIclSystemMessage;

/// Direct and External share a body; PromptBased prefixes it with the
/// "does not match the meaning of" block. Throws InvalidArgument for
/// PromptBased with an empty current step.
PromptBundle intervention_prompt(InterventionKind kind, std::string_view query,
                                 std::span<const std::string> context_steps,
                                 std::string_view current_step);

enum class IclKind { kStandard, kFastSolve, kReduction, kChainOfDraft, kOursIcl };

std::string_view to_string(IclKind kind) noexcept;
/// Accepts "standard", "fast-solve", "reduction", "cod", "ours-icl".
std::optional<IclKind> parse_icl_kind(std::string_view name) noexcept;

struct IclExemplar {
  std::string question;
  /// Optimized reasoning, steps separated by blank lines.
  std::string answer;
};

struct IclVariant {
  IclKind kind = IclKind::kStandard;
  /// Used by kOursIcl only; 1 to 5 entries.
  std::vector<IclExemplar> exemplars;
};

inline constexpr std::size_t kMaxIclExemplars = 5;

/// Text substituted into an "Example N:" slot.
std::string format_exemplar(const IclExemplar& exemplar);

/// Throws InvalidArgument for an empty question, or for kOursIcl without
/// 1..5 exemplars.
PromptBundle icl_prompt(const IclVariant& variant, std::string_view question);

/// Asks the base model for the final answer implied by a chain (the
/// sufficiency rollout and the final-accuracy re-roll).
PromptBundle answer_prompt(std::string_view question, std::span<const std::string> steps);

extern const std::string_view kDefaultCoherenceRubric;

/// Yes/no coherence judgment for the validator in coherence mode.
PromptBundle coherence_prompt(std::string_view question, std::span<const std::string> steps,
                              std::optional<std::string_view> rubric = std::nullopt);

/// Generates an initial CoT for inputs that do not carry one.
PromptBundle initial_cot_prompt(std::string_view question);

/// Locates the parts of a rendered intervention prompt. Used by simulators
/// standing in for the rollout model.
struct ParsedInterventionPrompt {
  std::string query;
  std::vector<std::string> context_steps;
  std::optional<std::string> avoid_step;
};
std::optional<ParsedInterventionPrompt> parse_intervention_prompt(const PromptBundle& prompt);

struct ParsedAnswerPrompt {
  std::string query;
  std::vector<std::string> steps;
};
std::optional<ParsedAnswerPrompt> parse_answer_prompt(const PromptBundle& prompt);

}  // namespace cotprune
