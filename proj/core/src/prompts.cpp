#include "cotprune/prompts.hpp"

#include "cotprune/errors.hpp"
#include "cotprune/trace.hpp"

namespace cotprune {

const std::string_view kInterventionSystemMessage =
    "You are a helpful assistant. Continue solving the problem using mathematical expressions "
    "only, without repeating previous steps.\n"
    "Provide the final answer once, directly linked to the preceding reasoning, without "
    "additional summaries or explanations.\n"
    "Avoid using summarizing words such as 'so' or 'thus,' and refrain from repeating the final "
    "result when the calculation is already clear.\n"
    "Don't say something like “Let's continue with the previous reasoning” or other "
    "nonsense, just output the following reasoning directly.";

const std::string_view kIclSystemMessage =
    "You are a helpful assistant who is good at reasoning. Whenever doing multistep reasoning, "
    "please use two newline characters to split multiple steps (\\n\\n).";

const std::string_view kDefaultCoherenceRubric =
    "Judge whether these reasoning steps are logically coherent: every step follows from the "
    "question and the earlier steps, and the last step states an answer they support. Reply with "
    "exactly one word: yes or no.";

namespace {

constexpr std::string_view kQuestionHeader = "Question:\n\n";
constexpr std::string_view kContextHeader = "\n\nCurrent reasoning steps:\n\n";
constexpr std::string_view kAvoidHeader = "Ensure the next output node does not match the meaning of:\n\n";
constexpr std::string_view kAvoidFooter =
    "\n\nAvoid repeating the final result directly when the calculation is already clear.\n\n";
constexpr std::string_view kStepsHeader = "\n\nReasoning steps:\n\n";
constexpr std::string_view kAnswerInstruction =
    "\n\nUsing only the reasoning steps above, reply with the final answer and nothing else.\n";

constexpr std::string_view kSolveTail =
    "**Now Solve This:**\n\n*Question:*\n{question}\n\n*Your Simplified and Optimized Answer:*\n";

constexpr std::string_view kOursIclHead =
    "**Instructions**\n"
    "\n"
    "When solving the following questions, your reasoning should:\n"
    "- **Be Accurate:** Ensure your chain of thought leads to the correct answer without skipping "
    "any necessary logical steps.\n"
    "\n"
    "- **Be Efficient:** Avoid unnecessary or redundant steps. Each step should be necessary to "
    "progress toward the solution.\n"
    "\n"
    "- **Aim for Sufficient and Necessary Reasoning:** Only include steps that are both sufficient "
    "to reach the correct answer and necessary to avoid gaps or confusion. If a step can be "
    "removed without affecting correctness, remove it.\n"
    "\n"
    "- **Notice the Pattern:** In the following examples, compare the original, verbose solution "
    "with the optimized solution. Learn to identify and eliminate redundant reasoning steps while "
    "preserving logical soundness.\n"
    "\n"
    "---\n"
    "\n";

constexpr std::string_view kFastSolveHead =
    "You are a math assistant that solves problems step by step. Please reason in a clear and "
    "structured manner, but keep your explanation as concise as possible. Avoid unnecessary "
    "repetition or redundant steps. The goal is to solve the problem accurately with the fewest "
    "necessary steps.\n"
    "\n";

constexpr std::string_view kCodHead =
    "Think step by step, but only keep a minimum draft for\n"
    "each thinking step, with 5 words at most. Return the\n"
    "answer at the end of the response after a separator\n"
    "\n";

constexpr std::string_view kReductionHead =
    "Let’s quickly conclude the answer with shortcut reasoning.\n"
    "\n";

std::string solve_tail(std::string_view question) {
  std::string out(kSolveTail);
  constexpr std::string_view kSlot = "{question}";
  out.replace(out.find(kSlot), kSlot.size(), question);
  return out;
}

std::string render_body(std::string_view query, std::span<const std::string> context_steps) {
  std::string out(kQuestionHeader);
  out += query;
  out += kContextHeader;
  out += join_steps(context_steps);
  out += "\n";
  return out;
}

std::vector<std::string> segment_texts(std::string_view text) { return segment_chain(text).texts(); }

}  // namespace

std::string_view to_string(InterventionKind kind) noexcept {
  switch (kind) {
    case InterventionKind::kDirect: return "direct";
    case InterventionKind::kPromptBased: return "prompt-based";
    case InterventionKind::kExternal: return "external";
  }
  return "direct";
}

std::optional<InterventionKind> parse_intervention_kind(std::string_view name) noexcept {
  if (name == "direct") return InterventionKind::kDirect;
  if (name == "prompt-based") return InterventionKind::kPromptBased;
  if (name == "external") return InterventionKind::kExternal;
  return std::nullopt;
}

PromptBundle intervention_prompt(InterventionKind kind, std::string_view query,
                                 std::span<const std::string> context_steps,
                                 std::string_view current_step) {
  PromptBundle prompt;
  prompt.system = std::string(kInterventionSystemMessage);
  if (kind == InterventionKind::kPromptBased) {
    if (trim(current_step).empty()) {
      throw InvalidArgument("prompt-based intervention needs the current step");
    }
    prompt.user = std::string(kAvoidHeader);
    prompt.user += current_step;
    prompt.user += kAvoidFooter;
  }
  prompt.user += render_body(query, context_steps);
  return prompt;
}

std::string_view to_string(IclKind kind) noexcept {
  switch (kind) {
    case IclKind::kStandard: return "standard";
    case IclKind::kFastSolve: return "fast-solve";
    case IclKind::kReduction: return "reduction";
    case IclKind::kChainOfDraft: return "cod";
    case IclKind::kOursIcl: return "ours-icl";
  }
  return "standard";
}

std::optional<IclKind> parse_icl_kind(std::string_view name) noexcept {
  if (name == "standard") return IclKind::kStandard;
  if (name == "fast-solve") return IclKind::kFastSolve;
  if (name == "reduction") return IclKind::kReduction;
  if (name == "cod") return IclKind::kChainOfDraft;
  if (name == "ours-icl") return IclKind::kOursIcl;
  return std::nullopt;
}

std::string format_exemplar(const IclExemplar& exemplar) {
  return "Question: " + exemplar.question + "\nAnswer:\n" + exemplar.answer;
}

PromptBundle icl_prompt(const IclVariant& variant, std::string_view question) {
  if (trim(question).empty()) throw InvalidArgument("ICL question must not be empty");
  PromptBundle prompt;
  prompt.system = std::string(kIclSystemMessage);
  switch (variant.kind) {
    case IclKind::kStandard:
      prompt.user = std::string(question);
      break;
    case IclKind::kFastSolve:
      prompt.user = std::string(kFastSolveHead) + solve_tail(question);
      break;
    case IclKind::kChainOfDraft:
      prompt.user = std::string(kCodHead) + solve_tail(question);
      break;
    case IclKind::kReduction:
      prompt.user = std::string(kReductionHead) + solve_tail(question);
      break;
    case IclKind::kOursIcl: {
      const auto n = variant.exemplars.size();
      if (n == 0 || n > kMaxIclExemplars) {
        throw InvalidArgument("ours-icl needs between 1 and 5 exemplars, got " + std::to_string(n));
      }
      prompt.user = std::string(kOursIclHead);
      for (std::size_t i = 0; i < n; ++i) {
        prompt.user += "**Example " + std::to_string(i + 1) + ":** ";
        prompt.user += format_exemplar(variant.exemplars[i]);
        prompt.user += "\n\n";
      }
      prompt.user += solve_tail(question);
      break;
    }
  }
  return prompt;
}

PromptBundle answer_prompt(std::string_view question, std::span<const std::string> steps) {
  PromptBundle prompt;
  prompt.system = std::string(kIclSystemMessage);
  prompt.user = std::string(kQuestionHeader);
  prompt.user += question;
  prompt.user += kStepsHeader;
  prompt.user += join_steps(steps);
  prompt.user += kAnswerInstruction;
  return prompt;
}

PromptBundle coherence_prompt(std::string_view question, std::span<const std::string> steps,
                              std::optional<std::string_view> rubric) {
  PromptBundle prompt;
  prompt.system = "You are a careful grader of step-by-step solutions.";
  prompt.user = std::string(kQuestionHeader);
  prompt.user += question;
  prompt.user += kStepsHeader;
  prompt.user += join_steps(steps);
  prompt.user += "\n\n";
  prompt.user += rubric.value_or(kDefaultCoherenceRubric);
  prompt.user += "\n";
  return prompt;
}

PromptBundle initial_cot_prompt(std::string_view question) {
  return icl_prompt(IclVariant{IclKind::kStandard, {}}, question);
}

std::optional<ParsedInterventionPrompt> parse_intervention_prompt(const PromptBundle& prompt) {
  std::string_view user = prompt.user;
  ParsedInterventionPrompt parsed;
  if (user.starts_with(kAvoidHeader)) {
    const auto end = user.find(kAvoidFooter, kAvoidHeader.size());
    if (end == std::string_view::npos) return std::nullopt;
    parsed.avoid_step = std::string(user.substr(kAvoidHeader.size(), end - kAvoidHeader.size()));
    user.remove_prefix(end + kAvoidFooter.size());
  }
  if (!user.starts_with(kQuestionHeader)) return std::nullopt;
  const auto ctx = user.find(kContextHeader, kQuestionHeader.size());
  if (ctx == std::string_view::npos) return std::nullopt;
  parsed.query = std::string(user.substr(kQuestionHeader.size(), ctx - kQuestionHeader.size()));
  parsed.context_steps = segment_texts(user.substr(ctx + kContextHeader.size()));
  return parsed;
}

std::optional<ParsedAnswerPrompt> parse_answer_prompt(const PromptBundle& prompt) {
  std::string_view user = prompt.user;
  if (!user.starts_with(kQuestionHeader) || !user.ends_with(kAnswerInstruction)) return std::nullopt;
  const auto steps = user.find(kStepsHeader, kQuestionHeader.size());
  if (steps == std::string_view::npos) return std::nullopt;
  ParsedAnswerPrompt parsed;
  parsed.query = std::string(user.substr(kQuestionHeader.size(), steps - kQuestionHeader.size()));
  const auto body_start = steps + kStepsHeader.size();
  const auto body_end = user.size() - kAnswerInstruction.size();
  parsed.steps = segment_texts(user.substr(body_start, body_end - body_start));
  return parsed;
}

}  // namespace cotprune
