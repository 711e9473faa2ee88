#pragma once

// Step-level necessity estimation and the sufficiency-gated pruning loop.
//
// For a chain that already yields the gold answer, each step s_t is replaced
// by a counterfactual step, the rollout model continues from the kept prefix
// k times, and the validator scores each continuation. The step's PNS
// estimate is one minus the mean verdict; the step is kept iff the estimate
// exceeds alpha. Steps are visited in order and each one is conditioned on
// the steps kept so far, not on the original prefix.

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cotprune/gateway.hpp"
#include "cotprune/prompts.hpp"
#include "cotprune/trace.hpp"
#include "cotprune/validation.hpp"

namespace cotprune {

struct PruneConfig {
  double alpha = 0.5;
  int k = 8;
  InterventionKind strategy = InterventionKind::kPromptBased;
  /// Extra attempts after the first when the counterfactual step is too
  /// close to the original.
  int max_disjointness_retries = 2;
  /// Jaccard similarity at or above which two segments count as the same.
  double disjointness_threshold = 0.7;
  /// Redraws allowed per step for continuations that are not disjoint or
  /// that the validator could not score. Unset means 2k.
  std::optional<int> redraw_budget;
  /// Draw a fresh counterfactual step for every rollout instead of one per step.
  bool resample_alt_per_rollout = false;
  /// After a prune, regenerate the rest of the chain from the kept prefix
  /// and keep going over the regenerated steps. Output is then no longer a
  /// subsequence of the input.
  bool cascade = false;
  /// Rollouts of one step that may be in flight together.
  int rollout_concurrency = 1;
  AnswerMode answer_mode = AnswerMode::kExact;
  ValidationMode validation = ValidationMode::kAnswerOnly;
  std::optional<std::string> coherence_rubric;

  /// Throws InvalidArgument when out of range.
  void validate() const;
  int effective_redraw_budget() const { return redraw_budget.value_or(2 * k); }
};

struct ModelRoles {
  /// Initial CoT generation and answer scoring.
  std::shared_ptr<Backend> base;
  /// Counterfactual steps (Direct, PromptBased) and continuations.
  std::shared_ptr<Backend> rollout;
  /// Coherence judgments.
  std::shared_ptr<Backend> validator;
  /// Counterfactual steps for the External strategy.
  std::shared_ptr<Backend> external;

  /// Throws InvalidArgument when a role the config needs is missing.
  void validate(const PruneConfig& config) const;
};

/// One counterfactual chain (kept prefix, alt_step, continuation).
struct InterventionRecord {
  std::size_t position = 0;
  std::string alt_step;
  std::vector<std::string> continuation;
  Verdict verdict = Verdict::kMissing;
  /// Continuation passed the disjointness check against the original suffix.
  bool disjoint = true;
  bool truncated = false;
};

/// The intervened chain a record describes.
Chain intervened_chain(std::span<const std::string> kept_prefix, const InterventionRecord& record);

struct PnsEstimate {
  std::size_t position = 0;
  std::string step_text;
  std::vector<InterventionRecord> samples;
  /// 1 - mean of the non-missing verdicts; 1 when indeterminate.
  double value = 1.0;
  bool kept = true;
  /// No usable verdicts (or no disjoint alternative); the step is kept.
  bool indeterminate = false;
  bool disjointness_exhausted = false;
  int alt_attempts = 0;
  int redraws = 0;
  bool redraw_budget_exhausted = false;

  /// 0/1 per sample, nullopt for missing.
  std::vector<std::optional<int>> verdicts() const;
};

struct OptimizedTrace {
  CoTTrace original;
  int ps = 0;
  /// Base-model reply used for the sufficiency check.
  std::string initial_prediction;
  bool initial_prediction_unparseable = false;
  std::vector<PnsEstimate> per_step;
  Chain final_chain;
  ChainMetrics initial_metrics;
  ChainMetrics final_metrics;
  /// The last original step was dropped.
  bool final_segment_pruned = false;
  /// Cascade mode regenerated part of the chain.
  bool regenerated = false;
};

/// Deterministic per-call seed derived from a base seed and call coordinates.
std::int64_t derive_seed(std::int64_t base, std::initializer_list<std::uint64_t> parts) noexcept;
std::uint64_t hash_text(std::string_view text) noexcept;

struct SufficiencyCheck {
  int ps = 0;
  std::string prediction;
  MatchResult match = MatchResult::kMismatch;
};

/// Asks the base model for the answer implied by `steps` and compares it to
/// the gold answer. Throws PsIndeterminate when the base model fails, except
/// for BackendUnavailable which propagates.
SufficiencyCheck rollout_answer(const Query& query, std::span<const std::string> steps,
                                std::string_view gold, Backend& base, const GenParams& params,
                                AnswerMode mode);

/// PS for the full chain: 1 iff the rolled-out answer matches the gold one.
/// Throws InvalidArgument for an empty chain.
SufficiencyCheck estimate_ps(const CoTTrace& trace, const ModelRoles& roles,
                             const GenParams& params, AnswerMode mode);

double jaccard_similarity(std::string_view a, std::string_view b);
/// similarity(candidate, original) < threshold, over lower-cased token sets.
bool semantic_disjoint(std::string_view candidate, std::string_view original, double threshold);

struct AlternativeOutcome {
  /// Unset when every attempt echoed the original step.
  std::optional<std::string> text;
  int attempts = 0;
};

AlternativeOutcome generate_alternative(const Query& query,
                                        std::span<const std::string> kept_prefix,
                                        const std::string& original_step, const ModelRoles& roles,
                                        const PruneConfig& config, const GenParams& params);

struct Continuation {
  std::vector<std::string> steps;
  bool truncated = false;
};

/// The rollout model continues from (question, kept prefix, alt step).
Continuation rollout_continuation(const Query& query, std::span<const std::string> kept_prefix,
                                  const std::string& alt_step, const ModelRoles& roles,
                                  const GenParams& params);

/// Estimate for trace.chain[t] given the steps kept so far. The original
/// downstream used for the disjointness check is trace.chain[t+1..].
PnsEstimate estimate_pns_step(const CoTTrace& trace, std::span<const std::string> kept_prefix,
                              std::size_t t, const ModelRoles& roles, const PruneConfig& config,
                              const GenParams& params);

/// Same, with the step and its downstream given explicitly.
PnsEstimate estimate_step(const Query& query, std::string_view gold,
                          std::span<const std::string> kept_prefix, std::size_t position,
                          const std::string& step, std::span<const std::string> downstream,
                          const ModelRoles& roles, const PruneConfig& config,
                          const GenParams& params);

/// The full pruning loop. Throws PsIndeterminate if sufficiency cannot be decided.
OptimizedTrace optimize_chain(const CoTTrace& trace, const ModelRoles& roles,
                              const PruneConfig& config, const GenParams& params);

/// Mean estimate over the steps that were evaluated, or over kept ones.
std::optional<double> mean_pns_evaluated(std::span<const PnsEstimate> estimates);
std::optional<double> mean_pns_kept(std::span<const PnsEstimate> estimates);

}  // namespace cotprune
