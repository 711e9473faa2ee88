#include "cotprune/engine.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <future>
#include <mutex>
#include <set>

#include "cotprune/errors.hpp"

namespace cotprune {
namespace {

// Seed tags, one per kind of model call.
constexpr std::uint64_t kSeedPs = 1;
constexpr std::uint64_t kSeedAlt = 2;
constexpr std::uint64_t kSeedContinuation = 3;
constexpr std::uint64_t kSeedValidate = 5;
constexpr std::uint64_t kSeedRegenerate = 6;

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

GenParams seeded(const GenParams& params, std::initializer_list<std::uint64_t> parts) {
  GenParams out = params;
  if (out.seed) out.seed = derive_seed(*out.seed, parts);
  return out;
}

std::set<std::string> token_set(std::string_view text) {
  std::set<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) tokens.insert(std::move(current));
    current.clear();
  };
  // Walk code points; trim() of a single code point is empty iff it is whitespace.
  std::size_t i = 0;
  while (i < text.size()) {
    std::size_t j = i + 1;
    while (j < text.size() && (static_cast<unsigned char>(text[j]) & 0xC0) == 0x80) ++j;
    const auto cp_text = text.substr(i, j - i);
    if (trim(cp_text).empty()) {
      flush();
    } else {
      for (char c : cp_text) current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    i = j;
  }
  flush();
  return tokens;
}

std::vector<std::string> concat(std::span<const std::string> prefix, const std::string& step,
                                std::span<const std::string> rest = {}) {
  std::vector<std::string> out(prefix.begin(), prefix.end());
  out.push_back(step);
  out.insert(out.end(), rest.begin(), rest.end());
  return out;
}

Backend& require(const std::shared_ptr<Backend>& backend, const char* role) {
  if (!backend) throw InvalidArgument(std::string("missing backend for role ") + role);
  return *backend;
}

}  // namespace

void PruneConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidArgument("alpha must be in [0, 1]");
  if (k < 1) throw InvalidArgument("k must be >= 1");
  if (max_disjointness_retries < 0) throw InvalidArgument("max_disjointness_retries must be >= 0");
  if (!(disjointness_threshold >= 0.0 && disjointness_threshold <= 1.0)) {
    throw InvalidArgument("disjointness_threshold must be in [0, 1]");
  }
  if (redraw_budget && *redraw_budget < 0) throw InvalidArgument("redraw_budget must be >= 0");
  if (rollout_concurrency < 1) throw InvalidArgument("rollout_concurrency must be >= 1");
}

void ModelRoles::validate(const PruneConfig& config) const {
  require(base, "base");
  require(rollout, "rollout");
  if (config.validation == ValidationMode::kCoherence) require(validator, "validator");
  if (config.strategy == InterventionKind::kExternal) require(external, "external");
}

Chain intervened_chain(std::span<const std::string> kept_prefix, const InterventionRecord& record) {
  return Chain::from_texts(concat(kept_prefix, record.alt_step, record.continuation));
}

std::vector<std::optional<int>> PnsEstimate::verdicts() const {
  std::vector<std::optional<int>> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    if (s.verdict == Verdict::kMissing) {
      out.push_back(std::nullopt);
    } else {
      out.push_back(s.verdict == Verdict::kPass ? 1 : 0);
    }
  }
  return out;
}

std::int64_t derive_seed(std::int64_t base, std::initializer_list<std::uint64_t> parts) noexcept {
  std::uint64_t h = splitmix64(static_cast<std::uint64_t>(base));
  for (auto p : parts) h = splitmix64(h ^ splitmix64(p));
  // Keep seeds non-negative; some servers reject negative values.
  return static_cast<std::int64_t>(h >> 1);
}

std::uint64_t hash_text(std::string_view text) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ull;  // FNV-1a
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

SufficiencyCheck rollout_answer(const Query& query, std::span<const std::string> steps,
                                std::string_view gold, Backend& base, const GenParams& params,
                                AnswerMode mode) {
  Completion reply;
  try {
    reply = base.generate(answer_prompt(query.text, steps), params);
  } catch (const BackendUnavailable&) {
    throw;
  } catch (const std::exception& e) {
    throw PsIndeterminate("base model failed for " + query.id + ": " + e.what());
  }
  const Chain reply_chain = segment_chain(reply.text);
  if (reply_chain.empty()) throw PsIndeterminate("base model returned no answer for " + query.id);
  SufficiencyCheck check;
  check.prediction = std::string(extract_final_answer(reply_chain));
  check.match = compare_answers(check.prediction, gold, mode);
  check.ps = check.match == MatchResult::kMatch ? 1 : 0;
  return check;
}

SufficiencyCheck estimate_ps(const CoTTrace& trace, const ModelRoles& roles,
                             const GenParams& params, AnswerMode mode) {
  if (trace.chain.empty()) throw InvalidArgument("sufficiency needs a non-empty chain");
  const auto steps = trace.chain.texts();
  return rollout_answer(trace.query, steps, trace.gold_answer, require(roles.base, "base"),
                        seeded(params, {kSeedPs}), mode);
}

double jaccard_similarity(std::string_view a, std::string_view b) {
  const auto ta = token_set(a);
  const auto tb = token_set(b);
  if (ta.empty() && tb.empty()) return 1.0;
  std::size_t common = 0;
  for (const auto& t : ta) common += tb.count(t);
  const std::size_t all = ta.size() + tb.size() - common;
  return static_cast<double>(common) / static_cast<double>(all);
}

bool semantic_disjoint(std::string_view candidate, std::string_view original, double threshold) {
  return jaccard_similarity(candidate, original) < threshold;
}

AlternativeOutcome generate_alternative(const Query& query,
                                        std::span<const std::string> kept_prefix,
                                        const std::string& original_step, const ModelRoles& roles,
                                        const PruneConfig& config, const GenParams& params) {
  if (trim(original_step).empty()) throw InvalidArgument("original step must not be empty");
  Backend& backend = config.strategy == InterventionKind::kExternal
                         ? require(roles.external, "external")
                         : require(roles.rollout, "rollout");
  const auto prompt = intervention_prompt(config.strategy, query.text, kept_prefix, original_step);
  AlternativeOutcome outcome;
  for (int attempt = 0; attempt <= config.max_disjointness_retries; ++attempt) {
    ++outcome.attempts;
    const auto reply =
        backend.generate(prompt, seeded(params, {static_cast<std::uint64_t>(attempt)}));
    const Chain steps = segment_chain(reply.text);
    if (steps.empty()) continue;
    const auto& candidate = steps[0].text;
    if (semantic_disjoint(candidate, original_step, config.disjointness_threshold)) {
      outcome.text = candidate;
      return outcome;
    }
  }
  return outcome;
}

Continuation rollout_continuation(const Query& query, std::span<const std::string> kept_prefix,
                                  const std::string& alt_step, const ModelRoles& roles,
                                  const GenParams& params) {
  const auto context = concat(kept_prefix, alt_step);
  const auto prompt = intervention_prompt(InterventionKind::kDirect, query.text, context, {});
  const auto reply = require(roles.rollout, "rollout").generate(prompt, params);
  return Continuation{segment_chain(reply.text).texts(), reply.truncated};
}

PnsEstimate estimate_step(const Query& query, std::string_view gold,
                          std::span<const std::string> kept_prefix, std::size_t position,
                          const std::string& step, std::span<const std::string> downstream,
                          const ModelRoles& roles, const PruneConfig& config,
                          const GenParams& params) {
  PnsEstimate estimate;
  estimate.position = position;
  estimate.step_text = step;
  const auto pos = static_cast<std::uint64_t>(position);

  const auto shared_alt =
      generate_alternative(query, kept_prefix, step, roles, config, seeded(params, {kSeedAlt, pos}));
  estimate.alt_attempts = shared_alt.attempts;
  if (!shared_alt.text) {
    estimate.indeterminate = true;
    estimate.disjointness_exhausted = true;
    return estimate;
  }

  const std::string downstream_text = join_steps(downstream);
  const ValidationOptions validation{config.answer_mode, config.validation,
                                     config.coherence_rubric, params};
  std::atomic<int> budget = config.effective_redraw_budget();
  std::atomic<int> redraws = 0;
  std::atomic<bool> budget_exhausted = false;
  std::mutex alt_mutex;
  int alt_attempts = 0;

  auto take_redraw = [&] {
    int left = budget.load();
    while (left > 0) {
      if (budget.compare_exchange_weak(left, left - 1)) {
        ++redraws;
        return true;
      }
    }
    budget_exhausted = true;
    return false;
  };

  auto run_slot = [&](int slot) {
    const auto j = static_cast<std::uint64_t>(slot);
    for (std::uint64_t draw = 0;; ++draw) {
      InterventionRecord record;
      record.position = position;
      if (config.resample_alt_per_rollout) {
        const auto alt = generate_alternative(query, kept_prefix, step, roles, config,
                                              seeded(params, {kSeedAlt, pos, j + 1, draw}));
        {
          std::lock_guard lock(alt_mutex);
          alt_attempts += alt.attempts;
        }
        if (!alt.text) {
          if (take_redraw()) continue;
          return record;  // missing
        }
        record.alt_step = *alt.text;
      } else {
        record.alt_step = *shared_alt.text;
      }

      auto continuation = rollout_continuation(query, kept_prefix, record.alt_step, roles,
                                               seeded(params, {kSeedContinuation, pos, j, draw}));
      record.continuation = std::move(continuation.steps);
      record.truncated = continuation.truncated;
      record.disjoint = record.continuation.empty() || downstream.empty() ||
                        semantic_disjoint(join_steps(record.continuation), downstream_text,
                                          config.disjointness_threshold);
      if (!record.disjoint && take_redraw()) continue;

      ValidationOptions local = validation;
      local.params = seeded(params, {kSeedValidate, pos, j, draw});
      record.verdict = validate_chain(roles.validator.get(), query,
                                      intervened_chain(kept_prefix, record), gold, local);
      if (record.verdict == Verdict::kMissing && take_redraw()) continue;
      return record;
    }
  };

  estimate.samples.resize(static_cast<std::size_t>(config.k));
  if (config.rollout_concurrency == 1) {
    for (int j = 0; j < config.k; ++j) estimate.samples[j] = run_slot(j);
  } else {
    for (int wave = 0; wave < config.k; wave += config.rollout_concurrency) {
      std::vector<std::future<InterventionRecord>> futures;
      const int end = std::min(config.k, wave + config.rollout_concurrency);
      for (int j = wave; j < end; ++j) futures.push_back(std::async(std::launch::async, run_slot, j));
      for (int j = wave; j < end; ++j) estimate.samples[j] = futures[j - wave].get();
    }
  }
  estimate.alt_attempts += alt_attempts;
  estimate.redraws = redraws.load();
  estimate.redraw_budget_exhausted = budget_exhausted.load();

  int scored = 0;
  int passes = 0;
  for (const auto& s : estimate.samples) {
    if (s.verdict == Verdict::kMissing) continue;
    ++scored;
    passes += s.verdict == Verdict::kPass ? 1 : 0;
  }
  if (scored == 0) {
    estimate.indeterminate = true;
    return estimate;
  }
  estimate.value = 1.0 - static_cast<double>(passes) / static_cast<double>(scored);
  estimate.kept = estimate.value > config.alpha;
  return estimate;
}

PnsEstimate estimate_pns_step(const CoTTrace& trace, std::span<const std::string> kept_prefix,
                              std::size_t t, const ModelRoles& roles, const PruneConfig& config,
                              const GenParams& params) {
  if (t >= trace.chain.size()) throw InvalidArgument("step index out of range");
  const auto texts = trace.chain.texts();
  const std::span<const std::string> downstream(texts.begin() + static_cast<std::ptrdiff_t>(t) + 1,
                                                texts.end());
  return estimate_step(trace.query, trace.gold_answer, kept_prefix, t, texts[t], downstream, roles,
                       config, params);
}

OptimizedTrace optimize_chain(const CoTTrace& trace, const ModelRoles& roles,
                              const PruneConfig& config, const GenParams& params) {
  config.validate();
  roles.validate(config);
  params.validate();

  OptimizedTrace out;
  out.original = trace;
  out.initial_metrics = chain_metrics(trace.chain);
  if (trace.chain.empty()) throw PsIndeterminate("trace " + trace.query.id + " has no reasoning steps");

  const auto ps = estimate_ps(trace, roles, params, config.answer_mode);
  out.ps = ps.ps;
  out.initial_prediction = ps.prediction;
  out.initial_prediction_unparseable = ps.match == MatchResult::kUnparseable;
  if (ps.ps == 0) {
    out.final_chain = trace.chain;
    out.final_metrics = out.initial_metrics;
    return out;
  }

  std::vector<std::string> current = trace.chain.texts();
  std::vector<std::string> kept;
  std::size_t regenerations = 0;
  for (std::size_t i = 0; i < current.size(); ++i) {
    const std::span<const std::string> downstream(current.begin() + static_cast<std::ptrdiff_t>(i) + 1,
                                                  current.end());
    auto estimate = estimate_step(trace.query, trace.gold_answer, kept, i, current[i], downstream,
                                  roles, config, params);
    const bool keep = estimate.kept;
    out.per_step.push_back(std::move(estimate));
    if (keep) {
      kept.push_back(current[i]);
      continue;
    }
    if (config.cascade && i + 1 < current.size() && regenerations < trace.chain.size()) {
      ++regenerations;
      const auto prompt = intervention_prompt(InterventionKind::kDirect, trace.query.text, kept, {});
      const auto reply = roles.rollout->generate(
          prompt, seeded(params, {kSeedRegenerate, static_cast<std::uint64_t>(i)}));
      auto regenerated = segment_chain(reply.text).texts();
      current.resize(i + 1);
      current.insert(current.end(), regenerated.begin(), regenerated.end());
      out.regenerated = true;
    }
  }
  out.final_chain = Chain::from_texts(kept);
  out.final_metrics = chain_metrics(out.final_chain);
  out.final_segment_pruned = !out.per_step.empty() && !out.per_step.back().kept;
  return out;
}

std::optional<double> mean_pns_evaluated(std::span<const PnsEstimate> estimates) {
  double sum = 0;
  std::size_t n = 0;
  for (const auto& e : estimates) {
    if (e.indeterminate) continue;
    sum += e.value;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

std::optional<double> mean_pns_kept(std::span<const PnsEstimate> estimates) {
  double sum = 0;
  std::size_t n = 0;
  for (const auto& e : estimates) {
    if (e.indeterminate || !e.kept) continue;
    sum += e.value;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

}  // namespace cotprune
