#pragma once

// Per-trace optimization records, one JSON object per line.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cotprune/engine.hpp"

namespace cotprune {

enum class TraceStatus { kSufficient, kInsufficient, kIndeterminate };
std::string_view to_string(TraceStatus status) noexcept;
std::optional<TraceStatus> parse_trace_status(std::string_view name) noexcept;

struct StepRecord {
  std::size_t position = 0;
  std::string text;
  double value = 1.0;
  bool kept = true;
  bool indeterminate = false;
  bool disjointness_exhausted = false;
  int redraws = 0;
  std::vector<std::optional<int>> verdicts;
};

StepRecord summarize_step(const PnsEstimate& estimate);

struct TraceRecord {
  std::string id;
  std::string question;
  std::string gold;
  AnswerMode answer_mode = AnswerMode::kExact;
  TraceStatus status = TraceStatus::kIndeterminate;
  /// Unset when indeterminate.
  std::optional<int> ps;
  std::vector<std::string> original_chain;
  std::vector<std::string> final_chain;
  ChainMetrics initial_metrics;
  ChainMetrics final_metrics;
  std::string initial_prediction;
  bool initial_prediction_unparseable = false;
  bool initial_correct = false;
  std::optional<std::string> final_prediction;
  bool final_correct = false;
  std::vector<StepRecord> per_step;
  bool final_segment_pruned = false;
  bool regenerated = false;
  /// The input had no cot and the base model wrote the initial chain.
  bool cot_generated = false;
  std::string error;
  std::int64_t seed = 0;
  nlohmann::json config = nlohmann::json::object();

  bool pruned() const noexcept { return final_chain.size() < original_chain.size() || regenerated; }

  nlohmann::json to_json() const;
  /// Throws MalformedInput on missing or mistyped fields.
  static TraceRecord from_json(const nlohmann::json& j);
};

/// Reads a records file. Throws MalformedInput with the line number.
std::vector<TraceRecord> read_records(const std::filesystem::path& path);

/// Prune and generation settings that affect results; no paths or timing.
nlohmann::json config_echo(const PruneConfig& prune, const GenParams& params);

}  // namespace cotprune
