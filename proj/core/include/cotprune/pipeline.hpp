#pragma once

// Batch runs over a problem file: bounded trace-level concurrency,
// per-trace checkpointing, and aggregate reports.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cotprune/engine.hpp"
#include "cotprune/records.hpp"

namespace cotprune {

enum class DatasetKind { kGsm8k, kMath500, kAime, kCommonsenseQa, kGeneric };
std::string_view to_string(DatasetKind kind) noexcept;
/// "gsm8k", "math500", "aime", "commonsenseqa", "generic".
std::optional<DatasetKind> parse_dataset_kind(std::string_view name) noexcept;
AnswerMode default_answer_mode(DatasetKind kind) noexcept;

struct ProblemInput {
  CoTTrace trace;
  /// The line had no cot; the chain is empty.
  bool cot_missing = false;
  std::size_t line = 0;
};

struct LineError {
  std::size_t line = 0;
  std::string message;
};

struct LoadResult {
  std::vector<ProblemInput> problems;
  std::vector<LineError> errors;
  std::size_t lines = 0;
};

/// More than this share of malformed non-blank lines aborts the load.
inline constexpr double kMaxMalformedRatio = 0.10;

/// One JSON object per line. Throws MalformedInput when the file cannot be
/// read or too many lines are malformed; otherwise bad lines are reported in
/// `errors` and skipped. Duplicate ids count as malformed.
LoadResult load_problems(const std::filesystem::path& path, DatasetKind kind);
LoadResult parse_problems(std::istream& in, DatasetKind kind);

struct RunConfig {
  std::filesystem::path input;
  std::filesystem::path output_dir;
  DatasetKind kind = DatasetKind::kGeneric;
  /// Overrides the dataset's default answer mode.
  std::optional<AnswerMode> answer_mode;
  PruneConfig prune;
  GenParams params;
  int max_in_flight = 4;
  std::int64_t seed = 0;
  /// Stop after this many traces have been processed in this invocation.
  std::optional<std::size_t> max_traces;
  /// Polled between traces; true makes the run checkpoint and stop.
  std::function<bool()> stop_requested;

  AnswerMode effective_answer_mode() const { return answer_mode.value_or(default_answer_mode(kind)); }
  /// Throws InvalidArgument.
  void validate() const;
};

struct Checkpoint {
  std::set<std::string> completed;
  std::size_t sufficient = 0;
  std::size_t insufficient = 0;
  std::size_t indeterminate = 0;

  nlohmann::json to_json() const;
  static Checkpoint from_json(const nlohmann::json& j);
  /// Missing file gives an empty checkpoint.
  static Checkpoint load(const std::filesystem::path& path);
  /// Writes a temporary file next to `path` and renames it over `path`.
  void save(const std::filesystem::path& path) const;
};

struct RunReport {
  std::string dataset;
  std::size_t processed = 0;
  std::size_t sufficient = 0;
  std::size_t insufficient = 0;
  std::size_t indeterminate = 0;
  std::size_t pruned_traces = 0;
  std::size_t final_segment_pruned = 0;
  std::size_t empty_final_chains = 0;
  std::size_t cot_generated = 0;
  /// Means over traces with a decided ps.
  double initial_tokens = 0;
  double final_tokens = 0;
  double initial_steps = 0;
  double final_steps = 0;
  double initial_accuracy = 0;
  double final_accuracy = 0;
  /// Pooled over steps of sufficient traces. Evaluated: every step with
  /// verdicts (before pruning). Kept: the evaluated steps that survived.
  /// All-steps: every step, with indeterminate ones counted as 1.
  std::optional<double> pns_evaluated;
  std::optional<double> pns_kept;
  std::optional<double> pns_all_steps;
  struct QuestionPns {
    std::string id;
    std::optional<double> before;
    std::optional<double> after;
  };
  std::vector<QuestionPns> per_question;
  nlohmann::json config = nlohmann::json::object();

  nlohmann::json to_json() const;
};

/// Throws InvalidArgument on an empty record list.
RunReport aggregate_report(std::span<const TraceRecord> records,
                           const nlohmann::json& config = nlohmann::json::object());
/// Aligned plain-text table: Initial/Final columns, then per-question PNS.
std::string render_report_table(const RunReport& report);

struct TraceContext {
  AnswerMode answer_mode = AnswerMode::kExact;
  PruneConfig prune;
  GenParams params;
  std::int64_t run_seed = 0;
};

/// Optimizes one problem and re-scores the final chain. BackendUnavailable
/// propagates; other failures give an indeterminate record.
TraceRecord process_trace(const ProblemInput& input, const ModelRoles& roles,
                          const TraceContext& context);

struct RunOutcome {
  /// Unset when no record exists yet.
  std::optional<RunReport> report;
  bool completed = false;
  /// A backend became unavailable; the checkpoint holds what finished.
  bool aborted = false;
  std::string abort_reason;
  std::size_t processed_now = 0;
  std::size_t already_done = 0;
  std::vector<LineError> input_errors;
};

inline constexpr std::string_view kRecordsFile = "records.jsonl";
inline constexpr std::string_view kCheckpointFile = "checkpoint.json";
inline constexpr std::string_view kReportJsonFile = "report.json";
inline constexpr std::string_view kReportTextFile = "report.txt";

/// Runs or resumes a batch in config.output_dir. Completed ids from the
/// checkpoint are skipped, and records not covered by it are discarded.
RunOutcome run_batch(const RunConfig& config, const ModelRoles& roles);

}  // namespace cotprune
