#pragma once

// Corpus export from optimization records: SFT lines and ICL exemplars.

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "cotprune/prompts.hpp"
#include "cotprune/records.hpp"

namespace cotprune {

struct ExportSummary {
  std::size_t written = 0;
  /// Sufficient traces whose final chain came out empty.
  std::size_t skipped_empty = 0;
};

/// Writes {"question", "answer", "cot"} per line, replacing `path`. Throws
/// RejectedTrace naming every record whose ps is not 1.
ExportSummary export_sft(std::span<const TraceRecord> records, const std::filesystem::path& path);

/// Mean value over a record's kept, evaluated steps; unset if there are none.
std::optional<double> mean_kept_pns(const TraceRecord& record);

/// Up to `n` exemplars from sufficient, non-empty final chains, by mean kept
/// PNS (descending), then fewest final tokens, then id.
std::vector<IclExemplar> select_exemplars(std::span<const TraceRecord> records, std::size_t n);

}  // namespace cotprune
