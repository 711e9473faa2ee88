#include "cotprune/export.hpp"

#include <algorithm>
#include <fstream>

#include "cotprune/errors.hpp"

namespace cotprune {
namespace {

std::string offender_list(const std::vector<std::string>& ids) {
  std::string out;
  for (const auto& id : ids) {
    if (!out.empty()) out += ", ";
    out += id;
  }
  return out;
}

}  // namespace

RejectedTrace::RejectedTrace(std::vector<std::string> offenders)
    : Error("traces without ps = 1: " + offender_list(offenders)), offenders_(std::move(offenders)) {}

ExportSummary export_sft(std::span<const TraceRecord> records, const std::filesystem::path& path) {
  std::vector<std::string> offenders;
  for (const auto& r : records) {
    if (r.ps != 1) offenders.push_back(r.id);
  }
  if (!offenders.empty()) throw RejectedTrace(std::move(offenders));

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  ExportSummary summary;
  for (const auto& r : records) {
    if (r.final_chain.empty()) {
      ++summary.skipped_empty;
      continue;
    }
    const nlohmann::json line{{"question", r.question},
                              {"answer", r.gold},
                              {"cot", join_steps(r.final_chain)}};
    out << line.dump() << '\n';
    ++summary.written;
  }
  if (!out) throw Error("write failed for " + path.string());
  return summary;
}

std::optional<double> mean_kept_pns(const TraceRecord& record) {
  double sum = 0;
  std::size_t n = 0;
  for (const auto& s : record.per_step) {
    if (s.indeterminate || !s.kept) continue;
    sum += s.value;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

std::vector<IclExemplar> select_exemplars(std::span<const TraceRecord> records, std::size_t n) {
  struct Candidate {
    const TraceRecord* record;
    double score;
  };
  std::vector<Candidate> candidates;
  for (const auto& r : records) {
    if (r.status != TraceStatus::kSufficient || r.final_chain.empty()) continue;
    candidates.push_back({&r, mean_kept_pns(r).value_or(0.0)});
  }
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.record->final_metrics.tokens != b.record->final_metrics.tokens) {
      return a.record->final_metrics.tokens < b.record->final_metrics.tokens;
    }
    return a.record->id < b.record->id;
  });
  std::vector<IclExemplar> out;
  for (std::size_t i = 0; i < candidates.size() && i < n; ++i) {
    out.push_back({candidates[i].record->question, join_steps(candidates[i].record->final_chain)});
  }
  return out;
}

}  // namespace cotprune
