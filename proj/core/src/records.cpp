#include "cotprune/records.hpp"

#include <fstream>

#include "cotprune/errors.hpp"

namespace cotprune {
namespace {

using nlohmann::json;

json metrics_json(const ChainMetrics& m) { return {{"tokens", m.tokens}, {"steps", m.steps}}; }

ChainMetrics metrics_from(const json& j) {
  return ChainMetrics{j.at("tokens").get<std::size_t>(), j.at("steps").get<std::size_t>()};
}

json step_json(const StepRecord& s) {
  json verdicts = json::array();
  for (const auto& v : s.verdicts) verdicts.push_back(v ? json(*v) : json(nullptr));
  return {{"position", s.position},
          {"text", s.text},
          {"value", s.value},
          {"kept", s.kept},
          {"indeterminate", s.indeterminate},
          {"disjointness_exhausted", s.disjointness_exhausted},
          {"redraws", s.redraws},
          {"verdicts", verdicts}};
}

StepRecord step_from(const json& j) {
  StepRecord s;
  s.position = j.at("position").get<std::size_t>();
  s.text = j.at("text").get<std::string>();
  s.value = j.at("value").get<double>();
  s.kept = j.at("kept").get<bool>();
  s.indeterminate = j.value("indeterminate", false);
  s.disjointness_exhausted = j.value("disjointness_exhausted", false);
  s.redraws = j.value("redraws", 0);
  for (const auto& v : j.at("verdicts")) {
    s.verdicts.push_back(v.is_null() ? std::nullopt : std::optional<int>(v.get<int>()));
  }
  return s;
}

}  // namespace

std::string_view to_string(TraceStatus status) noexcept {
  switch (status) {
    case TraceStatus::kSufficient: return "sufficient";
    case TraceStatus::kInsufficient: return "insufficient";
    case TraceStatus::kIndeterminate: return "indeterminate";
  }
  return "indeterminate";
}

std::optional<TraceStatus> parse_trace_status(std::string_view name) noexcept {
  if (name == "sufficient") return TraceStatus::kSufficient;
  if (name == "insufficient") return TraceStatus::kInsufficient;
  if (name == "indeterminate") return TraceStatus::kIndeterminate;
  return std::nullopt;
}

StepRecord summarize_step(const PnsEstimate& estimate) {
  return StepRecord{estimate.position,       estimate.step_text,
                    estimate.value,          estimate.kept,
                    estimate.indeterminate,  estimate.disjointness_exhausted,
                    estimate.redraws,        estimate.verdicts()};
}

json TraceRecord::to_json() const {
  json steps = json::array();
  for (const auto& s : per_step) steps.push_back(step_json(s));
  return {{"id", id},
          {"question", question},
          {"gold", gold},
          {"answer_mode", to_string(answer_mode)},
          {"status", to_string(status)},
          {"ps", ps ? json(*ps) : json(nullptr)},
          {"original_chain", original_chain},
          {"final_chain", final_chain},
          {"initial_metrics", metrics_json(initial_metrics)},
          {"final_metrics", metrics_json(final_metrics)},
          {"initial_prediction", initial_prediction},
          {"initial_prediction_unparseable", initial_prediction_unparseable},
          {"initial_correct", initial_correct},
          {"final_prediction", final_prediction ? json(*final_prediction) : json(nullptr)},
          {"final_correct", final_correct},
          {"per_step", steps},
          {"final_segment_pruned", final_segment_pruned},
          {"regenerated", regenerated},
          {"cot_generated", cot_generated},
          {"error", error},
          {"seed", seed},
          {"config", config}};
}

TraceRecord TraceRecord::from_json(const json& j) {
  try {
    TraceRecord r;
    r.id = j.at("id").get<std::string>();
    r.question = j.at("question").get<std::string>();
    r.gold = j.at("gold").get<std::string>();
    const auto mode = parse_answer_mode(j.at("answer_mode").get<std::string>());
    const auto status = parse_trace_status(j.at("status").get<std::string>());
    if (!mode || !status) throw MalformedInput("unknown answer_mode or status in record " + r.id);
    r.answer_mode = *mode;
    r.status = *status;
    if (!j.at("ps").is_null()) r.ps = j.at("ps").get<int>();
    r.original_chain = j.at("original_chain").get<std::vector<std::string>>();
    r.final_chain = j.at("final_chain").get<std::vector<std::string>>();
    r.initial_metrics = metrics_from(j.at("initial_metrics"));
    r.final_metrics = metrics_from(j.at("final_metrics"));
    r.initial_prediction = j.value("initial_prediction", "");
    r.initial_prediction_unparseable = j.value("initial_prediction_unparseable", false);
    r.initial_correct = j.at("initial_correct").get<bool>();
    if (j.contains("final_prediction") && !j.at("final_prediction").is_null()) {
      r.final_prediction = j.at("final_prediction").get<std::string>();
    }
    r.final_correct = j.at("final_correct").get<bool>();
    for (const auto& s : j.at("per_step")) r.per_step.push_back(step_from(s));
    r.final_segment_pruned = j.value("final_segment_pruned", false);
    r.regenerated = j.value("regenerated", false);
    r.cot_generated = j.value("cot_generated", false);
    r.error = j.value("error", "");
    r.seed = j.value("seed", std::int64_t{0});
    r.config = j.value("config", json::object());
    return r;
  } catch (const json::exception& e) {
    throw MalformedInput(std::string("bad trace record: ") + e.what());
  }
}

std::vector<TraceRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MalformedInput("cannot open " + path.string());
  std::vector<TraceRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      out.push_back(TraceRecord::from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw MalformedInput(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

json config_echo(const PruneConfig& prune, const GenParams& params) {
  return {{"alpha", prune.alpha},
          {"k", prune.k},
          {"strategy", to_string(prune.strategy)},
          {"max_disjointness_retries", prune.max_disjointness_retries},
          {"disjointness_threshold", prune.disjointness_threshold},
          {"redraw_budget", prune.effective_redraw_budget()},
          {"resample_alt_per_rollout", prune.resample_alt_per_rollout},
          {"cascade", prune.cascade},
          {"answer_mode", to_string(prune.answer_mode)},
          {"validation", to_string(prune.validation)},
          {"max_tokens", params.max_tokens},
          {"temperature", params.temperature},
          {"top_p", params.top_p}};
}

}  // namespace cotprune
