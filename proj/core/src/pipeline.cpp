#include "cotprune/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "cotprune/errors.hpp"

namespace cotprune {
namespace {

using nlohmann::json;

constexpr std::uint64_t kSeedPs = 1;
constexpr std::uint64_t kSeedInitialCot = 7;

std::optional<std::string> text_field(const json& obj, std::initializer_list<const char*> keys) {
  for (const char* key : keys) {
    const auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) continue;
    if (it->is_string()) return it->get<std::string>();
    if (it->is_number()) return it->dump();
    throw MalformedInput(std::string("field \"") + key + "\" is not a string");
  }
  return std::nullopt;
}

std::string after_hashes(const std::string& answer) {
  const auto pos = answer.rfind("####");
  if (pos == std::string::npos) return answer;
  return std::string(trim(std::string_view(answer).substr(pos + 4)));
}

// Accepts {"question": {"stem", "choices": [{label, text}]}} and the flat
// {"question": str, "choices": {"label": [...], "text": [...]}} layout.
std::string commonsense_question(const json& obj) {
  std::string stem;
  const json* choices = nullptr;
  const auto& q = obj.at("question");
  if (q.is_object()) {
    stem = q.at("stem").get<std::string>();
    if (q.contains("choices")) choices = &q.at("choices");
  } else {
    stem = q.get<std::string>();
    if (obj.contains("choices")) choices = &obj.at("choices");
  }
  std::string out = stem;
  if (!choices) return out;
  if (choices->is_array()) {
    for (const auto& c : *choices) {
      out += "\n" + c.at("label").get<std::string>() + ". " + c.at("text").get<std::string>();
    }
  } else {
    const auto& labels = choices->at("label");
    const auto& texts = choices->at("text");
    if (labels.size() != texts.size()) throw MalformedInput("choices labels and texts differ in length");
    for (std::size_t i = 0; i < labels.size(); ++i) {
      out += "\n" + labels[i].get<std::string>() + ". " + texts[i].get<std::string>();
    }
  }
  return out;
}

ProblemInput parse_problem(const json& obj, DatasetKind kind, std::size_t line) {
  if (!obj.is_object()) throw MalformedInput("not a JSON object");
  std::optional<std::string> id;
  std::optional<std::string> question;
  std::optional<std::string> answer;
  switch (kind) {
    case DatasetKind::kGsm8k:
      id = text_field(obj, {"id"});
      question = text_field(obj, {"question"});
      answer = text_field(obj, {"answer"});
      if (answer) answer = after_hashes(*answer);
      break;
    case DatasetKind::kMath500:
      id = text_field(obj, {"unique_id", "id"});
      question = text_field(obj, {"problem", "question"});
      answer = text_field(obj, {"answer"});
      break;
    case DatasetKind::kAime:
      id = text_field(obj, {"id", "ID"});
      question = text_field(obj, {"problem", "question"});
      answer = text_field(obj, {"answer"});
      break;
    case DatasetKind::kCommonsenseQa:
      id = text_field(obj, {"id"});
      if (obj.contains("question")) question = commonsense_question(obj);
      answer = text_field(obj, {"answerKey", "answer"});
      break;
    case DatasetKind::kGeneric:
      id = text_field(obj, {"id"});
      question = text_field(obj, {"question"});
      answer = text_field(obj, {"answer"});
      break;
  }
  if (!question || trim(*question).empty()) throw MalformedInput("missing question");
  if (!answer || trim(*answer).empty()) throw MalformedInput("missing answer");

  ProblemInput input;
  input.line = line;
  input.trace.query = Query{id.value_or("line-" + std::to_string(line)), *question};
  input.trace.gold_answer = std::string(trim(*answer));
  const auto cot = text_field(obj, {"cot"});
  input.cot_missing = !cot.has_value();
  if (cot) input.trace.chain = segment_chain(*cot);
  return input;
}

void write_atomically(const std::filesystem::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc | std::ios::binary);
    if (!out) throw Error("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

struct Mean {
  double sum = 0;
  std::size_t n = 0;
  void add(double v) {
    sum += v;
    ++n;
  }
  std::optional<double> get() const {
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
  }
};

std::string fixed(double v, int precision) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(precision) << v;
  return out.str();
}

std::string fixed_or_dash(const std::optional<double>& v) { return v ? fixed(*v, 4) : "-"; }

}  // namespace

std::string_view to_string(DatasetKind kind) noexcept {
  switch (kind) {
    case DatasetKind::kGsm8k: return "gsm8k";
    case DatasetKind::kMath500: return "math500";
    case DatasetKind::kAime: return "aime";
    case DatasetKind::kCommonsenseQa: return "commonsenseqa";
    case DatasetKind::kGeneric: return "generic";
  }
  return "generic";
}

std::optional<DatasetKind> parse_dataset_kind(std::string_view name) noexcept {
  if (name == "gsm8k") return DatasetKind::kGsm8k;
  if (name == "math500") return DatasetKind::kMath500;
  if (name == "aime") return DatasetKind::kAime;
  if (name == "commonsenseqa") return DatasetKind::kCommonsenseQa;
  if (name == "generic") return DatasetKind::kGeneric;
  return std::nullopt;
}

AnswerMode default_answer_mode(DatasetKind kind) noexcept {
  switch (kind) {
    case DatasetKind::kGsm8k:
    case DatasetKind::kAime: return AnswerMode::kNumeric;
    case DatasetKind::kMath500: return AnswerMode::kBoxed;
    case DatasetKind::kCommonsenseQa: return AnswerMode::kChoiceLetter;
    case DatasetKind::kGeneric: return AnswerMode::kExact;
  }
  return AnswerMode::kExact;
}

LoadResult parse_problems(std::istream& in, DatasetKind kind) {
  LoadResult result;
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    ++result.lines;
    try {
      auto problem = parse_problem(json::parse(line), kind, line_no);
      if (!ids.insert(problem.trace.query.id).second) {
        throw MalformedInput("duplicate id " + problem.trace.query.id);
      }
      result.problems.push_back(std::move(problem));
    } catch (const std::exception& e) {
      result.errors.push_back({line_no, e.what()});
    }
  }
  if (result.lines > 0 &&
      static_cast<double>(result.errors.size()) > kMaxMalformedRatio * static_cast<double>(result.lines)) {
    std::string msg = std::to_string(result.errors.size()) + " of " + std::to_string(result.lines) +
                      " lines malformed (limit 10%)";
    msg += "; first at line " + std::to_string(result.errors.front().line) + ": " +
           result.errors.front().message;
    throw MalformedInput(msg);
  }
  return result;
}

LoadResult load_problems(const std::filesystem::path& path, DatasetKind kind) {
  std::ifstream in(path);
  if (!in) throw MalformedInput("cannot open " + path.string());
  return parse_problems(in, kind);
}

void RunConfig::validate() const {
  if (max_in_flight < 1) throw InvalidArgument("max_in_flight must be >= 1");
  if (input.empty()) throw InvalidArgument("input path is required");
  if (output_dir.empty()) throw InvalidArgument("output directory is required");
  prune.validate();
  params.validate();
}

json Checkpoint::to_json() const {
  return {{"completed", completed},
          {"counts",
           {{"processed", completed.size()},
            {"sufficient", sufficient},
            {"insufficient", insufficient},
            {"indeterminate", indeterminate}}}};
}

Checkpoint Checkpoint::from_json(const json& j) {
  Checkpoint c;
  try {
    c.completed = j.at("completed").get<std::set<std::string>>();
    const auto& counts = j.at("counts");
    c.sufficient = counts.value("sufficient", std::size_t{0});
    c.insufficient = counts.value("insufficient", std::size_t{0});
    c.indeterminate = counts.value("indeterminate", std::size_t{0});
  } catch (const json::exception& e) {
    throw MalformedInput(std::string("bad checkpoint: ") + e.what());
  }
  return c;
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) return {};
  std::ifstream in(path);
  try {
    return from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw MalformedInput("bad checkpoint " + path.string() + ": " + e.what());
  }
}

void Checkpoint::save(const std::filesystem::path& path) const {
  write_atomically(path, to_json().dump(2) + "\n");
}

json RunReport::to_json() const {
  json questions = json::array();
  for (const auto& q : per_question) {
    questions.push_back({{"id", q.id}, {"before", optional_number(q.before)}, {"after", optional_number(q.after)}});
  }
  return {{"dataset", dataset},
          {"counts",
           {{"processed", processed},
            {"sufficient", sufficient},
            {"insufficient", insufficient},
            {"indeterminate", indeterminate},
            {"pruned_traces", pruned_traces},
            {"final_segment_pruned", final_segment_pruned},
            {"empty_final_chains", empty_final_chains},
            {"cot_generated", cot_generated}}},
          {"tokens", {{"initial", initial_tokens}, {"final", final_tokens}}},
          {"steps", {{"initial", initial_steps}, {"final", final_steps}}},
          {"accuracy", {{"initial", initial_accuracy}, {"final", final_accuracy}}},
          {"pns",
           {{"evaluated_before", optional_number(pns_evaluated)},
            {"kept_after", optional_number(pns_kept)},
            {"all_steps", optional_number(pns_all_steps)}}},
          {"per_question", questions},
          {"config", config}};
}

RunReport aggregate_report(std::span<const TraceRecord> records, const json& config) {
  if (records.empty()) throw InvalidArgument("no records to aggregate");
  std::vector<const TraceRecord*> sorted;
  for (const auto& r : records) sorted.push_back(&r);
  std::sort(sorted.begin(), sorted.end(),
            [](const TraceRecord* a, const TraceRecord* b) { return a->id < b->id; });

  RunReport report;
  report.config = config;
  std::set<std::string> datasets;
  Mean init_tokens, final_tokens, init_steps, final_steps, init_acc, final_acc;
  Mean evaluated, kept, all_steps;
  for (const TraceRecord* r : sorted) {
    ++report.processed;
    if (r->cot_generated) ++report.cot_generated;
    if (r->config.contains("dataset")) datasets.insert(r->config.at("dataset").get<std::string>());
    if (r->status == TraceStatus::kIndeterminate) {
      ++report.indeterminate;
      continue;
    }
    init_tokens.add(static_cast<double>(r->initial_metrics.tokens));
    final_tokens.add(static_cast<double>(r->final_metrics.tokens));
    init_steps.add(static_cast<double>(r->initial_metrics.steps));
    final_steps.add(static_cast<double>(r->final_metrics.steps));
    init_acc.add(r->initial_correct ? 1.0 : 0.0);
    final_acc.add(r->final_correct ? 1.0 : 0.0);
    if (r->status == TraceStatus::kInsufficient) {
      ++report.insufficient;
      continue;
    }
    ++report.sufficient;
    if (r->pruned()) ++report.pruned_traces;
    if (r->final_segment_pruned) ++report.final_segment_pruned;
    if (r->final_chain.empty()) ++report.empty_final_chains;
    Mean before, after;
    for (const auto& s : r->per_step) {
      all_steps.add(s.indeterminate ? 1.0 : s.value);
      if (s.indeterminate) continue;
      evaluated.add(s.value);
      before.add(s.value);
      if (s.kept) {
        kept.add(s.value);
        after.add(s.value);
      }
    }
    report.per_question.push_back({r->id, before.get(), after.get()});
  }
  report.initial_tokens = init_tokens.get().value_or(0.0);
  report.final_tokens = final_tokens.get().value_or(0.0);
  report.initial_steps = init_steps.get().value_or(0.0);
  report.final_steps = final_steps.get().value_or(0.0);
  report.initial_accuracy = init_acc.get().value_or(0.0);
  report.final_accuracy = final_acc.get().value_or(0.0);
  report.pns_evaluated = evaluated.get();
  report.pns_kept = kept.get();
  report.pns_all_steps = all_steps.get();
  if (config.contains("dataset")) {
    report.dataset = config.at("dataset").get<std::string>();
  } else if (datasets.size() == 1) {
    report.dataset = *datasets.begin();
  } else {
    report.dataset = datasets.empty() ? "unknown" : "mixed";
  }
  return report;
}

std::string render_report_table(const RunReport& r) {
  std::ostringstream out;
  auto row = [&](std::string_view label, const std::string& a, const std::string& b) {
    out << std::left << std::setw(20) << label << std::right << std::setw(12) << a << std::setw(12) << b
        << '\n';
  };
  out << "dataset: " << r.dataset << '\n';
  out << "traces: " << r.processed << " processed, " << r.sufficient << " sufficient, " << r.insufficient
      << " ps=0, " << r.indeterminate << " indeterminate\n";
  out << "pruned: " << r.pruned_traces << " traces, " << r.final_segment_pruned
      << " with the final segment pruned, " << r.empty_final_chains << " empty\n\n";
  row("metric", "initial", "final");
  row("tokens", fixed(r.initial_tokens, 2), fixed(r.final_tokens, 2));
  row("steps", fixed(r.initial_steps, 2), fixed(r.final_steps, 2));
  row("accuracy", fixed(100.0 * r.initial_accuracy, 2) + "%", fixed(100.0 * r.final_accuracy, 2) + "%");
  out << '\n';
  row("step pns", "before", "after");
  row("evaluated / kept", fixed_or_dash(r.pns_evaluated), fixed_or_dash(r.pns_kept));
  row("all steps", fixed_or_dash(r.pns_all_steps), "");
  if (!r.per_question.empty()) {
    out << '\n';
    row("question", "before", "after");
    for (const auto& q : r.per_question) row(q.id, fixed_or_dash(q.before), fixed_or_dash(q.after));
  }
  return out.str();
}

TraceRecord process_trace(const ProblemInput& input, const ModelRoles& roles,
                          const TraceContext& context) {
  const auto& query = input.trace.query;
  TraceRecord rec;
  rec.id = query.id;
  rec.question = query.text;
  rec.gold = input.trace.gold_answer;
  rec.answer_mode = context.answer_mode;
  rec.seed = derive_seed(context.run_seed, {hash_text(query.id)});

  PruneConfig prune = context.prune;
  prune.answer_mode = context.answer_mode;
  GenParams params = context.params;
  params.seed = rec.seed;
  rec.config = config_echo(prune, params);

  CoTTrace trace = input.trace;
  rec.original_chain = trace.chain.texts();
  rec.initial_metrics = chain_metrics(trace.chain);
  try {
    if (trace.chain.empty()) {
      if (!roles.base) throw InvalidArgument("missing backend for role base");
      GenParams cot_params = params;
      cot_params.seed = derive_seed(rec.seed, {kSeedInitialCot});
      const auto reply = roles.base->generate(initial_cot_prompt(query.text), cot_params);
      trace.chain = segment_chain(reply.text);
      rec.cot_generated = true;
      rec.original_chain = trace.chain.texts();
      rec.initial_metrics = chain_metrics(trace.chain);
    }
    const auto opt = optimize_chain(trace, roles, prune, params);
    rec.ps = opt.ps;
    rec.status = opt.ps == 1 ? TraceStatus::kSufficient : TraceStatus::kInsufficient;
    rec.initial_prediction = opt.initial_prediction;
    rec.initial_prediction_unparseable = opt.initial_prediction_unparseable;
    rec.initial_correct = opt.ps == 1;
    rec.final_chain = opt.final_chain.texts();
    rec.final_metrics = opt.final_metrics;
    rec.final_segment_pruned = opt.final_segment_pruned;
    rec.regenerated = opt.regenerated;
    for (const auto& e : opt.per_step) rec.per_step.push_back(summarize_step(e));
    if (opt.ps == 1) {
      // Same call as the sufficiency check, so an unpruned chain is scored
      // exactly as before.
      GenParams final_params = params;
      final_params.seed = derive_seed(rec.seed, {kSeedPs});
      try {
        const auto check = rollout_answer(query, rec.final_chain, rec.gold, *roles.base, final_params,
                                          context.answer_mode);
        rec.final_prediction = check.prediction;
        rec.final_correct = check.ps == 1;
      } catch (const PsIndeterminate& e) {
        rec.error = std::string("final answer: ") + e.what();
      }
    } else {
      rec.final_prediction = rec.initial_prediction;
    }
  } catch (const BackendUnavailable&) {
    throw;
  } catch (const std::exception& e) {
    rec.status = TraceStatus::kIndeterminate;
    rec.ps.reset();
    rec.per_step.clear();
    rec.final_chain = rec.original_chain;
    rec.final_metrics = rec.initial_metrics;
    rec.error = e.what();
  }
  return rec;
}

RunOutcome run_batch(const RunConfig& config, const ModelRoles& roles) {
  config.validate();
  roles.validate(config.prune);
  namespace fs = std::filesystem;
  fs::create_directories(config.output_dir);
  const auto records_path = config.output_dir / kRecordsFile;
  const auto checkpoint_path = config.output_dir / kCheckpointFile;

  RunOutcome outcome;
  const auto loaded = load_problems(config.input, config.kind);
  outcome.input_errors = loaded.errors;

  // Keep only records the checkpoint vouches for, once each.
  auto checkpoint = Checkpoint::load(checkpoint_path);
  Checkpoint reconciled;
  std::string kept_lines;
  if (fs::exists(records_path)) {
    std::ifstream in(records_path);
    std::string line;
    while (std::getline(in, line)) {
      if (trim(line).empty()) continue;
      try {
        const auto rec = TraceRecord::from_json(json::parse(line));
        if (!checkpoint.completed.count(rec.id) || reconciled.completed.count(rec.id)) continue;
        reconciled.completed.insert(rec.id);
        switch (rec.status) {
          case TraceStatus::kSufficient: ++reconciled.sufficient; break;
          case TraceStatus::kInsufficient: ++reconciled.insufficient; break;
          case TraceStatus::kIndeterminate: ++reconciled.indeterminate; break;
        }
        kept_lines += line + "\n";
      } catch (const std::exception&) {
        // A torn final line from an interrupted write; the trace is redone.
      }
    }
  }
  write_atomically(records_path, kept_lines);
  checkpoint = std::move(reconciled);
  checkpoint.save(checkpoint_path);

  std::vector<const ProblemInput*> pending;
  for (const auto& p : loaded.problems) {
    if (checkpoint.completed.count(p.trace.query.id)) {
      ++outcome.already_done;
    } else {
      pending.push_back(&p);
    }
  }
  const std::size_t limit = std::min(pending.size(), config.max_traces.value_or(pending.size()));

  TraceContext context{config.effective_answer_mode(), config.prune, config.params, config.seed};
  json echo = config_echo(config.prune, config.params);
  echo["answer_mode"] = to_string(context.answer_mode);
  echo["dataset"] = to_string(config.kind);
  echo["seed"] = config.seed;

  std::ofstream records_out(records_path, std::ios::app | std::ios::binary);
  if (!records_out) throw Error("cannot append to " + records_path.string());

  std::mutex write_mutex;
  std::atomic<std::size_t> next = 0;
  std::atomic<bool> abort = false;
  std::atomic<bool> stopped = false;
  std::string abort_reason;
  std::size_t processed_now = 0;

  auto worker = [&] {
    while (!abort.load()) {
      if (config.stop_requested && config.stop_requested()) {
        stopped = true;
        return;
      }
      const std::size_t i = next.fetch_add(1);
      if (i >= limit) return;
      TraceRecord rec;
      try {
        rec = process_trace(*pending[i], roles, context);
      } catch (const BackendUnavailable& e) {
        std::lock_guard lock(write_mutex);
        if (!abort.exchange(true)) abort_reason = e.what();
        return;
      }
      rec.config["dataset"] = to_string(config.kind);
      std::lock_guard lock(write_mutex);
      records_out << rec.to_json().dump() << '\n';
      records_out.flush();
      checkpoint.completed.insert(rec.id);
      switch (rec.status) {
        case TraceStatus::kSufficient: ++checkpoint.sufficient; break;
        case TraceStatus::kInsufficient: ++checkpoint.insufficient; break;
        case TraceStatus::kIndeterminate: ++checkpoint.indeterminate; break;
      }
      checkpoint.save(checkpoint_path);
      ++processed_now;
    }
  };

  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(config.max_in_flight), limit);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  records_out.close();

  outcome.processed_now = processed_now;
  outcome.aborted = abort.load();
  outcome.abort_reason = abort_reason;
  outcome.completed = !outcome.aborted && !stopped.load() && processed_now == pending.size();

  const auto records = read_records(records_path);
  if (!records.empty()) {
    outcome.report = aggregate_report(records, echo);
    write_atomically(config.output_dir / kReportJsonFile, outcome.report->to_json().dump(2) + "\n");
    write_atomically(config.output_dir / kReportTextFile, render_report_table(*outcome.report));
  }
  return outcome;
}

}  // namespace cotprune
