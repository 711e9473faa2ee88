#include "cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cotprune/errors.hpp"
#include "cotprune/export.hpp"
#include "cotprune/http_backend.hpp"
#include "cotprune/pipeline.hpp"
#include "cotprune/scm.hpp"
#include "cotprune/scm_backend.hpp"

#ifndef COTPRUNE_DEFAULT_FIXTURE_DIR
#define COTPRUNE_DEFAULT_FIXTURE_DIR "fixtures/scm"
#endif

namespace cotprune::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

/// Thrown for anything the user can fix in flags or the config file.
class ConfigError : public Error {
 public:
  using Error::Error;
};

struct RoleFlags {
  std::string url;
  std::string model;
};

struct OptimizeFlags {
  std::string input;
  std::string output;
  std::string dataset = "generic";
  std::string answer_mode;
  double alpha = 0.5;
  int k = 8;
  std::string strategy = "prompt-based";
  int max_disjointness_retries = 2;
  double disjointness_threshold = 0.7;
  int redraw_budget = -1;
  bool resample_alt = false;
  bool cascade = false;
  int rollout_concurrency = 1;
  std::string validation = "answer-only";
  std::string coherence_rubric;
  int max_tokens = 16384;
  double temperature = 0.6;
  double top_p = 0.95;
  int max_in_flight = 4;
  std::int64_t seed = 0;
  std::size_t max_traces = 0;
  RoleFlags base, rollout, validator, external;
  std::string api_key_env = "COTPRUNE_API_KEY";
  int max_retries = 3;
  int backoff_ms = 1000;
  int request_timeout_s = 600;
  int http_in_flight = 8;
  std::string audit_log;
};

template <typename T>
T parse_enum(std::optional<T> parsed, std::string_view flag, std::string_view value) {
  if (!parsed) throw ConfigError("invalid value \"" + std::string(value) + "\" for --" + std::string(flag));
  return *parsed;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class BackendFactory {
 public:
  BackendFactory(const OptimizeFlags& flags, std::shared_ptr<AuditLog> audit)
      : flags_(flags), audit_(std::move(audit)) {}

  /// "scripted:<json>", "scm:<fixture>", or an http(s) base URL. Equal specs
  /// share one instance so scripted responses keep a single order.
  std::shared_ptr<Backend> make(const RoleFlags& role) {
    const std::string key = role.url + "\n" + role.model;
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    std::shared_ptr<Backend> backend;
    if (role.url.starts_with("scripted:")) {
      const fs::path path = role.url.substr(9);
      json script;
      try {
        script = json::parse(read_file(path));
      } catch (const json::parse_error& e) {
        throw ConfigError("bad script " + path.string() + ": " + e.what());
      }
      backend = ScriptedBackend::from_json(script, "scripted:" + path.filename().string());
    } else if (role.url.starts_with("scm:")) {
      backend = std::make_shared<ScmBackend>(scm::load_scm(role.url.substr(4)),
                                             static_cast<std::uint64_t>(flags_.seed));
    } else if (role.url.starts_with("http://") || role.url.starts_with("https://")) {
      if (role.model.empty()) throw ConfigError("a model name is required for " + role.url);
      HttpBackendConfig config;
      config.base_url = role.url;
      config.model = role.model;
      config.api_key_env = flags_.api_key_env;
      config.max_retries = flags_.max_retries;
      config.backoff_base = std::chrono::milliseconds(flags_.backoff_ms);
      config.max_in_flight = flags_.http_in_flight;
      config.timeout = std::chrono::seconds(flags_.request_timeout_s);
      backend = std::make_shared<HttpBackend>(config);
    } else {
      throw ConfigError("unsupported backend \"" + role.url +
                        "\" (use scripted:<file>, scm:<file> or an http(s) URL)");
    }
    if (audit_) backend->set_audit_log(audit_);
    cache_.emplace(key, backend);
    return backend;
  }

 private:
  const OptimizeFlags& flags_;
  std::shared_ptr<AuditLog> audit_;
  std::map<std::string, std::shared_ptr<Backend>> cache_;
};

ModelRoles build_roles(OptimizeFlags& flags, const PruneConfig& prune) {
  if (flags.base.url.empty()) {
    if (const char* env = std::getenv("COTPRUNE_BASE_URL"); env && *env) flags.base.url = env;
  }
  if (flags.base.url.empty()) throw ConfigError("no base backend: set --base-url or COTPRUNE_BASE_URL");
  auto inherit = [](RoleFlags& role, const RoleFlags& from) {
    if (role.url.empty()) role = from;
    if (role.model.empty()) role.model = from.model;
  };
  inherit(flags.rollout, flags.base);
  inherit(flags.validator, flags.rollout);

  std::shared_ptr<AuditLog> audit;
  if (!flags.audit_log.empty()) audit = std::make_shared<AuditLog>(flags.audit_log);
  BackendFactory factory(flags, audit);
  ModelRoles roles;
  roles.base = factory.make(flags.base);
  roles.rollout = factory.make(flags.rollout);
  if (prune.validation == ValidationMode::kCoherence) roles.validator = factory.make(flags.validator);
  if (prune.strategy == InterventionKind::kExternal) {
    if (flags.external.url.empty()) throw ConfigError("the external strategy needs --external-url");
    if (flags.external.model.empty()) flags.external.model = flags.base.model;
    roles.external = factory.make(flags.external);
  }
  return roles;
}

int cmd_optimize(OptimizeFlags flags, std::ostream& out, std::ostream& err,
                 const std::atomic<bool>* stop) {
  // Checked here rather than by the parser so a --config after the
  // subcommand can still supply them.
  if (flags.input.empty()) throw ConfigError("--input is required");
  if (flags.output.empty()) throw ConfigError("--output is required");
  RunConfig config;
  config.input = flags.input;
  config.output_dir = flags.output;
  if (!fs::exists(config.input)) throw ConfigError("input file not found: " + flags.input);
  config.kind = parse_enum(parse_dataset_kind(flags.dataset), "dataset", flags.dataset);
  if (!flags.answer_mode.empty()) {
    config.answer_mode = parse_enum(parse_answer_mode(flags.answer_mode), "answer-mode", flags.answer_mode);
  }
  auto& prune = config.prune;
  prune.alpha = flags.alpha;
  prune.k = flags.k;
  prune.strategy = parse_enum(parse_intervention_kind(flags.strategy), "strategy", flags.strategy);
  prune.max_disjointness_retries = flags.max_disjointness_retries;
  prune.disjointness_threshold = flags.disjointness_threshold;
  if (flags.redraw_budget >= 0) prune.redraw_budget = flags.redraw_budget;
  prune.resample_alt_per_rollout = flags.resample_alt;
  prune.cascade = flags.cascade;
  prune.rollout_concurrency = flags.rollout_concurrency;
  prune.validation = parse_enum(parse_validation_mode(flags.validation), "validation", flags.validation);
  if (!flags.coherence_rubric.empty()) prune.coherence_rubric = flags.coherence_rubric;
  prune.answer_mode = config.effective_answer_mode();
  config.params.max_tokens = flags.max_tokens;
  config.params.temperature = flags.temperature;
  config.params.top_p = flags.top_p;
  config.max_in_flight = flags.max_in_flight;
  config.seed = flags.seed;
  if (flags.max_traces > 0) config.max_traces = flags.max_traces;
  config.stop_requested = [stop] { return stop != nullptr && stop->load(); };
  try {
    config.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }

  ModelRoles roles;
  try {
    roles = build_roles(flags, prune);
    roles.validate(prune);
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  } catch (const FixtureParseError& e) {
    throw ConfigError(e.what());
  }

  RunOutcome outcome;
  try {
    outcome = run_batch(config, roles);
  } catch (const MalformedInput& e) {
    err << "run aborted: " << e.what() << '\n';
    return kExitAborted;
  }
  for (const auto& e : outcome.input_errors) {
    err << flags.input << ":" << e.line << ": skipped: " << e.message << '\n';
  }
  if (outcome.report) out << render_report_table(*outcome.report);
  if (outcome.aborted) {
    err << "run aborted: " << outcome.abort_reason << "\n"
        << "checkpoint saved in " << flags.output << "; rerun the same command to resume\n";
    return kExitAborted;
  }
  if (!outcome.completed) {
    err << "run stopped after " << outcome.processed_now << " traces; rerun to resume\n";
    return kExitAborted;
  }
  return kExitOk;
}

fs::path records_path(const std::string& given) {
  fs::path path = given;
  if (fs::is_directory(path)) path /= kRecordsFile;
  if (!fs::exists(path)) throw ConfigError("records not found: " + path.string());
  return path;
}

std::vector<TraceRecord> load_records(const std::string& given) {
  try {
    return read_records(records_path(given));
  } catch (const MalformedInput& e) {
    throw ConfigError(e.what());
  }
}

int cmd_report(const std::string& run_dir, bool as_json, std::ostream& out, std::ostream& err) {
  const auto records = load_records(run_dir);
  if (records.empty()) {
    err << "no records in " << run_dir << '\n';
    return kExitAborted;
  }
  json config = json::object();
  const fs::path dir = fs::is_directory(run_dir) ? fs::path(run_dir) : fs::path(run_dir).parent_path();
  const auto existing = dir / kReportJsonFile;
  if (fs::exists(existing)) {
    try {
      config = json::parse(read_file(existing)).value("config", json::object());
    } catch (const json::exception&) {
      // Rebuilt from the records below.
    }
  }
  if (config.empty()) config = records.front().config;
  const auto report = aggregate_report(records, config);
  {
    std::ofstream(dir / kReportJsonFile, std::ios::trunc) << report.to_json().dump(2) << '\n';
    std::ofstream(dir / kReportTextFile, std::ios::trunc) << render_report_table(report);
  }
  if (as_json) {
    out << report.to_json().dump(2) << '\n';
  } else {
    out << render_report_table(report);
  }
  return kExitOk;
}

int cmd_verify_lemmas(const std::string& dir, bool as_json, std::ostream& out, std::ostream& err) {
  if (!fs::is_directory(dir)) throw ConfigError("fixture directory not found: " + dir);
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".scm") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ConfigError("no .scm fixtures in " + dir);

  std::vector<scm::ScmSpec> fixtures;
  for (const auto& file : files) {
    try {
      fixtures.push_back(scm::load_scm(file));
    } catch (const FixtureParseError& e) {
      err << "fixture parse error: " << e.what() << '\n';
      return kExitConfig;
    }
  }

  bool all_ok = true;
  json rows = json::array();
  for (const auto& fixture : fixtures) {
    for (const auto& report : scm::verify_fixture(fixture)) {
      all_ok = all_ok && report.status != scm::CheckStatus::kViolated;
      if (as_json) {
        rows.push_back(report.to_json());
        continue;
      }
      const char* verdict = report.status == scm::CheckStatus::kViolated ? "FAIL" : "pass";
      out << verdict << "  " << fixture.name << "  " << report.check << "  "
          << scm::to_string(report.status) << "  " << report.detail << '\n';
    }
  }
  if (as_json) out << rows.dump(2) << '\n';
  return all_ok ? kExitOk : 1;
}

std::string safe_file_name(std::string_view id) {
  std::string out;
  for (char c : id) {
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
    out.push_back(ok ? c : '_');
  }
  if (out.empty() || out.front() == '.') out.insert(out.begin(), '_');
  return out;
}

struct QuestionItem {
  std::string id;
  std::string text;
};

std::vector<QuestionItem> load_questions(const std::string& path) {
  std::istringstream in(read_file(path));
  std::vector<QuestionItem> items;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const auto j = json::parse(line);
      std::string text = j.contains("question") ? j.at("question").get<std::string>()
                                                : j.at("problem").get<std::string>();
      std::string id = j.contains("id") ? (j.at("id").is_string() ? j.at("id").get<std::string>()
                                                                  : j.at("id").dump())
                                        : "q" + std::to_string(line_no);
      items.push_back({std::move(id), std::move(text)});
    } catch (const json::exception& e) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return items;
}

int cmd_export_icl(const std::string& records_arg, const std::string& questions,
                   const std::string& variant_name, std::size_t n, const std::string& out_dir,
                   std::ostream& out, std::ostream& err) {
  IclVariant variant{parse_enum(parse_icl_kind(variant_name), "variant", variant_name), {}};
  if (variant.kind == IclKind::kOursIcl) {
    if (records_arg.empty()) throw ConfigError("ours-icl needs --records");
    if (n < 1 || n > kMaxIclExemplars) throw ConfigError("--exemplars must be between 1 and 5");
    const auto records = load_records(records_arg);
    variant.exemplars = select_exemplars(records, n);
    if (variant.exemplars.empty()) {
      err << "no sufficient traces with a non-empty final chain\n";
      return kExitAborted;
    }
  }
  const auto items = load_questions(questions);
  fs::create_directories(out_dir);
  for (const auto& item : items) {
    const auto prompt = icl_prompt(variant, item.text);
    const json file{{"id", item.id},
                    {"variant", to_string(variant.kind)},
                    {"system", prompt.system ? json(*prompt.system) : json(nullptr)},
                    {"user", prompt.user}};
    std::ofstream(fs::path(out_dir) / (safe_file_name(item.id) + ".json"), std::ios::trunc)
        << file.dump(2) << '\n';
  }
  out << "wrote " << items.size() << " prompt files to " << out_dir << " with "
      << variant.exemplars.size() << " exemplars\n";
  return kExitOk;
}

int cmd_export_sft(const std::string& records_arg, const std::string& path, bool strict,
                   std::ostream& out, std::ostream& err) {
  auto records = load_records(records_arg);
  if (!strict) {
    std::erase_if(records, [](const TraceRecord& r) { return r.ps != 1; });
  }
  if (records.empty()) {
    err << "no sufficient traces to export\n";
    return kExitAborted;
  }
  try {
    const auto summary = export_sft(records, path);
    out << "wrote " << summary.written << " records to " << path << ", skipped "
        << summary.skipped_empty << " with empty final chains\n";
  } catch (const RejectedTrace& e) {
    err << e.what() << '\n';
    return kExitAborted;
  }
  return kExitOk;
}

void add_role(CLI::App* cmd, const std::string& role, RoleFlags& flags, const std::string& what) {
  cmd->add_option("--" + role + "-url", flags.url,
                  what + " backend: scripted:<file>, scm:<file> or an http(s) base URL");
  cmd->add_option("--" + role + "-model", flags.model, "Model name sent to the " + role + " endpoint");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
        const std::atomic<bool>* stop) {
  CLI::App app{"Prune chain-of-thought traces to their sufficient and necessary steps", "cotprune"};
  app.set_config("--config", "", "TOML config file; command-line flags override it");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.set_version_flag("--version", "cotprune 0.1.0");
  app.require_subcommand(1, 1);
  app.fallthrough();

  OptimizeFlags opt;
  auto* optimize = app.add_subcommand("optimize", "Optimize every trace of a problem file");
  optimize->add_option("--input", opt.input, "Problem file, one JSON object per line");
  optimize->add_option("--output", opt.output, "Run directory for records, checkpoint and reports");
  optimize->add_option("--dataset", opt.dataset, "gsm8k, math500, aime, commonsenseqa or generic")->capture_default_str();
  optimize->add_option("--answer-mode", opt.answer_mode, "exact, numeric, choice-letter or boxed; defaults per dataset");
  optimize->add_option("--alpha", opt.alpha, "Keep a step iff its PNS estimate exceeds this")->capture_default_str();
  optimize->add_option("--k", opt.k, "Rollouts per step")->capture_default_str();
  optimize->add_option("--strategy", opt.strategy, "direct, prompt-based or external")->capture_default_str();
  optimize->add_option("--max-disjointness-retries", opt.max_disjointness_retries,
                       "Extra attempts for a counterfactual step that echoes the original")->capture_default_str();
  optimize->add_option("--disjointness-threshold", opt.disjointness_threshold,
                       "Jaccard similarity at which segments count as the same")->capture_default_str();
  optimize->add_option("--redraw-budget", opt.redraw_budget, "Redraws per step; negative means 2k")->capture_default_str();
  optimize->add_flag("--resample-alt", opt.resample_alt, "Draw a new counterfactual step for every rollout");
  optimize->add_flag("--cascade", opt.cascade, "Regenerate the rest of the chain after each prune");
  optimize->add_option("--rollout-concurrency", opt.rollout_concurrency, "Rollouts of one step run together")->capture_default_str();
  optimize->add_option("--validation", opt.validation, "answer-only or coherence")->capture_default_str();
  optimize->add_option("--coherence-rubric", opt.coherence_rubric, "Rubric text for coherence validation");
  optimize->add_option("--max-tokens", opt.max_tokens, "Generation token limit")->capture_default_str();
  optimize->add_option("--temperature", opt.temperature, "Sampling temperature")->capture_default_str();
  optimize->add_option("--top-p", opt.top_p, "Nucleus sampling mass")->capture_default_str();
  optimize->add_option("--max-in-flight", opt.max_in_flight, "Traces processed concurrently")->capture_default_str();
  optimize->add_option("--seed", opt.seed, "Run seed; per-call seeds derive from it")->capture_default_str();
  optimize->add_option("--max-traces", opt.max_traces, "Stop after this many new traces (0 = all)")->capture_default_str();
  add_role(optimize, "base", opt.base, "Base model");
  add_role(optimize, "rollout", opt.rollout, "Rollout model (defaults to base)");
  add_role(optimize, "validator", opt.validator, "Coherence validator (defaults to rollout)");
  add_role(optimize, "external", opt.external, "Stronger model for the external strategy");
  optimize->add_option("--api-key-env", opt.api_key_env, "Environment variable with the bearer token")->capture_default_str();
  optimize->add_option("--max-retries", opt.max_retries, "HTTP retries before giving up")->capture_default_str();
  optimize->add_option("--backoff-ms", opt.backoff_ms, "Base of the exponential retry backoff")->capture_default_str();
  optimize->add_option("--request-timeout", opt.request_timeout_s, "HTTP timeout in seconds")->capture_default_str();
  optimize->add_option("--http-in-flight", opt.http_in_flight, "Open HTTP requests per endpoint")->capture_default_str();
  optimize->add_option("--audit-log", opt.audit_log, "Append every model call to this JSONL file");

  std::string report_dir;
  bool report_json = false;
  auto* report = app.add_subcommand("report", "Rebuild and print the report of a run directory");
  report->add_option("--run-dir", report_dir, "Run directory or records file")->required();
  report->add_flag("--json", report_json, "Print report.json instead of the table");

  std::string fixture_dir = COTPRUNE_DEFAULT_FIXTURE_DIR;
  bool verify_json = false;
  auto* verify = app.add_subcommand("verify-lemmas", "Check the identification results on SCM fixtures");
  verify->add_option("--fixtures", fixture_dir, "Directory of .scm fixtures")->capture_default_str();
  verify->add_flag("--json", verify_json, "Print JSON reports");

  std::string icl_records, icl_questions, icl_variant = "ours-icl", icl_out;
  std::size_t icl_n = 3;
  auto* icl = app.add_subcommand("export-icl", "Render ICL prompts, one file per question");
  icl->add_option("--records", icl_records, "Run directory or records file (needed for ours-icl)");
  icl->add_option("--questions", icl_questions, "JSONL file with question (or problem) and optional id")->required();
  icl->add_option("--variant", icl_variant, "standard, fast-solve, reduction, cod or ours-icl")->capture_default_str();
  icl->add_option("--exemplars", icl_n, "Exemplars for ours-icl, 1 to 5")->capture_default_str();
  icl->add_option("--out", icl_out, "Output directory")->required();

  std::string sft_records, sft_out;
  bool sft_strict = false;
  auto* sft = app.add_subcommand("export-sft", "Write the SFT corpus from sufficient traces");
  sft->add_option("--records", sft_records, "Run directory or records file")->required();
  sft->add_option("--out", sft_out, "Output JSONL file")->required();
  sft->add_flag("--strict", sft_strict, "Fail on traces without ps = 1 instead of leaving them out");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*optimize) return cmd_optimize(opt, out, err, stop);
    if (*report) return cmd_report(report_dir, report_json, out, err);
    if (*verify) return cmd_verify_lemmas(fixture_dir, verify_json, out, err);
    if (*icl) return cmd_export_icl(icl_records, icl_questions, icl_variant, icl_n, icl_out, out, err);
    if (*sft) return cmd_export_sft(sft_records, sft_out, sft_strict, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const InvalidArgument& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitAborted;
  }
  return kExitConfig;
}

}  // namespace cotprune::cli
