#include "cotprune/gateway.hpp"

#include <cctype>
#include <regex>

#include "cotprune/errors.hpp"
#include "cotprune/trace.hpp"

namespace cotprune {

using nlohmann::json;

void GenParams::validate() const {
  if (max_tokens < 1) throw InvalidArgument("max_tokens must be >= 1");
  if (!(temperature >= 0.0)) throw InvalidArgument("temperature must be >= 0");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw InvalidArgument("top_p must be in (0, 1]");
}

std::string encode_chat_request(std::string_view model_name, const PromptBundle& prompt,
                                const GenParams& params) {
  if (model_name.empty()) throw InvalidArgument("model name must not be empty");
  json messages = json::array();
  if (prompt.system) messages.push_back({{"role", "system"}, {"content", *prompt.system}});
  messages.push_back({{"role", "user"}, {"content", prompt.user}});
  json body = {
      {"model", model_name},
      {"messages", std::move(messages)},
      {"max_tokens", params.max_tokens},
      {"temperature", params.temperature},
      {"top_p", params.top_p},
  };
  if (params.seed) body["seed"] = *params.seed;
  return body.dump();
}

AuditLog::AuditLog(const std::filesystem::path& path) : out_(path, std::ios::app) {
  if (!out_) throw InvalidArgument("cannot open audit log " + path.string());
}

void AuditLog::record(std::string_view backend, const PromptBundle& prompt,
                      const GenParams& params, const std::optional<Completion>& completion,
                      std::string_view error, std::chrono::milliseconds latency) {
  json entry = {
      {"backend", backend},
      {"system", prompt.system ? json(*prompt.system) : json(nullptr)},
      {"user", prompt.user},
      {"params",
       {{"max_tokens", params.max_tokens},
        {"temperature", params.temperature},
        {"top_p", params.top_p},
        {"seed", params.seed ? json(*params.seed) : json(nullptr)}}},
      {"latency_ms", latency.count()},
  };
  if (completion) {
    entry["response"] = completion->text;
    entry["truncated"] = completion->truncated;
  } else {
    entry["error"] = error;
  }
  std::lock_guard lock(mutex_);
  out_ << entry.dump() << '\n';
  out_.flush();
}

Completion Backend::generate(const PromptBundle& prompt, const GenParams& params) {
  if (prompt.user.empty()) throw InvalidArgument("prompt user message must not be empty");
  params.validate();
  if (!audit_) return complete(prompt, params);

  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
        std::chrono::steady_clock::now() - start);
  };
  try {
    Completion out = complete(prompt, params);
    audit_->record(name(), prompt, params, out, {}, elapsed());
    return out;
  } catch (const std::exception& e) {
    audit_->record(name(), prompt, params, std::nullopt, e.what(), elapsed());
    throw;
  }
}

bool truncate_to_tokens(std::string& text, int max_tokens) {
  if (max_tokens < 0 || count_tokens(text) <= static_cast<std::size_t>(max_tokens)) return false;
  int seen = 0;
  bool in_token = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const bool space = std::isspace(static_cast<unsigned char>(text[i])) != 0;
    if (!space && !in_token) {
      if (seen == max_tokens) {
        text.resize(i);
        text = std::string(trim(text));
        return true;
      }
      ++seen;
    }
    in_token = !space;
  }
  return false;
}

ScriptedBackend::ScriptedBackend(std::string name) : name_(std::move(name)) {}

ScriptedBackend& ScriptedBackend::on(std::string label, Matcher matcher,
                                     std::vector<std::string> responses) {
  if (responses.empty()) throw InvalidArgument("scripted rule needs at least one response");
  std::lock_guard lock(mutex_);
  rules_.push_back(Rule{std::move(label), std::move(matcher), std::move(responses)});
  positions_.push_back(0);
  return *this;
}

ScriptedBackend& ScriptedBackend::on_contains(std::string needle,
                                              std::vector<std::string> responses) {
  auto label = "contains:" + needle;
  return on(std::move(label),
            [needle = std::move(needle)](const PromptBundle& p) {
              return p.user.find(needle) != std::string::npos ||
                     (p.system && p.system->find(needle) != std::string::npos);
            },
            std::move(responses));
}

ScriptedBackend& ScriptedBackend::on_regex(const std::string& pattern,
                                           std::vector<std::string> responses) {
  std::regex re(pattern);
  return on("regex:" + pattern,
            [re = std::move(re)](const PromptBundle& p) { return std::regex_search(p.user, re); },
            std::move(responses));
}

ScriptedBackend& ScriptedBackend::set_fallback(std::optional<std::string> response) {
  std::lock_guard lock(mutex_);
  fallback_ = std::move(response);
  return *this;
}

std::unique_ptr<ScriptedBackend> ScriptedBackend::from_json(const json& script, std::string name) {
  auto backend = std::make_unique<ScriptedBackend>(std::move(name));
  if (!script.is_object()) throw InvalidArgument("script must be a JSON object");
  for (const auto& rule : script.value("rules", json::array())) {
    auto responses = rule.at("responses").get<std::vector<std::string>>();
    if (rule.contains("contains")) {
      backend->on_contains(rule.at("contains").get<std::string>(), std::move(responses));
    } else if (rule.contains("regex")) {
      backend->on_regex(rule.at("regex").get<std::string>(), std::move(responses));
    } else {
      throw InvalidArgument("script rule needs \"contains\" or \"regex\"");
    }
  }
  if (script.contains("fallback") && !script.at("fallback").is_null()) {
    backend->set_fallback(script.at("fallback").get<std::string>());
  }
  return backend;
}

std::vector<ScriptedBackend::TranscriptEntry> ScriptedBackend::transcript() const {
  std::lock_guard lock(mutex_);
  return transcript_;
}

Completion ScriptedBackend::complete(const PromptBundle& prompt, const GenParams& params) {
  std::lock_guard lock(mutex_);
  std::string label;
  std::string response;
  bool matched = false;
  for (std::size_t i = 0; i < rules_.size(); ++i) {
    if (!rules_[i].matcher(prompt)) continue;
    const auto& responses = rules_[i].responses;
    response = responses[std::min(positions_[i], responses.size() - 1)];
    ++positions_[i];
    label = rules_[i].label;
    matched = true;
    break;
  }
  if (!matched) {
    if (!fallback_) throw ScriptError(name_ + ": no rule matches prompt: " + prompt.user.substr(0, 120));
    response = *fallback_;
    label = "fallback";
  }
  transcript_.push_back(TranscriptEntry{label, prompt, response});
  Completion out{std::move(response), false};
  out.truncated = truncate_to_tokens(out.text, params.max_tokens);
  return out;
}

}  // namespace cotprune
