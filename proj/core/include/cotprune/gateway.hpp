#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace cotprune {

/// Sampling parameters forwarded to every model call.
struct GenParams {
  int max_tokens = 16384;
  double temperature = 0.6;
  double top_p = 0.95;
  std::optional<std::int64_t> seed;

  /// Throws InvalidArgument when out of range.
  void validate() const;
};

struct PromptBundle {
  std::optional<std::string> system;
  std::string user;

  bool operator==(const PromptBundle&) const = default;
};

struct Completion {
  std::string text;
  /// Generation stopped at max_tokens.
  bool truncated = false;
};

/// Serialized chat-completions request body. Keys are emitted in sorted
/// order, so equal inputs give byte-identical bodies.
std::string encode_chat_request(std::string_view model_name, const PromptBundle& prompt,
                                const GenParams& params);

/// One JSON object per call, appended to a file. Safe to share across threads.
class AuditLog {
 public:
  explicit AuditLog(const std::filesystem::path& path);

  void record(std::string_view backend, const PromptBundle& prompt, const GenParams& params,
              const std::optional<Completion>& completion, std::string_view error,
              std::chrono::milliseconds latency);

 private:
  std::mutex mutex_;
  std::ofstream out_;
};

/// A model endpoint. Implementations must tolerate concurrent callers.
class Backend {
 public:
  virtual ~Backend() = default;

  /// Runs the completion and, when an audit log is attached, records it.
  Completion generate(const PromptBundle& prompt, const GenParams& params);

  void set_audit_log(std::shared_ptr<AuditLog> log) { audit_ = std::move(log); }
  virtual std::string name() const = 0;

 protected:
  virtual Completion complete(const PromptBundle& prompt, const GenParams& params) = 0;

 private:
  std::shared_ptr<AuditLog> audit_;
};

/// Rule-driven test double. The first rule whose matcher accepts the prompt
/// answers it; each rule hands out its responses in order and then repeats
/// the last one. Calls are serialized so the order is well defined.
class ScriptedBackend final : public Backend {
 public:
  using Matcher = std::function<bool(const PromptBundle&)>;

  struct Rule {
    std::string label;
    Matcher matcher;
    std::vector<std::string> responses;
  };

  struct TranscriptEntry {
    std::string rule;
    PromptBundle prompt;
    std::string response;

    bool operator==(const TranscriptEntry&) const = default;
  };

  explicit ScriptedBackend(std::string name = "scripted");

  /// Matches when `needle` occurs in the system or user text.
  ScriptedBackend& on_contains(std::string needle, std::vector<std::string> responses);
  /// ECMAScript regex searched in the user text.
  ScriptedBackend& on_regex(const std::string& pattern, std::vector<std::string> responses);
  ScriptedBackend& on(std::string label, Matcher matcher, std::vector<std::string> responses);
  ScriptedBackend& set_fallback(std::optional<std::string> response);

  /// {"rules": [{"contains"|"regex": str, "responses": [str...]}], "fallback": str?}
  static std::unique_ptr<ScriptedBackend> from_json(const nlohmann::json& script,
                                                    std::string name = "scripted");

  std::vector<TranscriptEntry> transcript() const;
  std::string name() const override { return name_; }

 protected:
  Completion complete(const PromptBundle& prompt, const GenParams& params) override;

 private:
  std::string name_;
  std::vector<Rule> rules_;
  std::vector<std::size_t> positions_;
  std::optional<std::string> fallback_;
  mutable std::mutex mutex_;
  std::vector<TranscriptEntry> transcript_;
};

/// Wraps a callable; used to put simulators behind the Backend interface.
class FunctionBackend final : public Backend {
 public:
  using Fn = std::function<Completion(const PromptBundle&, const GenParams&)>;

  FunctionBackend(std::string name, Fn fn) : name_(std::move(name)), fn_(std::move(fn)) {}
  std::string name() const override { return name_; }

 protected:
  Completion complete(const PromptBundle& prompt, const GenParams& params) override {
    return fn_(prompt, params);
  }

 private:
  std::string name_;
  Fn fn_;
};

/// Cuts `text` after `max_tokens` whitespace tokens. Returns true if it cut.
bool truncate_to_tokens(std::string& text, int max_tokens);

}  // namespace cotprune
