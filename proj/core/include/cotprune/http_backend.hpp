#pragma once

#include <chrono>
#include <condition_variable>
#include <mutex>
#include <string>

#include "cotprune/gateway.hpp"

namespace cotprune {

struct HttpBackendConfig {
  /// e.g. "http://localhost:8000/v1"; requests go to {base_url}/chat/completions.
  std::string base_url;
  std::string model;
  /// Name of the environment variable holding the bearer token. Unset or
  /// empty variable means no Authorization header.
  std::string api_key_env = "COTPRUNE_API_KEY";
  int max_retries = 3;
  std::chrono::milliseconds backoff_base{1000};
  int max_in_flight = 8;
  std::chrono::seconds timeout{600};
};

/// OpenAI-compatible chat-completions client.
///
/// A transport error, HTTP 429 or HTTP 5xx is retried `max_retries` times
/// with exponential backoff (base, 2*base, 4*base, ...); when the retries run
/// out BackendUnavailable is thrown. Other HTTP errors and malformed bodies
/// throw Error without retrying. At most `max_in_flight` requests are open at
/// once; further callers block.
class HttpBackend final : public Backend {
 public:
  explicit HttpBackend(HttpBackendConfig config);

  std::string name() const override { return "http:" + config_.model; }
  const HttpBackendConfig& config() const noexcept { return config_; }

  /// Reads choices[0].message.content; finish_reason "length" sets truncated.
  static Completion parse_response(const std::string& body);

 protected:
  Completion complete(const PromptBundle& prompt, const GenParams& params) override;

 private:
  class Slot;

  HttpBackendConfig config_;
  std::string host_;  // scheme://host[:port]
  std::string path_;  // path prefix + /chat/completions
  std::mutex mutex_;
  std::condition_variable cv_;
  int in_flight_ = 0;
};

}  // namespace cotprune
