#include "cotprune/http_backend.hpp"

#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "cotprune/errors.hpp"

namespace cotprune {

class HttpBackend::Slot {
 public:
  explicit Slot(HttpBackend& owner) : owner_(owner) {
    std::unique_lock lock(owner_.mutex_);
    owner_.cv_.wait(lock, [&] { return owner_.in_flight_ < owner_.config_.max_in_flight; });
    ++owner_.in_flight_;
  }
  ~Slot() {
    {
      std::lock_guard lock(owner_.mutex_);
      --owner_.in_flight_;
    }
    owner_.cv_.notify_one();
  }
  Slot(const Slot&) = delete;
  Slot& operator=(const Slot&) = delete;

 private:
  HttpBackend& owner_;
};

HttpBackend::HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {
  if (config_.model.empty()) throw InvalidArgument("HTTP backend needs a model name");
  if (config_.max_in_flight < 1) throw InvalidArgument("max_in_flight must be >= 1");
  if (config_.max_retries < 0) throw InvalidArgument("max_retries must be >= 0");
  const auto scheme_end = config_.base_url.find("://");
  if (scheme_end == std::string::npos) {
    throw InvalidArgument("base URL needs a scheme: " + config_.base_url);
  }
  const auto path_start = config_.base_url.find('/', scheme_end + 3);
  host_ = config_.base_url.substr(0, path_start);
  std::string prefix = path_start == std::string::npos ? "" : config_.base_url.substr(path_start);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  path_ = prefix + "/chat/completions";
}

Completion HttpBackend::parse_response(const std::string& body) {
  nlohmann::json parsed;
  try {
    parsed = nlohmann::json::parse(body);
    const auto& choice = parsed.at("choices").at(0);
    Completion out;
    out.text = choice.at("message").at("content").get<std::string>();
    out.truncated = choice.value("finish_reason", std::string{}) == "length";
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed chat completion response: ") + e.what());
  }
}

Completion HttpBackend::complete(const PromptBundle& prompt, const GenParams& params) {
  const std::string body = encode_chat_request(config_.model, prompt, params);
  httplib::Headers headers;
  if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key) {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }

  Slot slot(*this);
  std::string last_error;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(config_.backoff_base * (1 << (attempt - 1)));

    httplib::Client client(host_);
    client.set_connection_timeout(std::chrono::seconds(10));
    client.set_read_timeout(config_.timeout);
    client.set_write_timeout(std::chrono::seconds(30));
    auto res = client.Post(path_, headers, body, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      throw Error("HTTP " + std::to_string(res->status) + " from " + host_ + path_ + ": " +
                  res->body.substr(0, 200));
    }
    return parse_response(res->body);
  }
  throw BackendUnavailable(host_ + path_ + " unavailable after " +
                           std::to_string(config_.max_retries) + " retries (" + last_error + ")");
}

}  // namespace cotprune
