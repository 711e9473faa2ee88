#include <gtest/gtest.h>

#include <atomic>
#include <thread>

#include <httplib.h>

#include "cotprune/errors.hpp"
#include "cotprune/http_backend.hpp"

using namespace cotprune;
using nlohmann::json;

namespace {

std::string reply(const std::string& content, const std::string& finish = "stop") {
  return json{{"choices", {{{"index", 0}, {"message", {{"role", "assistant"}, {"content", content}}},
                            {"finish_reason", finish}}}}}
      .dump();
}

class LocalServer {
 public:
  using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

  explicit LocalServer(Handler handler) : handler_(std::move(handler)) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      {
        std::lock_guard lock(mutex_);
        bodies_.push_back(req.body);
        auth_.push_back(req.get_header_value("Authorization"));
      }
      handler_(req, res);
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~LocalServer() {
    server_.stop();
    thread_.join();
  }

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }
  std::vector<std::string> bodies() {
    std::lock_guard lock(mutex_);
    return bodies_;
  }
  std::vector<std::string> auth() {
    std::lock_guard lock(mutex_);
    return auth_;
  }

 private:
  Handler handler_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
  std::mutex mutex_;
  std::vector<std::string> bodies_;
  std::vector<std::string> auth_;
};

HttpBackendConfig config_for(const LocalServer& server) {
  HttpBackendConfig c;
  c.base_url = server.url();
  c.model = "test-model";
  c.api_key_env = "COTPRUNE_TEST_KEY";
  c.max_retries = 2;
  c.backoff_base = std::chrono::milliseconds(1);
  c.timeout = std::chrono::seconds(5);
  return c;
}

}  // namespace

TEST(Http, WireFormatAndAuth) {
  LocalServer server([](const httplib::Request&, httplib::Response& res) {
    res.set_content(reply("9801 + 99 + 1\n\n9901"), "application/json");
  });
  HttpBackend backend(config_for(server));
  const PromptBundle prompt{"sys", "Compute 99^2 + 99 + 1"};
  GenParams params;
  params.seed = 5;

  ::unsetenv("COTPRUNE_TEST_KEY");
  EXPECT_EQ(backend.generate(prompt, params).text, "9801 + 99 + 1\n\n9901");
  ::setenv("COTPRUNE_TEST_KEY", "secret", 1);
  backend.generate(prompt, params);
  ::unsetenv("COTPRUNE_TEST_KEY");

  const auto bodies = server.bodies();
  ASSERT_EQ(bodies.size(), 2u);
  EXPECT_EQ(bodies[0], encode_chat_request("test-model", prompt, params));
  EXPECT_EQ(json::parse(bodies[0])["model"], "test-model");
  EXPECT_EQ(json::parse(bodies[0])["seed"], 5);
  EXPECT_EQ(server.auth()[0], "");
  EXPECT_EQ(server.auth()[1], "Bearer secret");
}

TEST(Http, RetriesServerErrorsThenSucceeds) {
  std::atomic<int> calls = 0;
  LocalServer server([&](const httplib::Request&, httplib::Response& res) {
    if (++calls < 3) {
      res.status = calls == 1 ? 503 : 429;
      return;
    }
    res.set_content(reply("ok"), "application/json");
  });
  HttpBackend backend(config_for(server));
  EXPECT_EQ(backend.generate({std::nullopt, "q"}, {}).text, "ok");
  EXPECT_EQ(calls.load(), 3);
}

TEST(Http, GivesUpAfterRetries) {
  std::atomic<int> calls = 0;
  LocalServer server([&](const httplib::Request&, httplib::Response& res) {
    ++calls;
    res.status = 500;
  });
  HttpBackend backend(config_for(server));
  EXPECT_THROW(backend.generate({std::nullopt, "q"}, {}), BackendUnavailable);
  EXPECT_EQ(calls.load(), 3);
}

TEST(Http, ClientErrorsAreNotRetried) {
  std::atomic<int> calls = 0;
  LocalServer server([&](const httplib::Request&, httplib::Response& res) {
    ++calls;
    res.status = 400;
    res.set_content("bad request", "text/plain");
  });
  HttpBackend backend(config_for(server));
  try {
    backend.generate({std::nullopt, "q"}, {});
    FAIL();
  } catch (const BackendUnavailable&) {
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("400"), std::string::npos);
  }
  EXPECT_EQ(calls.load(), 1);
}

TEST(Http, TruncationAndMalformedBodies) {
  EXPECT_TRUE(HttpBackend::parse_response(reply("partial", "length")).truncated);
  EXPECT_FALSE(HttpBackend::parse_response(reply("full")).truncated);
  EXPECT_THROW(HttpBackend::parse_response("{}"), Error);
  EXPECT_THROW(HttpBackend::parse_response("not json"), Error);
}

TEST(Http, UnreachableHostIsUnavailable) {
  HttpBackendConfig c;
  c.base_url = "http://127.0.0.1:1/v1";
  c.model = "m";
  c.max_retries = 1;
  c.backoff_base = std::chrono::milliseconds(1);
  HttpBackend backend(c);
  EXPECT_THROW(backend.generate({std::nullopt, "q"}, {}), BackendUnavailable);
}

TEST(Http, ConfigValidation) {
  HttpBackendConfig c;
  c.base_url = "localhost:8000";
  c.model = "m";
  EXPECT_THROW(HttpBackend{c}, InvalidArgument);
  c.base_url = "http://localhost:8000";
  c.model = "";
  EXPECT_THROW(HttpBackend{c}, InvalidArgument);
  c.model = "m";
  c.max_in_flight = 0;
  EXPECT_THROW(HttpBackend{c}, InvalidArgument);
}

TEST(Http, InFlightCap) {
  std::atomic<int> open = 0;
  std::atomic<int> peak = 0;
  LocalServer server([&](const httplib::Request&, httplib::Response& res) {
    const int now = ++open;
    int seen = peak.load();
    while (now > seen && !peak.compare_exchange_weak(seen, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(30));
    --open;
    res.set_content(reply("ok"), "application/json");
  });
  auto config = config_for(server);
  config.max_in_flight = 2;
  HttpBackend backend(config);
  std::vector<std::thread> callers;
  for (int i = 0; i < 6; ++i) {
    callers.emplace_back([&] { EXPECT_EQ(backend.generate({std::nullopt, "q"}, {}).text, "ok"); });
  }
  for (auto& t : callers) t.join();
  EXPECT_LE(peak.load(), 2);
  EXPECT_GE(peak.load(), 1);
}
