#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <chrono>
#include <cstdlib>
#include <regex>
#include <thread>

#include <spdlog/spdlog.h>

#include "mground/errors.hpp"
#include "mground/lsp.hpp"

namespace mground::lsp {

using nlohmann::json;

HttpChatClient::HttpChatClient(Options opts) : opts_(std::move(opts)) {
  if (opts_.max_retries < 0) fail(ErrorCode::kConfig, "http client: max_retries must be >= 0");
  if (!(opts_.timeout_seconds > 0.0)) fail(ErrorCode::kConfig, "http client: timeout must be > 0");
}

HttpChatClient::Options HttpChatClient::options_from_env(Options base) {
  if (const char* v = std::getenv("ZOMG_LLM_BASE_URL"); v && *v) base.base_url = v;
  if (const char* v = std::getenv("ZOMG_LLM_API_KEY"); v && *v) base.api_key = v;
  if (const char* v = std::getenv("ZOMG_LLM_MODEL"); v && *v) base.model = v;
  return base;
}

std::string HttpChatClient::complete(const ChatRequest& request) {
  static const std::regex url_re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(opts_.base_url, m, url_re)) {
    fail(ErrorCode::kConfig, "http client: malformed base URL '" + opts_.base_url + "'");
  }
  const std::string origin = m.str(1);
  std::string path = m.str(2);
  while (!path.empty() && path.back() == '/') path.pop_back();
  path += "/chat/completions";

  httplib::Client cli(origin);
  const auto secs = static_cast<time_t>(opts_.timeout_seconds);
  const auto usecs = static_cast<time_t>((opts_.timeout_seconds - static_cast<double>(secs)) * 1e6);
  cli.set_connection_timeout(secs, usecs);
  cli.set_read_timeout(secs, usecs);
  cli.set_write_timeout(secs, usecs);
  httplib::Headers headers;
  if (!opts_.api_key.empty()) headers.emplace("Authorization", "Bearer " + opts_.api_key);

  const json body = {{"model", opts_.model},
                     {"temperature", request.temperature},
                     {"messages", json::array({{{"role", "user"}, {"content", request.prompt}}})}};
  const std::string payload = body.dump();

  std::string last_error;
  for (int attempt = 0; attempt <= opts_.max_retries; ++attempt) {
    if (attempt > 0) {
      spdlog::warn("llm request retry {}/{}: {}", attempt, opts_.max_retries, last_error);
      std::this_thread::sleep_for(std::chrono::milliseconds(250 << (attempt - 1)));
    }
    auto res = cli.Post(path, headers, payload, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      fail(ErrorCode::kLspUnavailable, "llm request failed with HTTP " + std::to_string(res->status) + ": " +
                                           res->body.substr(0, 200));
    }
    try {
      const json reply = json::parse(res->body);
      return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
      fail(ErrorCode::kLspUnavailable, std::string("llm reply is not a chat completion: ") + e.what());
    }
  }
  fail(ErrorCode::kLspUnavailable, "llm request failed after " + std::to_string(opts_.max_retries + 1) +
                                       " attempts: " + last_error);
}

}  // namespace mground::lsp
