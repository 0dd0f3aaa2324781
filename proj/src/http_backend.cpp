#include <httplib.h>

#include <chrono>
#include <cstdlib>
#include <regex>
#include <thread>

#include "sftx/backend.hpp"
#include "sftx/text.hpp"
#include "sftx/wire.hpp"

namespace sftx {

using nlohmann::json;

HttpBackend::HttpBackend(BackendConfig config) : config_(std::move(config)) {
  static const std::regex kUrl(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(config_.endpoint, m, kUrl)) throw Error("invalid endpoint URL: " + config_.endpoint);
  scheme_host_port_ = m[1].str();
  base_path_ = m[2].matched ? m[2].str() : "";
  while (!base_path_.empty() && base_path_.back() == '/') base_path_.pop_back();
}

json HttpBackend::post(const std::string& path, const json& body) const {
  httplib::Client cli(scheme_host_port_);
  const auto secs = static_cast<time_t>(config_.timeout_seconds);
  const auto usecs = static_cast<time_t>((config_.timeout_seconds - static_cast<double>(secs)) * 1e6);
  cli.set_connection_timeout(secs, usecs);
  cli.set_read_timeout(secs, usecs);
  cli.set_write_timeout(secs, usecs);
  httplib::Headers headers;
  if (!config_.auth_env.empty()) {
    if (const char* token = std::getenv(config_.auth_env.c_str())) {
      headers.emplace("Authorization", std::string("Bearer ") + token);
    }
  }
  const auto payload = body.dump();
  std::string last_error;
  for (int attempt = 0; attempt < config_.retries; ++attempt) {
    if (attempt) std::this_thread::sleep_for(std::chrono::milliseconds(100 << (attempt - 1)));
    ++requests_;
    auto res = cli.Post(base_path_ + path, headers, payload, "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status) + ": " + res->body;
      continue;
    }
    if (res->status != 200) {
      throw TransportError(path + ": HTTP " + std::to_string(res->status) + ": " + res->body);
    }
    try {
      return json::parse(res->body);
    } catch (const json::parse_error&) {
      throw TransportError(path + ": malformed JSON response");
    }
  }
  throw TransportError(path + ": giving up after " + std::to_string(config_.retries) +
                       " attempts: " + last_error);
}

TokenDistribution HttpBackend::next_token_distribution(std::string_view prefix, int top_k) const {
  auto j = post("/v1/distribution", {{"prompt", prefix}, {"top_k", top_k}});
  try {
    return wire::distribution_from_json(j);
  } catch (const json::exception& e) {
    throw TransportError(std::string("/v1/distribution: bad payload: ") + e.what());
  }
}

TrackedGeneration HttpBackend::generate_greedy(std::string_view prompt, int max_tokens,
                                               int record_top_k) const {
  auto j = post("/v1/greedy", {{"prompt", prompt}, {"max_tokens", max_tokens}, {"top_k", std::max(record_top_k, 1)}});
  try {
    return wire::generation_from_json(j, prompt);
  } catch (const json::exception& e) {
    throw TransportError(std::string("/v1/greedy: bad payload: ") + e.what());
  }
}

}  // namespace sftx
