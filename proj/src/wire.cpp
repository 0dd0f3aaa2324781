#include "sftx/wire.hpp"

#include <httplib.h>

#include <cmath>

#include "sftx/text.hpp"

namespace sftx::wire {

using nlohmann::json;

namespace {

json log_or_null(double p) {
  if (p <= 0.0) return nullptr;
  return std::log(p);
}

double exp_or_zero(const json& j) {
  if (j.is_null()) return 0.0;
  return std::exp(j.get<double>());
}

std::vector<TokenProb> entries_from_json(const json& arr) {
  std::vector<TokenProb> out;
  out.reserve(arr.size());
  for (const auto& e : arr) {
    out.push_back({e.at("token").get<std::string>(), std::exp(e.at("logprob").get<double>())});
  }
  return out;
}

}  // namespace

json entries_to_json(const std::vector<TokenProb>& entries) {
  json arr = json::array();
  for (const auto& e : entries) arr.push_back({{"token", e.token}, {"logprob", std::log(e.prob)}});
  return arr;
}

json distribution_to_json(const TokenDistribution& d) {
  return {{"entries", entries_to_json(d.entries)}, {"truncated_logmass", log_or_null(d.truncated_mass)}};
}

TokenDistribution distribution_from_json(const json& j) {
  TokenDistribution d;
  d.entries = entries_from_json(j.at("entries"));
  d.truncated_mass = j.contains("truncated_logmass") ? exp_or_zero(j["truncated_logmass"]) : 0.0;
  d.sort_entries();
  return d;
}

json generation_to_json(const TrackedGeneration& g) {
  json steps = json::array();
  for (const auto& s : g.steps) {
    steps.push_back({{"token", s.token},
                     {"logprob", std::log(s.prob)},
                     {"alternatives", entries_to_json(s.alternatives.entries)},
                     {"truncated_logmass", log_or_null(s.alternatives.truncated_mass)}});
  }
  return {{"steps", std::move(steps)}, {"stop_reason", to_string(g.stop_reason)}};
}

TrackedGeneration generation_from_json(const json& j, std::string_view prompt) {
  TrackedGeneration g;
  g.prompt = std::string(prompt);
  for (const auto& s : j.at("steps")) {
    GenerationStep step;
    step.token = s.at("token").get<std::string>();
    step.prob = std::exp(s.at("logprob").get<double>());
    if (auto it = s.find("alternatives"); it != s.end()) {
      step.alternatives.entries = entries_from_json(*it);
      step.alternatives.sort_entries();
    }
    if (auto it = s.find("truncated_logmass"); it != s.end()) {
      step.alternatives.truncated_mass = exp_or_zero(*it);
    }
    if (step.alternatives.entries.empty()) step.alternatives.entries.push_back({step.token, step.prob});
    g.steps.push_back(std::move(step));
  }
  g.stop_reason = stop_reason_from_string(j.value("stop_reason", std::string("max_tokens")));
  return g;
}

// ---------------------------------------------------------------------------

ServerThread::ServerThread() : server_(std::make_unique<httplib::Server>()) {}

ServerThread::~ServerThread() { stop(); }

int ServerThread::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = server_->bind_to_any_port(host);
  } else if (!server_->bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return bound;
}

void ServerThread::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

void ServerThread::join() {
  if (thread_.joinable()) thread_.join();
}

namespace {

void reply_error(httplib::Response& res, int status, const std::string& message) {
  res.status = status;
  res.set_content(json{{"error", message}}.dump(), "application/json");
}

}  // namespace

ProtocolServer::ProtocolServer(std::shared_ptr<const Backend> backend) : backend_(std::move(backend)) {
  auto& svr = thread_.server();
  svr.Post("/v1/distribution", [this](const httplib::Request& req, httplib::Response& res) {
    json body;
    try {
      body = json::parse(req.body);
      auto prompt = body.at("prompt").get<std::string>();
      auto top_k = body.value("top_k", 5);
      if (top_k < 1) return reply_error(res, 400, "top_k must be >= 1");
      auto d = backend_->next_token_distribution(prompt, top_k);
      res.set_content(distribution_to_json(d).dump(), "application/json");
    } catch (const json::exception& e) {
      reply_error(res, 400, e.what());
    } catch (const std::exception& e) {
      reply_error(res, 500, e.what());
    }
  });
  svr.Post("/v1/greedy", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      auto body = json::parse(req.body);
      auto prompt = body.at("prompt").get<std::string>();
      auto max_tokens = body.value("max_tokens", 512);
      auto top_k = body.value("top_k", 5);
      auto g = backend_->generate_greedy(prompt, max_tokens, top_k);
      res.set_content(generation_to_json(g).dump(), "application/json");
    } catch (const json::exception& e) {
      reply_error(res, 400, e.what());
    } catch (const std::exception& e) {
      reply_error(res, 500, e.what());
    }
  });
}

int ProtocolServer::start(const std::string& host, int port) {
  port_ = thread_.start(host, port);
  return port_;
}

}  // namespace sftx::wire
