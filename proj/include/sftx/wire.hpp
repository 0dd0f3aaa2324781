#pragma once

// JSON encoding of the toolkit wire protocol and an in-process server that
// exposes any Backend over it.
//
//   POST /v1/distribution {"prompt", "top_k"}
//     -> {"entries": [{"token", "logprob"}...], "truncated_logmass"}
//   POST /v1/greedy {"prompt", "max_tokens", "top_k"}
//     -> {"steps": [{"token", "logprob", "alternatives", "truncated_logmass"}...], "stop_reason"}
//
// Logprobs are natural logs. A zero truncated mass is sent as null.

#include <functional>
#include <memory>
#include <string>
#include <thread>

#include <json.hpp>

#include "sftx/backend.hpp"

namespace httplib {
class Server;
}

namespace sftx::wire {

nlohmann::json entries_to_json(const std::vector<TokenProb>& entries);
nlohmann::json distribution_to_json(const TokenDistribution& d);
TokenDistribution distribution_from_json(const nlohmann::json& j);

nlohmann::json generation_to_json(const TrackedGeneration& g);
TrackedGeneration generation_from_json(const nlohmann::json& j, std::string_view prompt);

// Owns an httplib::Server running on a background thread.
class ServerThread {
 public:
  ServerThread();
  ~ServerThread();
  ServerThread(const ServerThread&) = delete;
  ServerThread& operator=(const ServerThread&) = delete;

  httplib::Server& server() { return *server_; }

  // Binds (port 0 picks a free port), starts serving, returns the bound port.
  int start(const std::string& host, int port);
  void stop();
  // Blocks until stop() is called from another thread.
  void join();

 private:
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
};

class ProtocolServer {
 public:
  explicit ProtocolServer(std::shared_ptr<const Backend> backend);

  int start(const std::string& host = "127.0.0.1", int port = 0);
  void stop() { thread_.stop(); }
  void join() { thread_.join(); }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

 private:
  std::shared_ptr<const Backend> backend_;
  ServerThread thread_;
  int port_ = 0;
};

}  // namespace sftx::wire
