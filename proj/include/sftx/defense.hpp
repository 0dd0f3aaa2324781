#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sftx/backend.hpp"
#include "sftx/wire.hpp"

namespace sftx {

struct DefenseConfig {
  double tau_def = 0.8;  // the attacker threshold the defender hides
  std::uint64_t seed = 0;
  bool enabled = true;

  // tau_def >= 0.5 keeps the rewritten top token the argmax.
  void validate() const;
};

// Uniform target in [tau_def, 1 - 1e-9].
double draw_target(double tau_def, std::mt19937_64& rng);

// Raises the top probability to v (no-op when v <= p1 or p1 == 1) and scales
// every other entry and the truncated mass by the same factor.
TokenDistribution rewrite_distribution(const TokenDistribution& dist, double v);
TokenDistribution rewrite_distribution(const TokenDistribution& dist, double tau_def, std::mt19937_64& rng);

std::vector<double> softmax(std::span<const double> logits);
double log_sum_exp(std::span<const double> xs);

// Logit-space form of the same rewrite: l1' = ln(v / (1 - v)) + logsumexp(l2..ln).
// Input must be sorted descending with at least two entries.
std::vector<double> rewrite_logits(std::span<const double> logits, double v);
std::vector<double> rewrite_logits(std::span<const double> logits, double tau_def, std::mt19937_64& rng);

// Rewrites every distribution in a wire-protocol payload in place.
void rewrite_distribution_payload(nlohmann::json& payload, double tau_def, std::mt19937_64& rng);
void rewrite_greedy_payload(nlohmann::json& payload, double tau_def, std::mt19937_64& rng);

struct QueryLogEntry {
  std::string client;
  std::string prompt;
  double timestamp = 0.0;  // seconds
};

QueryLogEntry query_log_entry_from_json(const nlohmann::json& j);
nlohmann::json to_json(const QueryLogEntry& e);

struct PrefixAlert {
  std::string client;
  std::string prefix;
  std::size_t distinct_prompts = 0;
  double first_timestamp = 0.0;
  double last_timestamp = 0.0;
};

nlohmann::json to_json(const PrefixAlert& a);

inline constexpr std::size_t kMinSharedPrefix = 32;

// One alert per (client, prefix) group in which at least min_group distinct
// prompts issued within window_seconds share a prefix of >= min_prefix chars.
std::vector<PrefixAlert> detect_shared_prefix(const std::vector<QueryLogEntry>& log, std::size_t min_group,
                                              double window_seconds, std::size_t min_prefix = kMinSharedPrefix);

// HTTP proxy in front of an upstream toolkit-protocol endpoint.
class DefenseProxy {
 public:
  DefenseProxy(std::string upstream, DefenseConfig config,
               std::optional<std::filesystem::path> query_log = std::nullopt);

  int start(const std::string& host = "127.0.0.1", int port = 0);
  void stop() { thread_.stop(); }
  void join() { thread_.join(); }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

  std::vector<QueryLogEntry> query_log() const;
  std::uint64_t requests() const { return next_request_.load(); }

 private:
  void log_query(const std::string& client, const std::string& prompt);

  std::string upstream_host_;
  std::string upstream_path_;
  DefenseConfig config_;
  std::optional<std::filesystem::path> log_path_;
  std::atomic<std::uint64_t> next_request_{0};
  mutable std::mutex log_mu_;
  std::vector<QueryLogEntry> log_;
  wire::ServerThread thread_;
  int port_ = 0;
};

}  // namespace sftx
