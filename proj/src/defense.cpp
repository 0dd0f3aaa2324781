#include "sftx/defense.hpp"

#include <httplib.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <regex>

#include "sftx/text.hpp"

namespace sftx {

using nlohmann::json;

void DefenseConfig::validate() const {
  if (!(tau_def >= 0.5 && tau_def < 1.0)) {
    throw Error("tau_def must be in [0.5, 1), got " + std::to_string(tau_def));
  }
}

double draw_target(double tau_def, std::mt19937_64& rng) {
  const double hi = 1.0 - 1e-9;
  return tau_def + uniform01(rng) * (hi - tau_def);
}

TokenDistribution rewrite_distribution(const TokenDistribution& dist, double v) {
  if (dist.entries.empty()) return dist;
  const double p1 = dist.entries.front().prob;
  if (p1 >= 1.0 || v <= p1) return dist;
  double rest = dist.truncated_mass;
  for (std::size_t i = 1; i < dist.entries.size(); ++i) rest += dist.entries[i].prob;
  if (rest <= 0.0) return dist;
  const double scale = (1.0 - v) / rest;
  TokenDistribution out = dist;
  out.entries.front().prob = v;
  for (std::size_t i = 1; i < out.entries.size(); ++i) out.entries[i].prob *= scale;
  out.truncated_mass *= scale;
  return out;
}

TokenDistribution rewrite_distribution(const TokenDistribution& dist, double tau_def, std::mt19937_64& rng) {
  return rewrite_distribution(dist, draw_target(tau_def, rng));
}

double log_sum_exp(std::span<const double> xs) {
  if (xs.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(xs.begin(), xs.end());
  if (std::isinf(m)) return m;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

std::vector<double> softmax(std::span<const double> logits) {
  const double z = log_sum_exp(logits);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = std::exp(logits[i] - z);
  return out;
}

std::vector<double> rewrite_logits(std::span<const double> logits, double v) {
  if (logits.size() < 2) throw Error("rewrite_logits needs at least two logits");
  if (!(v > 0.0 && v < 1.0)) throw Error("rewrite target must lie in (0, 1)");
  std::vector<double> out(logits.begin(), logits.end());
  const double rest = log_sum_exp(logits.subspan(1));
  // softmax top = 1 / (1 + exp(rest - l1))
  const double p1 = 1.0 / (1.0 + std::exp(rest - logits[0]));
  if (v <= p1) return out;
  out[0] = std::log(v) - std::log1p(-v) + rest;
  return out;
}

std::vector<double> rewrite_logits(std::span<const double> logits, double tau_def, std::mt19937_64& rng) {
  return rewrite_logits(logits, draw_target(tau_def, rng));
}

void rewrite_distribution_payload(json& payload, double tau_def, std::mt19937_64& rng) {
  auto d = wire::distribution_from_json(payload);
  payload = wire::distribution_to_json(rewrite_distribution(d, tau_def, rng));
}

void rewrite_greedy_payload(json& payload, double tau_def, std::mt19937_64& rng) {
  for (auto& step : payload.at("steps")) {
    if (!step.contains("alternatives") || step["alternatives"].empty()) {
      // Only the chosen token is reported: treat the rest as truncated mass.
      TokenDistribution d;
      d.entries.push_back({step.at("token").get<std::string>(), std::exp(step.at("logprob").get<double>())});
      d.truncated_mass = std::max(0.0, 1.0 - d.entries.front().prob);
      auto r = rewrite_distribution(d, tau_def, rng);
      step["logprob"] = std::log(r.entries.front().prob);
      continue;
    }
    json as_dist = {{"entries", step["alternatives"]},
                    {"truncated_logmass", step.value("truncated_logmass", json(nullptr))}};
    auto d = wire::distribution_from_json(as_dist);
    auto r = rewrite_distribution(d, tau_def, rng);
    auto encoded = wire::distribution_to_json(r);
    step["alternatives"] = encoded["entries"];
    step["truncated_logmass"] = encoded["truncated_logmass"];
    const auto token = step.at("token").get<std::string>();
    for (const auto& e : r.entries) {
      if (e.token == token) {
        step["logprob"] = std::log(e.prob);
        break;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Shared-prefix detection

QueryLogEntry query_log_entry_from_json(const json& j) {
  return {j.value("client", std::string("unknown")), j.at("prompt").get<std::string>(),
          j.value("timestamp", 0.0)};
}

json to_json(const QueryLogEntry& e) {
  return {{"client", e.client}, {"prompt", e.prompt}, {"timestamp", e.timestamp}};
}

json to_json(const PrefixAlert& a) {
  return {{"client", a.client},
          {"prefix", a.prefix},
          {"distinct_prompts", a.distinct_prompts},
          {"first_timestamp", a.first_timestamp},
          {"last_timestamp", a.last_timestamp}};
}

std::vector<PrefixAlert> detect_shared_prefix(const std::vector<QueryLogEntry>& log, std::size_t min_group,
                                              double window_seconds, std::size_t min_prefix) {
  // Prompts share a >= min_prefix common prefix iff their first min_prefix bytes agree.
  std::map<std::pair<std::string, std::string>, std::vector<const QueryLogEntry*>> groups;
  for (const auto& e : log) {
    if (e.prompt.size() < min_prefix) continue;
    groups[{e.client, e.prompt.substr(0, min_prefix)}].push_back(&e);
  }
  std::vector<PrefixAlert> alerts;
  for (auto& [key, members] : groups) {
    std::stable_sort(members.begin(), members.end(),
                     [](const QueryLogEntry* a, const QueryLogEntry* b) { return a->timestamp < b->timestamp; });
    std::map<std::string_view, int> in_window;
    std::size_t lo = 0;
    std::size_t best = 0, best_lo = 0, best_hi = 0;
    for (std::size_t hi = 0; hi < members.size(); ++hi) {
      ++in_window[members[hi]->prompt];
      while (members[hi]->timestamp - members[lo]->timestamp > window_seconds) {
        auto it = in_window.find(members[lo]->prompt);
        if (--it->second == 0) in_window.erase(it);
        ++lo;
      }
      if (in_window.size() > best) {
        best = in_window.size();
        best_lo = lo;
        best_hi = hi;
      }
    }
    if (best < std::max<std::size_t>(min_group, 1)) continue;
    std::string_view prefix = members[best_lo]->prompt;
    for (std::size_t i = best_lo + 1; i <= best_hi; ++i) {
      std::string_view p = members[i]->prompt;
      std::size_t n = 0;
      while (n < prefix.size() && n < p.size() && prefix[n] == p[n]) ++n;
      prefix = prefix.substr(0, n);
    }
    alerts.push_back({key.first, std::string(prefix), best, members[best_lo]->timestamp,
                      members[best_hi]->timestamp});
  }
  return alerts;
}

// ---------------------------------------------------------------------------
// Proxy

DefenseProxy::DefenseProxy(std::string upstream, DefenseConfig config, std::optional<std::filesystem::path> query_log)
    : config_(config), log_path_(std::move(query_log)) {
  config_.validate();
  static const std::regex kUrl(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(upstream, m, kUrl)) throw Error("invalid upstream URL: " + upstream);
  upstream_host_ = m[1].str();
  upstream_path_ = m[2].matched ? m[2].str() : "";
  while (!upstream_path_.empty() && upstream_path_.back() == '/') upstream_path_.pop_back();

  auto handler = [this](bool greedy) {
    return [this, greedy](const httplib::Request& req, httplib::Response& res) {
      const auto request_id = next_request_++;
      try {
        auto body = json::parse(req.body);
        log_query(req.remote_addr, body.value("prompt", std::string()));
      } catch (const json::exception&) {
        // Malformed bodies go upstream untouched; the upstream reports the error.
      }
      httplib::Client cli(upstream_host_);
      cli.set_read_timeout(300, 0);
      httplib::Headers fwd;
      if (req.has_header("Authorization")) fwd.emplace("Authorization", req.get_header_value("Authorization"));
      auto up = cli.Post(upstream_path_ + req.path, fwd, req.body, "application/json");
      if (!up) {
        res.status = 502;
        res.set_content(json{{"error", "upstream: " + httplib::to_string(up.error())}}.dump(), "application/json");
        return;
      }
      res.status = up->status;
      if (up->status != 200 || !config_.enabled) {
        res.set_content(up->body, "application/json");
        return;
      }
      try {
        auto payload = json::parse(up->body);
        std::mt19937_64 rng(mix_seed(config_.seed, request_id));
        if (greedy) {
          rewrite_greedy_payload(payload, config_.tau_def, rng);
        } else {
          rewrite_distribution_payload(payload, config_.tau_def, rng);
        }
        res.set_header("x-defense", "rewrite-v1");
        res.set_content(payload.dump(), "application/json");
      } catch (const std::exception& e) {
        res.status = 502;
        res.set_content(json{{"error", std::string("upstream payload: ") + e.what()}}.dump(), "application/json");
      }
    };
  };
  thread_.server().Post("/v1/distribution", handler(false));
  thread_.server().Post("/v1/greedy", handler(true));
}

int DefenseProxy::start(const std::string& host, int port) {
  port_ = thread_.start(host, port);
  return port_;
}

void DefenseProxy::log_query(const std::string& client, const std::string& prompt) {
  using namespace std::chrono;
  const double ts = duration<double>(system_clock::now().time_since_epoch()).count();
  std::lock_guard lock(log_mu_);
  log_.push_back({client, prompt, ts});
  if (log_path_) {
    std::ofstream out(*log_path_, std::ios::app | std::ios::binary);
    out << to_json(log_.back()).dump() << '\n';
  }
}

std::vector<QueryLogEntry> DefenseProxy::query_log() const {
  std::lock_guard lock(log_mu_);
  return log_;
}

}  // namespace sftx
