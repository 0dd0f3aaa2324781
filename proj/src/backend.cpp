#include "sftx/backend.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "sftx/text.hpp"

namespace sftx {

using nlohmann::json;

bool ranks_before(const TokenProb& a, const TokenProb& b) {
  if (a.prob != b.prob) return a.prob > b.prob;
  return a.token < b.token;
}

const TokenProb& TokenDistribution::top() const {
  if (entries.empty()) throw Error("empty token distribution");
  return entries.front();
}

double TokenDistribution::total_mass() const {
  double s = truncated_mass;
  for (const auto& e : entries) s += e.prob;
  return s;
}

bool TokenDistribution::valid(double tol) const {
  if (truncated_mass < 0.0 || truncated_mass >= 1.0) return false;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (!(entries[i].prob > 0.0)) return false;
    if (i && ranks_before(entries[i], entries[i - 1])) return false;
  }
  return std::abs(total_mass() - 1.0) <= tol;
}

void TokenDistribution::sort_entries() { std::sort(entries.begin(), entries.end(), ranks_before); }

TokenDistribution TokenDistribution::from_full(std::vector<TokenProb> all, int top_k) {
  std::sort(all.begin(), all.end(), ranks_before);
  TokenDistribution d;
  auto k = std::min<std::size_t>(static_cast<std::size_t>(std::max(top_k, 0)), all.size());
  d.entries.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k));
  double rest = 0.0;
  for (std::size_t i = k; i < all.size(); ++i) rest += all[i].prob;
  d.truncated_mass = rest;
  return d;
}

std::string to_string(StopReason r) { return r == StopReason::eos ? "eos" : "max_tokens"; }

StopReason stop_reason_from_string(std::string_view s) {
  if (s == "eos") return StopReason::eos;
  if (s == "max_tokens") return StopReason::max_tokens;
  throw FormatError("unknown stop_reason: " + std::string(s));
}

std::vector<std::string> TrackedGeneration::tokens() const {
  std::vector<std::string> out;
  out.reserve(steps.size());
  for (const auto& s : steps) out.push_back(s.token);
  return out;
}

// ---------------------------------------------------------------------------

std::string Backend::detokenize(std::span<const std::string> tokens) const {
  return join(tokens, token_separator());
}

std::string Backend::extend(std::string_view prefix, std::span<const std::string> tokens) const {
  std::string out(prefix);
  if (tokens.empty()) return out;
  if (!out.empty()) out += token_separator();
  out += detokenize(tokens);
  return out;
}

TrackedGeneration Backend::generate_greedy(std::string_view prompt, int max_tokens,
                                           int record_top_k) const {
  TrackedGeneration gen;
  gen.prompt = std::string(prompt);
  std::vector<std::string> tokens;
  for (int i = 0; i < max_tokens; ++i) {
    auto dist = next_token_distribution(extend(prompt, tokens), std::max(record_top_k, 1));
    const auto& top = dist.top();
    if (top.token == kEos) {
      gen.stop_reason = StopReason::eos;
      return gen;
    }
    tokens.push_back(top.token);
    gen.steps.push_back({top.token, top.prob, std::move(dist)});
  }
  gen.stop_reason = StopReason::max_tokens;
  return gen;
}

std::string Backend::complete_text(std::string_view prompt, int max_tokens) const {
  auto gen = generate_greedy(prompt, max_tokens, 1);
  auto toks = gen.tokens();
  return detokenize(toks);
}

std::vector<std::string> Backend::sample_tokens(std::string_view prompt, int max_tokens,
                                                const SamplingParams& params,
                                                std::mt19937_64& rng) const {
  if (params.temperature <= 0.0) return generate_greedy(prompt, max_tokens, 1).tokens();
  std::vector<std::string> tokens;
  for (int i = 0; i < max_tokens; ++i) {
    auto dist = next_token_distribution(extend(prompt, tokens), max_top_k());
    const auto& entries = dist.entries;
    if (entries.empty()) break;
    // Tempered weights relative to the top entry keep exp() in range.
    const double top_log = std::log(entries.front().prob);
    std::vector<double> w(entries.size());
    double z = 0.0;
    for (std::size_t j = 0; j < entries.size(); ++j) {
      w[j] = std::exp((std::log(entries[j].prob) - top_log) / params.temperature);
      z += w[j];
    }
    std::size_t keep = entries.size();
    if (params.top_p < 1.0) {
      double cum = 0.0;
      for (std::size_t j = 0; j < entries.size(); ++j) {
        cum += w[j] / z;
        if (cum >= params.top_p) {
          keep = j + 1;
          break;
        }
      }
    }
    double kept_mass = 0.0;
    for (std::size_t j = 0; j < keep; ++j) kept_mass += w[j];
    double u = uniform01(rng) * kept_mass;
    std::size_t pick = keep - 1;
    for (std::size_t j = 0; j < keep; ++j) {
      if (u < w[j]) {
        pick = j;
        break;
      }
      u -= w[j];
    }
    if (entries[pick].token == kEos) break;
    tokens.push_back(entries[pick].token);
  }
  return tokens;
}

// ---------------------------------------------------------------------------
// MockBackend

void MockBackend::record(std::string_view prompt) const {
  std::lock_guard lock(log_->mu);
  log_->seen.emplace_back(prompt);
}

std::vector<std::string> MockBackend::prompts_seen() const {
  std::lock_guard lock(log_->mu);
  return log_->seen;
}

TokenDistribution MockBackend::next_token_distribution(std::string_view prefix, int top_k) const {
  record(prefix);
  TokenDistribution d;
  if (auto it = distributions.find(prefix); it != distributions.end()) {
    d = it->second;
  } else if (responder) {
    d = responder(prefix, top_k);
  } else {
    throw Error("mock backend has no distribution for prefix: " + std::string(prefix));
  }
  if (top_k >= 0 && d.entries.size() > static_cast<std::size_t>(top_k)) {
    for (std::size_t i = static_cast<std::size_t>(top_k); i < d.entries.size(); ++i) {
      d.truncated_mass += d.entries[i].prob;
    }
    d.entries.resize(static_cast<std::size_t>(top_k));
  }
  return d;
}

TrackedGeneration MockBackend::generate_greedy(std::string_view prompt, int max_tokens,
                                               int record_top_k) const {
  if (!greedy_script) return Backend::generate_greedy(prompt, max_tokens, record_top_k);
  record(prompt);
  TrackedGeneration gen;
  gen.prompt = std::string(prompt);
  const auto& script = *greedy_script;
  auto n = std::min<std::size_t>(script.size(), static_cast<std::size_t>(std::max(max_tokens, 0)));
  gen.steps.assign(script.begin(), script.begin() + static_cast<std::ptrdiff_t>(n));
  gen.stop_reason = n < script.size() || static_cast<int>(n) == max_tokens ? StopReason::max_tokens
                                                                           : StopReason::eos;
  return gen;
}

std::string MockBackend::complete_text(std::string_view prompt, int max_tokens) const {
  if (auto it = completions.find(prompt); it != completions.end()) {
    record(prompt);
    return it->second;
  }
  if (default_completion) {
    record(prompt);
    return *default_completion;
  }
  return Backend::complete_text(prompt, max_tokens);
}

namespace {

TokenDistribution distribution_from_probs(const json& j) {
  TokenDistribution d;
  for (const auto& e : j.at("entries")) {
    d.entries.push_back({e.at("token").get<std::string>(), e.at("prob").get<double>()});
  }
  d.truncated_mass = j.value("truncated_mass", 0.0);
  d.sort_entries();
  return d;
}

}  // namespace

MockBackend MockBackend::from_json(const json& j) {
  MockBackend m;
  if (auto it = j.find("distributions"); it != j.end()) {
    for (const auto& [prefix, dist] : it->items()) m.distributions[prefix] = distribution_from_probs(dist);
  }
  if (auto it = j.find("completions"); it != j.end()) {
    for (const auto& [prompt, text] : it->items()) m.completions[prompt] = text.get<std::string>();
  }
  if (auto it = j.find("default_completion"); it != j.end()) {
    m.default_completion = it->get<std::string>();
  }
  if (auto it = j.find("greedy_script"); it != j.end()) {
    std::vector<GenerationStep> steps;
    for (const auto& s : *it) {
      GenerationStep step;
      step.alternatives = distribution_from_probs(s.at("alternatives"));
      step.token = step.alternatives.top().token;
      step.prob = step.alternatives.top().prob;
      steps.push_back(std::move(step));
    }
    m.greedy_script = std::move(steps);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Configuration

void BackendConfig::validate() const {
  if (top_k < 2) throw Error("backend top_k must be >= 2, got " + std::to_string(top_k));
  if (max_tokens < 0) throw Error("backend max_tokens must be >= 0");
  if (retries < 1) throw Error("backend retries must be >= 1");
  if (kind == BackendKind::http && endpoint.empty()) throw Error("http backend requires an endpoint");
  if ((kind == BackendKind::toy || kind == BackendKind::mock) && model_path.empty()) {
    throw Error("toy/mock backend requires model_path");
  }
}

BackendConfig backend_config_from_json(const json& j) {
  BackendConfig c;
  auto kind = j.value("kind", std::string("toy"));
  if (kind == "toy") {
    c.kind = BackendKind::toy;
  } else if (kind == "http") {
    c.kind = BackendKind::http;
  } else if (kind == "mock") {
    c.kind = BackendKind::mock;
  } else {
    throw FormatError("unknown backend kind: " + kind);
  }
  c.endpoint = j.value("endpoint", c.endpoint);
  c.auth_env = j.value("auth_env", c.auth_env);
  c.model_path = j.value("model_path", c.model_path);
  c.top_k = j.value("top_k", c.top_k);
  c.max_tokens = j.value("max_tokens", c.max_tokens);
  c.timeout_seconds = j.value("timeout_seconds", c.timeout_seconds);
  c.retries = j.value("retries", c.retries);
  c.context_window = j.value("context_window", c.context_window);
  c.token_separator = j.value("token_separator", c.token_separator);
  return c;
}

json to_json(const BackendConfig& c) {
  static constexpr const char* kNames[] = {"toy", "http", "mock"};
  return {{"kind", kNames[static_cast<int>(c.kind)]},
          {"endpoint", c.endpoint},
          {"auth_env", c.auth_env},
          {"model_path", c.model_path},
          {"top_k", c.top_k},
          {"max_tokens", c.max_tokens},
          {"timeout_seconds", c.timeout_seconds},
          {"retries", c.retries},
          {"context_window", c.context_window},
          {"token_separator", c.token_separator}};
}

std::unique_ptr<Backend> make_backend(const BackendConfig& config) {
  config.validate();
  switch (config.kind) {
    case BackendKind::toy:
      return std::make_unique<ToyBackend>(
          std::make_shared<const ToyModel>(ToyModel::load(config.model_path)), config.context_window);
    case BackendKind::http:
      return std::make_unique<HttpBackend>(config);
    case BackendKind::mock:
      return std::make_unique<MockBackend>(MockBackend::from_json(json::parse(read_text(config.model_path))));
  }
  throw Error("unreachable backend kind");
}

}  // namespace sftx
