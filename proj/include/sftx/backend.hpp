#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sftx/datamodel.hpp"

namespace sftx {

inline constexpr const char* kEos = "</s>";
inline constexpr const char* kBos = "<s>";

// Default toy prompt layout; the query prompt is everything before "{response}".
inline constexpr const char* kDefaultPairTemplate = "INST: {instruction}\nRESP: {response}";

struct TokenProb {
  std::string token;
  double prob = 0.0;

  bool operator==(const TokenProb&) const = default;
};

// Ranked top-K view of a next-token distribution. Entries are sorted by
// probability descending with ties broken by token text ascending.
struct TokenDistribution {
  std::vector<TokenProb> entries;
  double truncated_mass = 0.0;

  const TokenProb& top() const;
  double total_mass() const;
  bool valid(double tol = 1e-6) const;
  void sort_entries();

  // Builds a top_k view from an exhaustive (token, prob) list.
  static TokenDistribution from_full(std::vector<TokenProb> all, int top_k);
};

// Ordering used everywhere a ranked distribution is built.
bool ranks_before(const TokenProb& a, const TokenProb& b);

struct GenerationStep {
  std::string token;
  double prob = 0.0;
  TokenDistribution alternatives;
};

enum class StopReason { eos, max_tokens };

std::string to_string(StopReason r);
StopReason stop_reason_from_string(std::string_view s);

struct TrackedGeneration {
  std::string prompt;
  std::vector<GenerationStep> steps;
  StopReason stop_reason = StopReason::max_tokens;

  std::vector<std::string> tokens() const;
};

struct SamplingParams {
  double temperature = 0.7;
  double top_p = 1.0;
};

// Model access used by every attack and defense routine. Implementations must
// tolerate concurrent calls from multiple threads.
class Backend {
 public:
  virtual ~Backend() = default;

  virtual TokenDistribution next_token_distribution(std::string_view prefix, int top_k) const = 0;

  // Largest top_k the backend will honour.
  virtual int max_top_k() const = 0;

  // Repeated argmax until EOS or max_tokens. The default drives
  // next_token_distribution one step at a time.
  virtual TrackedGeneration generate_greedy(std::string_view prompt, int max_tokens,
                                            int record_top_k) const;

  virtual std::string complete_text(std::string_view prompt, int max_tokens) const;

  // Seeded temperature/top-p sampling over the backend's top-K view.
  virtual std::vector<std::string> sample_tokens(std::string_view prompt, int max_tokens,
                                                 const SamplingParams& params,
                                                 std::mt19937_64& rng) const;

  virtual std::string_view token_separator() const { return " "; }

  std::string detokenize(std::span<const std::string> tokens) const;
  // prefix followed by tokens, as the backend would see the concatenation.
  std::string extend(std::string_view prefix, std::span<const std::string> tokens) const;
};

// ---------------------------------------------------------------------------
// Toy n-gram model

class ToyModel {
 public:
  struct Context {
    std::map<std::string, double> next;
    double total = 0.0;
  };

  ToyModel(int order, double smoothing);

  int order() const { return order_; }
  double smoothing() const { return smoothing_; }
  double finetune_weight() const { return finetune_weight_; }
  const std::set<std::string>& vocab() const { return vocab_; }
  const std::map<std::string, Context>& contexts() const { return contexts_; }

  // Count of `token` after the (order-1)-token context.
  double count(std::span<const std::string> context, std::string_view token) const;
  double prob(std::span<const std::string> history, std::string_view token) const;
  TokenDistribution distribution(std::span<const std::string> history, int top_k) const;

  // Adds `weight` to every transition of BOS-padded `tokens` + EOS, starting at
  // position `first_counted` of tokens (earlier positions only serve as context
  // and do not enter the vocabulary).
  void add_sequence(std::span<const std::string> tokens, double weight, std::size_t first_counted = 0);
  void add_vocab(std::span<const std::string> tokens);
  void set_finetune_weight(double w) { finetune_weight_ = w; }

  // Negative log-likelihood of tokens[first_scored..] + EOS under teacher forcing.
  double sequence_nll(std::span<const std::string> tokens, std::size_t first_scored) const;

  nlohmann::json to_json() const;
  static ToyModel from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static ToyModel load(const std::filesystem::path& path);

  static std::string context_key(std::span<const std::string> history, int order);

 private:
  int order_;
  double smoothing_;
  double finetune_weight_ = 1.0;
  std::set<std::string> vocab_;
  std::map<std::string, Context> contexts_;
};

ToyModel toy_train(std::span<const std::string> corpus, int order = 3, double smoothing = 0.01);

// Adds weighted counts for the response side of each templated pair. Returns
// a new model; `base` is untouched.
ToyModel toy_finetune(const ToyModel& base, const SFTDataset& dataset, double weight,
                      std::string_view prompt_template = kDefaultPairTemplate);

std::string fill_pair_template(std::string_view tmpl, std::string_view instruction,
                               std::string_view response);
// Template text before "{response}" with the instruction filled in, right-trimmed.
std::string query_prompt(std::string_view tmpl, std::string_view instruction);

// NLL of the response tokens of one templated pair.
double toy_pair_nll(const ToyModel& model, const InstructionResponsePair& pair,
                    std::string_view prompt_template = kDefaultPairTemplate);

class ToyBackend final : public Backend {
 public:
  explicit ToyBackend(std::shared_ptr<const ToyModel> model, int context_window = 4096);

  TokenDistribution next_token_distribution(std::string_view prefix, int top_k) const override;
  int max_top_k() const override;
  const ToyModel& model() const { return *model_; }

 private:
  std::shared_ptr<const ToyModel> model_;
  int context_window_;
};

// ---------------------------------------------------------------------------
// Scripted backend for tests

class MockBackend final : public Backend {
 public:
  using Responder = std::function<TokenDistribution(std::string_view prefix, int top_k)>;

  std::map<std::string, TokenDistribution, std::less<>> distributions;
  Responder responder;
  std::optional<std::vector<GenerationStep>> greedy_script;
  std::map<std::string, std::string, std::less<>> completions;
  std::optional<std::string> default_completion;
  int top_k_cap = 32;

  TokenDistribution next_token_distribution(std::string_view prefix, int top_k) const override;
  int max_top_k() const override { return top_k_cap; }
  TrackedGeneration generate_greedy(std::string_view prompt, int max_tokens,
                                    int record_top_k) const override;
  std::string complete_text(std::string_view prompt, int max_tokens) const override;

  std::vector<std::string> prompts_seen() const;
  static MockBackend from_json(const nlohmann::json& j);

 private:
  struct Log {
    std::mutex mu;
    std::vector<std::string> seen;
  };
  void record(std::string_view prompt) const;
  std::unique_ptr<Log> log_ = std::make_unique<Log>();
};

// ---------------------------------------------------------------------------
// HTTP client for the toolkit wire protocol

enum class BackendKind { toy, http, mock };

struct BackendConfig {
  BackendKind kind = BackendKind::toy;
  std::string endpoint;          // http
  std::string auth_env;          // name of the variable holding a bearer token
  std::string model_path;        // toy: saved model; mock: script file
  int top_k = 5;
  int max_tokens = 512;
  double timeout_seconds = 30.0;
  int retries = 3;
  int context_window = 4096;
  std::string token_separator = " ";

  void validate() const;
};

BackendConfig backend_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const BackendConfig& c);

class HttpBackend final : public Backend {
 public:
  explicit HttpBackend(BackendConfig config);

  TokenDistribution next_token_distribution(std::string_view prefix, int top_k) const override;
  int max_top_k() const override { return config_.top_k; }
  TrackedGeneration generate_greedy(std::string_view prompt, int max_tokens,
                                    int record_top_k) const override;
  std::string_view token_separator() const override { return config_.token_separator; }

  std::uint64_t requests_sent() const { return requests_.load(); }

 private:
  nlohmann::json post(const std::string& path, const nlohmann::json& body) const;

  BackendConfig config_;
  std::string scheme_host_port_;
  std::string base_path_;
  mutable std::atomic<std::uint64_t> requests_{0};
};

std::unique_ptr<Backend> make_backend(const BackendConfig& config);

}  // namespace sftx
