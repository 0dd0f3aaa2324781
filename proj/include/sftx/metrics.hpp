#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sftx/extraction_types.hpp"

namespace sftx {

struct BleuOptions {
  int max_order = 4;
  // Replace zero n-gram matches by epsilon / total instead of zeroing the score.
  bool smoothing = false;
  double epsilon = 0.1;
};

// Sentence BLEU over whitespace tokens with brevity penalty. Orders for which
// the candidate has no n-grams at all are left out of the geometric mean.
double bleu(std::string_view candidate, std::string_view reference, const BleuOptions& opts = {});
double bleu_tokens(std::span<const std::string> candidate, std::span<const std::string> reference,
                   const BleuOptions& opts = {});

// Longest contiguous token run shared by a and b.
std::size_t longest_common_run(std::span<const std::string> a, std::span<const std::string> b);

struct WindowMatch {
  bool matched = false;
  std::size_t longest_run = 0;
};

inline constexpr int kDefaultTokenWindow = 25;

WindowMatch token_window_match(std::string_view candidate, std::string_view reference,
                               int window = kDefaultTokenWindow);

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::vector<double> embed(std::string_view text) const = 0;
};

// Signed feature hashing of lowercased word unigrams and bigrams, L2-normalized.
class HashingEmbedder final : public Embedder {
 public:
  explicit HashingEmbedder(std::size_t dims = 4096, std::uint64_t seed = 0x5f7e3d);
  std::vector<double> embed(std::string_view text) const override;

  // Bucket index and sign of one feature string.
  std::pair<std::size_t, double> bucket(std::string_view feature) const;
  static std::vector<std::string> features(std::string_view text);

 private:
  std::size_t dims_;
  std::uint64_t seed_;
};

// POST {endpoint}/v1/embed {"text"} -> {"embedding": [...]}.
class RemoteEmbedder final : public Embedder {
 public:
  explicit RemoteEmbedder(std::string endpoint, double timeout_seconds = 30.0);
  std::vector<double> embed(std::string_view text) const override;

 private:
  std::string endpoint_;
  double timeout_seconds_;
};

const Embedder& default_embedder();

// Zero vectors have similarity 0 with everything.
double cosine(std::span<const double> a, std::span<const double> b);
double embed_similarity(std::string_view a, std::string_view b, const Embedder& embedder = default_embedder());

struct Scores {
  double bleu = 0.0;
  double token = 0.0;  // mean of {0,1} window-match indicators
  std::size_t longest_run = 0;
  double embed = 0.0;
};

struct ScoreOptions {
  BleuOptions bleu;
  int window = kDefaultTokenWindow;
  const Embedder* embedder = nullptr;  // default_embedder() when null
};

Scores score_candidate(std::string_view candidate, std::string_view truth, const ScoreOptions& opts = {});

// Arithmetic mean of per-candidate scores; longest_run is the maximum.
Scores mean_scores(std::span<const std::string> candidates, std::string_view truth, const ScoreOptions& opts = {});
// Per-metric maximum over candidates.
Scores best_scores(std::span<const std::string> candidates, std::string_view truth, const ScoreOptions& opts = {});

// Mean over {closest, outlier}, or the single candidate when deduplicated.
Scores pair_score(const ExtractionResult& result, std::string_view truth, const ScoreOptions& opts = {});

struct ScoreRow {
  std::string id;
  Scores scores;
};

struct ScoreReport {
  std::vector<ScoreRow> per_example;
  Scores means;

  void recompute_means();
  nlohmann::json to_json() const;
  std::string to_csv() const;
};

// Fraction of problems with at least one pass among their first k attempts.
double pass_at_k(const std::vector<std::vector<bool>>& passes, int k);

// 1 - (1 - ntc^k)^(L - k + 1), evaluated in log space.
double window_success_theory(double ntc, int k, double length);

}  // namespace sftx
