#include "sftx/metrics.hpp"

#include <httplib.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iomanip>
#include <map>
#include <regex>
#include <sstream>

#include "sftx/text.hpp"

namespace sftx {

using nlohmann::json;

// ---------------------------------------------------------------------------
// BLEU

namespace {

std::map<std::vector<std::string_view>, int> ngram_counts(std::span<const std::string> toks, std::size_t n) {
  std::map<std::vector<std::string_view>, int> out;
  if (toks.size() < n) return out;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    std::vector<std::string_view> key(toks.begin() + static_cast<std::ptrdiff_t>(i),
                                      toks.begin() + static_cast<std::ptrdiff_t>(i + n));
    ++out[key];
  }
  return out;
}

}  // namespace

double bleu_tokens(std::span<const std::string> cand, std::span<const std::string> ref, const BleuOptions& opts) {
  if (cand.empty()) return 0.0;
  double log_sum = 0.0;
  int orders = 0;
  for (int n = 1; n <= opts.max_order; ++n) {
    const auto un = static_cast<std::size_t>(n);
    if (cand.size() < un) break;
    const double total = static_cast<double>(cand.size() - un + 1);
    auto c = ngram_counts(cand, un);
    auto r = ngram_counts(ref, un);
    int matches = 0;
    for (const auto& [gram, cnt] : c) {
      auto it = r.find(gram);
      if (it != r.end()) matches += std::min(cnt, it->second);
    }
    double p;
    if (matches == 0) {
      if (!opts.smoothing) return 0.0;
      p = opts.epsilon / total;
    } else {
      p = matches / total;
    }
    log_sum += std::log(p);
    ++orders;
  }
  const double c = static_cast<double>(cand.size());
  const double r = static_cast<double>(ref.size());
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return std::clamp(bp * std::exp(log_sum / orders), 0.0, 1.0);
}

double bleu(std::string_view candidate, std::string_view reference, const BleuOptions& opts) {
  auto c = split_ws(candidate);
  auto r = split_ws(reference);
  return bleu_tokens(c, r, opts);
}

// ---------------------------------------------------------------------------
// Continuous token matching

std::size_t longest_common_run(std::span<const std::string> a, std::span<const std::string> b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  std::size_t best = 0;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : 0;
      best = std::max(best, cur[j]);
    }
    std::swap(prev, cur);
  }
  return best;
}

WindowMatch token_window_match(std::string_view candidate, std::string_view reference, int window) {
  if (window < 1) throw Error("token window must be >= 1");
  auto c = split_ws(candidate);
  auto r = split_ws(reference);
  WindowMatch m;
  m.longest_run = longest_common_run(c, r);
  m.matched = m.longest_run >= static_cast<std::size_t>(window);
  return m;
}

// ---------------------------------------------------------------------------
// Embeddings

HashingEmbedder::HashingEmbedder(std::size_t dims, std::uint64_t seed) : dims_(dims), seed_(seed) {
  if (dims_ == 0) throw Error("embedding dimension must be positive");
}

std::vector<std::string> HashingEmbedder::features(std::string_view text) {
  auto words = split_ws(text);
  for (auto& w : words) {
    std::transform(w.begin(), w.end(), w.begin(), [](unsigned char ch) { return std::tolower(ch); });
  }
  std::vector<std::string> out;
  out.reserve(words.size() * 2);
  for (const auto& w : words) out.push_back("1:" + w);
  for (std::size_t i = 1; i < words.size(); ++i) out.push_back("2:" + words[i - 1] + " " + words[i]);
  return out;
}

std::pair<std::size_t, double> HashingEmbedder::bucket(std::string_view feature) const {
  // FNV-1a over the seed bytes then the feature, finished with a 64-bit mix.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (int i = 0; i < 8; ++i) {
    h ^= (seed_ >> (8 * i)) & 0xFF;
    h *= 0x100000001b3ULL;
  }
  for (unsigned char ch : feature) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  h = mix_seed(h, 0);
  return {static_cast<std::size_t>(h % dims_), (h >> 63) ? -1.0 : 1.0};
}

std::vector<double> HashingEmbedder::embed(std::string_view text) const {
  std::vector<double> v(dims_, 0.0);
  for (const auto& f : features(text)) {
    auto [idx, sign] = bucket(f);
    v[idx] += sign;
  }
  double norm = 0.0;
  for (double x : v) norm += x * x;
  if (norm > 0.0) {
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
  }
  return v;
}

RemoteEmbedder::RemoteEmbedder(std::string endpoint, double timeout_seconds)
    : endpoint_(std::move(endpoint)), timeout_seconds_(timeout_seconds) {}

std::vector<double> RemoteEmbedder::embed(std::string_view text) const {
  static const std::regex kUrl(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(endpoint_, m, kUrl)) throw Error("invalid embedder URL: " + endpoint_);
  httplib::Client cli(m[1].str());
  const auto secs = static_cast<time_t>(timeout_seconds_);
  cli.set_read_timeout(secs, 0);
  cli.set_connection_timeout(secs, 0);
  std::string path = m[2].matched ? m[2].str() : "";
  while (!path.empty() && path.back() == '/') path.pop_back();
  auto res = cli.Post(path + "/v1/embed", json{{"text", text}}.dump(), "application/json");
  if (!res) throw TransportError("embedder: " + httplib::to_string(res.error()));
  if (res->status != 200) throw TransportError("embedder: HTTP " + std::to_string(res->status));
  try {
    return json::parse(res->body).at("embedding").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw TransportError(std::string("embedder: bad payload: ") + e.what());
  }
}

const Embedder& default_embedder() {
  static const HashingEmbedder kDefault;
  return kDefault;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error("embedding dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

double embed_similarity(std::string_view a, std::string_view b, const Embedder& embedder) {
  auto ea = embedder.embed(a);
  auto eb = embedder.embed(b);
  return cosine(ea, eb);
}

// ---------------------------------------------------------------------------
// Scoring

Scores score_candidate(std::string_view candidate, std::string_view truth, const ScoreOptions& opts) {
  const Embedder& emb = opts.embedder ? *opts.embedder : default_embedder();
  Scores s;
  s.bleu = bleu(candidate, truth, opts.bleu);
  auto m = token_window_match(candidate, truth, opts.window);
  s.token = m.matched ? 1.0 : 0.0;
  s.longest_run = m.longest_run;
  s.embed = embed_similarity(candidate, truth, emb);
  return s;
}

Scores mean_scores(std::span<const std::string> candidates, std::string_view truth, const ScoreOptions& opts) {
  Scores out;
  if (candidates.empty()) return out;
  for (const auto& c : candidates) {
    auto s = score_candidate(c, truth, opts);
    out.bleu += s.bleu;
    out.token += s.token;
    out.embed += s.embed;
    out.longest_run = std::max(out.longest_run, s.longest_run);
  }
  const double n = static_cast<double>(candidates.size());
  out.bleu /= n;
  out.token /= n;
  out.embed /= n;
  return out;
}

Scores best_scores(std::span<const std::string> candidates, std::string_view truth, const ScoreOptions& opts) {
  Scores out;
  bool first = true;
  for (const auto& c : candidates) {
    auto s = score_candidate(c, truth, opts);
    if (first) {
      out = s;
      first = false;
      continue;
    }
    out.bleu = std::max(out.bleu, s.bleu);
    out.token = std::max(out.token, s.token);
    out.embed = std::max(out.embed, s.embed);
    out.longest_run = std::max(out.longest_run, s.longest_run);
  }
  return out;
}

Scores pair_score(const ExtractionResult& result, std::string_view truth, const ScoreOptions& opts) {
  auto cands = result.candidates();
  return mean_scores(cands, truth, opts);
}

void ScoreReport::recompute_means() {
  means = {};
  if (per_example.empty()) return;
  for (const auto& r : per_example) {
    means.bleu += r.scores.bleu;
    means.token += r.scores.token;
    means.embed += r.scores.embed;
    means.longest_run += r.scores.longest_run;
  }
  const double n = static_cast<double>(per_example.size());
  means.bleu /= n;
  means.token /= n;
  means.embed /= n;
  means.longest_run = static_cast<std::size_t>(std::llround(static_cast<double>(means.longest_run) / n));
}

json ScoreReport::to_json() const {
  json rows = json::array();
  for (const auto& r : per_example) {
    rows.push_back({{"id", r.id},
                    {"bleu", r.scores.bleu},
                    {"token_match", r.scores.token},
                    {"longest_run", r.scores.longest_run},
                    {"embed", r.scores.embed}});
  }
  return {{"per_example", std::move(rows)},
          {"aggregates", {{"bleu", means.bleu}, {"token_match", means.token}, {"embed", means.embed}}},
          {"count", per_example.size()}};
}

std::string ScoreReport::to_csv() const {
  std::ostringstream os;
  os << "id,bleu,token_match,longest_run,embed\n";
  os << std::setprecision(10);
  for (const auto& r : per_example) {
    std::string id = r.id;
    if (id.find_first_of(",\"\n") != std::string::npos) {
      id = "\"" + substitute(id, "\"", "\"\"") + "\"";
    }
    os << id << ',' << r.scores.bleu << ',' << r.scores.token << ',' << r.scores.longest_run << ','
       << r.scores.embed << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------

double pass_at_k(const std::vector<std::vector<bool>>& passes, int k) {
  if (k < 1) throw Error("pass@k requires k >= 1");
  if (passes.empty()) return 0.0;
  std::size_t solved = 0;
  for (std::size_t p = 0; p < passes.size(); ++p) {
    const auto& attempts = passes[p];
    if (attempts.size() < static_cast<std::size_t>(k)) {
      throw Error("problem " + std::to_string(p) + " has " + std::to_string(attempts.size()) +
                  " attempts, fewer than k=" + std::to_string(k));
    }
    if (std::any_of(attempts.begin(), attempts.begin() + k, [](bool b) { return b; })) ++solved;
  }
  return static_cast<double>(solved) / static_cast<double>(passes.size());
}

double window_success_theory(double ntc, int k, double length) {
  if (!(ntc >= 0.0 && ntc <= 1.0)) throw Error("ntc must be in [0, 1]");
  if (k < 1) throw Error("window length k must be >= 1");
  if (static_cast<double>(k) > length) throw Error("window length k exceeds sequence length L");
  if (ntc == 0.0) return 0.0;
  if (ntc == 1.0) return 1.0;
  const double windows = length - k + 1;
  const double log_hit = k * std::log(ntc);           // log ntc^k
  const double log_miss = std::log1p(-std::exp(log_hit));  // log(1 - ntc^k)
  return std::clamp(-std::expm1(windows * log_miss), 0.0, 1.0);
}

}  // namespace sftx
