#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

#include "sftx/backend.hpp"
#include "sftx/text.hpp"

namespace sftx {

using nlohmann::json;

namespace {
constexpr char kKeySep = '\x1f';
}

ToyModel::ToyModel(int order, double smoothing) : order_(order), smoothing_(smoothing) {
  if (order < 2) throw Error("toy model order must be >= 2, got " + std::to_string(order));
  if (!(smoothing > 0.0)) throw Error("toy model smoothing must be > 0");
  vocab_.insert(kEos);
}

std::string ToyModel::context_key(std::span<const std::string> history, int order) {
  const auto need = static_cast<std::size_t>(order - 1);
  std::string key;
  for (std::size_t i = 0; i < need; ++i) {
    // Position i of the (order-1)-token window, BOS-padded on the left.
    const std::size_t missing = need > history.size() ? need - history.size() : 0;
    if (i) key += kKeySep;
    if (i < missing) {
      key += kBos;
    } else {
      key += history[history.size() - need + i];
    }
  }
  return key;
}

double ToyModel::count(std::span<const std::string> context, std::string_view token) const {
  auto it = contexts_.find(context_key(context, order_));
  if (it == contexts_.end()) return 0.0;
  auto jt = it->second.next.find(std::string(token));
  return jt == it->second.next.end() ? 0.0 : jt->second;
}

double ToyModel::prob(std::span<const std::string> history, std::string_view token) const {
  if (!vocab_.contains(std::string(token))) return 0.0;
  const double k = smoothing_;
  const double v = static_cast<double>(vocab_.size());
  auto it = contexts_.find(context_key(history, order_));
  if (it == contexts_.end()) return 1.0 / v;
  const auto& ctx = it->second;
  auto jt = ctx.next.find(std::string(token));
  const double c = jt == ctx.next.end() ? 0.0 : jt->second;
  return (c + k) / (ctx.total + k * v);
}

TokenDistribution ToyModel::distribution(std::span<const std::string> history, int top_k) const {
  const double k = smoothing_;
  const double v = static_cast<double>(vocab_.size());
  auto it = contexts_.find(context_key(history, order_));
  const Context* ctx = it == contexts_.end() ? nullptr : &it->second;
  const double denom = (ctx ? ctx->total : 0.0) + k * v;
  const double unseen = k / denom;

  std::vector<TokenProb> seen;
  if (ctx) {
    seen.reserve(ctx->next.size());
    for (const auto& [tok, c] : ctx->next) seen.push_back({tok, (c + k) / denom});
    std::sort(seen.begin(), seen.end(), ranks_before);
  }
  const auto want = static_cast<std::size_t>(std::max(top_k, 0));
  TokenDistribution d;
  double rest = 0.0;
  for (const auto& e : seen) {
    if (d.entries.size() < want) {
      d.entries.push_back(e);
    } else {
      rest += e.prob;
    }
  }
  // Zero-count tokens all share `unseen` and rank by token text, i.e. vocab order.
  std::size_t unseen_rest = 0;
  for (const auto& tok : vocab_) {
    if (ctx && ctx->next.contains(tok)) continue;
    if (d.entries.size() < want) {
      d.entries.push_back({tok, unseen});
    } else {
      ++unseen_rest;
    }
  }
  d.truncated_mass = rest + static_cast<double>(unseen_rest) * unseen;
  return d;
}

void ToyModel::add_vocab(std::span<const std::string> tokens) {
  for (const auto& t : tokens) vocab_.insert(t);
}

void ToyModel::add_sequence(std::span<const std::string> tokens, double weight,
                            std::size_t first_counted) {
  if (first_counted < tokens.size()) add_vocab(tokens.subspan(first_counted));
  std::vector<std::string> history;
  history.reserve(tokens.size());
  for (std::size_t p = 0; p <= tokens.size(); ++p) {
    const std::string& next = p < tokens.size() ? tokens[p] : std::string(kEos);
    if (p >= first_counted) {
      auto& ctx = contexts_[context_key(history, order_)];
      ctx.next[next] += weight;
      ctx.total += weight;
    }
    if (p < tokens.size()) history.push_back(tokens[p]);
  }
}

double ToyModel::sequence_nll(std::span<const std::string> tokens, std::size_t first_scored) const {
  double nll = 0.0;
  for (std::size_t p = first_scored; p <= tokens.size(); ++p) {
    const std::string next = p < tokens.size() ? tokens[p] : std::string(kEos);
    const double pr = prob(tokens.subspan(0, p), next);
    if (pr <= 0.0) return std::numeric_limits<double>::infinity();
    nll -= std::log(pr);
  }
  return nll;
}

json ToyModel::to_json() const {
  json ctxs = json::object();
  for (const auto& [key, ctx] : contexts_) {
    json next = json::object();
    for (const auto& [tok, c] : ctx.next) next[tok] = c;
    ctxs[key] = std::move(next);
  }
  return {{"format", "sftx-toy-ngram"},
          {"order", order_},
          {"smoothing", smoothing_},
          {"finetune_weight", finetune_weight_},
          {"vocab", std::vector<std::string>(vocab_.begin(), vocab_.end())},
          {"contexts", std::move(ctxs)}};
}

ToyModel ToyModel::from_json(const json& j) {
  ToyModel m(j.at("order").get<int>(), j.at("smoothing").get<double>());
  m.finetune_weight_ = j.value("finetune_weight", 1.0);
  for (const auto& t : j.at("vocab")) m.vocab_.insert(t.get<std::string>());
  for (const auto& [key, next] : j.at("contexts").items()) {
    auto& ctx = m.contexts_[key];
    for (const auto& [tok, c] : next.items()) {
      ctx.next[tok] = c.get<double>();
      ctx.total += c.get<double>();
      m.vocab_.insert(tok);
    }
  }
  return m;
}

void ToyModel::save(const std::filesystem::path& path) const { write_text(to_json().dump() + "\n", path); }

ToyModel ToyModel::load(const std::filesystem::path& path) {
  try {
    return from_json(json::parse(read_text(path)));
  } catch (const json::exception& e) {
    throw FormatError("malformed toy model " + path.string() + ": " + e.what());
  }
}

ToyModel toy_train(std::span<const std::string> corpus, int order, double smoothing) {
  ToyModel m(order, smoothing);
  bool any = false;
  for (const auto& doc : corpus) {
    auto toks = split_ws(doc);
    if (toks.empty()) continue;
    m.add_sequence(toks, 1.0);
    any = true;
  }
  if (!any) throw Error("toy_train: empty corpus");
  return m;
}

std::string fill_pair_template(std::string_view tmpl, std::string_view instruction,
                               std::string_view response) {
  return substitute(substitute(std::string(tmpl), "{instruction}", instruction), "{response}", response);
}

std::string query_prompt(std::string_view tmpl, std::string_view instruction) {
  auto pos = tmpl.find("{response}");
  auto head = tmpl.substr(0, pos);
  auto filled = substitute(std::string(head), "{instruction}", instruction);
  while (!filled.empty() && std::isspace(static_cast<unsigned char>(filled.back()))) filled.pop_back();
  return filled;
}

namespace {

// Prompt tokens, response tokens, template tail tokens; returns (tokens, response start).
std::pair<std::vector<std::string>, std::size_t> templated_tokens(std::string_view tmpl,
                                                                  const InstructionResponsePair& p) {
  auto toks = split_ws(query_prompt(tmpl, p.instruction));
  const auto start = toks.size();
  for (auto& t : split_ws(p.response)) toks.push_back(std::move(t));
  if (auto pos = tmpl.find("{response}"); pos != std::string_view::npos) {
    for (auto& t : split_ws(tmpl.substr(pos + 10))) toks.push_back(std::move(t));
  }
  return {std::move(toks), start};
}

}  // namespace

ToyModel toy_finetune(const ToyModel& base, const SFTDataset& dataset, double weight,
                      std::string_view prompt_template) {
  if (!(weight >= 1.0)) throw Error("toy_finetune: weight must be >= 1");
  dataset.validate();
  ToyModel m = base;
  for (const auto& pair : dataset.entries) {
    auto [toks, start] = templated_tokens(prompt_template, pair);
    m.add_sequence(toks, weight, start);
  }
  m.set_finetune_weight(weight);
  return m;
}

double toy_pair_nll(const ToyModel& model, const InstructionResponsePair& pair,
                    std::string_view prompt_template) {
  auto [toks, start] = templated_tokens(prompt_template, pair);
  return model.sequence_nll(toks, start);
}

// ---------------------------------------------------------------------------

ToyBackend::ToyBackend(std::shared_ptr<const ToyModel> model, int context_window)
    : model_(std::move(model)), context_window_(context_window) {}

TokenDistribution ToyBackend::next_token_distribution(std::string_view prefix, int top_k) const {
  auto toks = split_ws(prefix);
  if (toks.size() > static_cast<std::size_t>(context_window_)) {
    throw Error("prompt of " + std::to_string(toks.size()) + " tokens exceeds context window of " +
                std::to_string(context_window_) + " tokens");
  }
  return model_->distribution(toks, top_k);
}

int ToyBackend::max_top_k() const { return static_cast<int>(model_->vocab().size()); }

}  // namespace sftx
