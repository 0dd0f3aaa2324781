#include "sftx/extraction.hpp"

#include <future>
#include <iostream>

#include "sftx/metrics.hpp"
#include "sftx/text.hpp"

namespace sftx {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Serialization of the shared result types

std::vector<std::string> ExtractionResult::candidates() const {
  if (deduplicated) return {closest.text};
  return {closest.text, outlier.text};
}

json to_json(const BranchPoint& p) {
  return {{"step_index", p.step_index},
          {"greedy_token", p.greedy_token},
          {"greedy_prob", p.greedy_prob},
          {"second_token", p.second_token},
          {"second_prob", p.second_prob}};
}

BranchPoint branch_point_from_json(const json& j) {
  return {j.at("step_index").get<std::size_t>(), j.at("greedy_token").get<std::string>(),
          j.at("greedy_prob").get<double>(), j.at("second_token").get<std::string>(),
          j.at("second_prob").get<double>()};
}

json to_json(const Branch& b) {
  json j = {{"source_model", b.source_model == SourceModel::sft ? "sft" : "base"},
            {"kind", b.kind == BranchKind::greedy ? "greedy" : "forced"},
            {"tokens", b.tokens},
            {"text", b.text}};
  j["origin"] = b.origin ? to_json(*b.origin) : json(nullptr);
  return j;
}

Branch branch_from_json(const json& j) {
  Branch b;
  b.source_model = j.at("source_model").get<std::string>() == "base" ? SourceModel::base : SourceModel::sft;
  b.kind = j.at("kind").get<std::string>() == "forced" ? BranchKind::forced : BranchKind::greedy;
  b.tokens = j.value("tokens", std::vector<std::string>{});
  b.text = j.at("text").get<std::string>();
  if (auto it = j.find("origin"); it != j.end() && !it->is_null()) b.origin = branch_point_from_json(*it);
  return b;
}

json to_json(const ExtractionResult& r) {
  return {{"query_id", r.query_id},
          {"query", r.query},
          {"method", "dde"},
          {"closest", to_json(r.closest)},
          {"outlier", to_json(r.outlier)},
          {"deduplicated", r.deduplicated},
          {"branch_counts", {r.sft_branches, r.base_branches}}};
}

ExtractionResult extraction_result_from_json(const json& j) {
  ExtractionResult r;
  r.query_id = j.value("query_id", "");
  r.query = j.value("query", "");
  r.closest = branch_from_json(j.at("closest"));
  r.outlier = branch_from_json(j.at("outlier"));
  r.deduplicated = j.at("deduplicated").get<bool>();
  if (auto it = j.find("branch_counts"); it != j.end()) {
    r.sft_branches = it->at(0).get<std::size_t>();
    r.base_branches = it->at(1).get<std::size_t>();
  }
  return r;
}

// ---------------------------------------------------------------------------

std::string to_string(DistanceMetric m) {
  return m == DistanceMetric::bleu_complement ? "bleu_complement" : "embed_complement";
}

DistanceMetric distance_from_string(std::string_view s) {
  if (s == "bleu_complement") return DistanceMetric::bleu_complement;
  if (s == "embed_complement") return DistanceMetric::embed_complement;
  throw FormatError("unknown distance metric: " + std::string(s));
}

void DdeConfig::validate() const {
  if (!(tau > 0.0 && tau <= 1.0)) throw Error("tau must be in (0, 1]");
  if (mbr < 1) throw Error("mbr must be >= 1");
  if (max_tokens < 0) throw Error("max_tokens must be >= 0");
  if (top_k < 2) throw Error("DDE needs top_k >= 2 to see the second most probable token");
}

json to_json(const DdeConfig& c) {
  return {{"tau", c.tau},
          {"mbr", c.mbr},
          {"max_tokens", c.max_tokens},
          {"top_k", c.top_k},
          {"distance", to_string(c.distance)}};
}

DdeConfig dde_config_from_json(const json& j) {
  DdeConfig c;
  c.tau = j.value("tau", c.tau);
  c.mbr = j.value("mbr", c.mbr);
  c.max_tokens = j.value("max_tokens", c.max_tokens);
  c.top_k = j.value("top_k", c.top_k);
  if (j.contains("distance")) c.distance = distance_from_string(j["distance"].get<std::string>());
  return c;
}

DistanceFn make_distance(DistanceMetric metric) {
  if (metric == DistanceMetric::embed_complement) {
    return [](const std::string& a, const std::string& b) { return 1.0 - embed_similarity(a, b); };
  }
  return [](const std::string& a, const std::string& b) {
    return 1.0 - 0.5 * (bleu(a, b) + bleu(b, a));
  };
}

// ---------------------------------------------------------------------------
// Vanilla

VanillaResult vanilla_extract(const Backend& ft, std::string_view query, int budget,
                              const SamplingParams& sampling, std::uint64_t seed, int max_tokens) {
  if (budget < 1) throw Error("vanilla budget must be >= 1");
  VanillaResult out;
  for (int i = 0; i < budget; ++i) {
    try {
      if (i == 0) {
        out.candidates.push_back(ft.complete_text(query, max_tokens));
      } else {
        std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
        auto toks = ft.sample_tokens(query, max_tokens, sampling, rng);
        out.candidates.push_back(ft.detokenize(toks));
      }
    } catch (const Error& e) {
      ++out.failures;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// DDE steps

std::vector<BranchPoint> identify_branch_points(const TrackedGeneration& gen, double tau, int mbr) {
  std::vector<BranchPoint> points;
  for (std::size_t i = 0; i < gen.steps.size(); ++i) {
    if (static_cast<int>(points.size()) >= mbr) break;
    const auto& step = gen.steps[i];
    if (!(step.prob < tau)) continue;
    const auto& alts = step.alternatives.entries;
    if (alts.size() < 2) {
      std::cerr << "warning: step " << i << " is below threshold but records no second token; skipped\n";
      continue;
    }
    points.push_back({i, step.token, step.prob, alts[1].token, alts[1].prob});
  }
  return points;
}

namespace {

Branch continue_branch(const Backend& backend, SourceModel source, std::string_view query,
                       std::vector<std::string> prefix, std::optional<BranchPoint> origin, int max_tokens) {
  Branch b;
  b.source_model = source;
  b.kind = origin ? BranchKind::forced : BranchKind::greedy;
  b.origin = std::move(origin);
  // Forcing EOS ends the branch right at the prefix.
  const bool ends = !prefix.empty() && prefix.back() == kEos;
  if (ends) prefix.pop_back();
  const int remaining = ends ? 0 : std::max(0, max_tokens - static_cast<int>(prefix.size()));
  b.tokens = std::move(prefix);
  if (remaining > 0) {
    auto gen = backend.generate_greedy(backend.extend(query, b.tokens), remaining, 1);
    for (auto& s : gen.steps) b.tokens.push_back(std::move(s.token));
  }
  b.text = backend.detokenize(b.tokens);
  return b;
}

}  // namespace

BranchSets generate_branches(const Backend& ft, const Backend& base, std::string_view query,
                             const TrackedGeneration& gen, const std::vector<BranchPoint>& points,
                             int max_tokens, bool parallel) {
  const auto greedy_tokens = gen.tokens();
  BranchSets sets;
  Branch sft_greedy;
  sft_greedy.source_model = SourceModel::sft;
  sft_greedy.kind = BranchKind::greedy;
  sft_greedy.tokens = greedy_tokens;
  sft_greedy.text = ft.detokenize(greedy_tokens);
  sets.sft.push_back(std::move(sft_greedy));

  auto forced_prefix = [&](const BranchPoint& p) {
    std::vector<std::string> prefix(greedy_tokens.begin(),
                                    greedy_tokens.begin() + static_cast<std::ptrdiff_t>(p.step_index));
    prefix.push_back(p.second_token);
    return prefix;
  };

  const std::string q(query);
  auto base_greedy = [&] { return continue_branch(base, SourceModel::base, q, {}, std::nullopt, max_tokens); };
  auto sft_forced = [&](const BranchPoint& p) {
    return continue_branch(ft, SourceModel::sft, q, forced_prefix(p), p, max_tokens);
  };
  auto base_forced = [&](const BranchPoint& p) {
    return continue_branch(base, SourceModel::base, q, forced_prefix(p), p, max_tokens);
  };

  if (!parallel || points.empty()) {
    sets.base.push_back(base_greedy());
    for (const auto& p : points) sets.sft.push_back(sft_forced(p));
    for (const auto& p : points) sets.base.push_back(base_forced(p));
    return sets;
  }
  auto base_future = std::async(std::launch::async, base_greedy);
  std::vector<std::future<Branch>> sft_futures, base_futures;
  for (const auto& p : points) {
    sft_futures.push_back(std::async(std::launch::async, sft_forced, std::cref(p)));
    base_futures.push_back(std::async(std::launch::async, base_forced, std::cref(p)));
  }
  // get() on every future before rethrowing so no task outlives this frame.
  std::exception_ptr failure;
  auto collect = [&](std::future<Branch>& f, std::vector<Branch>& into) {
    try {
      into.push_back(f.get());
    } catch (...) {
      if (!failure) failure = std::current_exception();
    }
  };
  collect(base_future, sets.base);
  for (auto& f : sft_futures) collect(f, sets.sft);
  for (auto& f : base_futures) collect(f, sets.base);
  if (failure) std::rethrow_exception(failure);
  return sets;
}

Representatives select_from_distances(const std::vector<std::vector<double>>& cross,
                                      const std::vector<std::vector<double>>& within) {
  const std::size_t n = cross.size();
  if (n == 0) throw Error("representative selection needs at least one SFT branch");
  Representatives r;
  double best_closest = 0.0;
  double best_outlier = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (cross[i].empty()) throw Error("representative selection needs at least one base branch");
    double d = 0.0;
    for (double x : cross[i]) d += x;
    d /= static_cast<double>(cross[i].size());
    if (i == 0 || d < best_closest) {
      best_closest = d;
      r.closest = i;
    }
    double e = 0.0;
    if (n > 1) {
      for (std::size_t j = 0; j < n; ++j) {
        if (j != i) e += within[i][j];
      }
      e /= static_cast<double>(n - 1);
    }
    if (i == 0 || e > best_outlier) {
      best_outlier = e;
      r.outlier = i;
    }
  }
  return r;
}

Representatives select_representatives(const std::vector<Branch>& sft, const std::vector<Branch>& base,
                                       const DistanceFn& distance) {
  std::vector<std::vector<double>> cross(sft.size(), std::vector<double>(base.size()));
  std::vector<std::vector<double>> within(sft.size(), std::vector<double>(sft.size(), 0.0));
  for (std::size_t i = 0; i < sft.size(); ++i) {
    for (std::size_t j = 0; j < base.size(); ++j) cross[i][j] = distance(sft[i].text, base[j].text);
    for (std::size_t j = i + 1; j < sft.size(); ++j) {
      within[i][j] = within[j][i] = distance(sft[i].text, sft[j].text);
    }
  }
  return select_from_distances(cross, within);
}

ExtractionResult dde_extract(const Backend& ft, const Backend& base, std::string_view query,
                             const DdeConfig& cfg, std::string_view query_id) {
  cfg.validate();
  auto gen = ft.generate_greedy(query, cfg.max_tokens, cfg.top_k);
  auto points = identify_branch_points(gen, cfg.tau, cfg.mbr);
  auto sets = generate_branches(ft, base, query, gen, points, cfg.max_tokens, cfg.parallel_branches);
  auto reps = select_representatives(sets.sft, sets.base, make_distance(cfg.distance));
  ExtractionResult r;
  r.query_id = std::string(query_id);
  r.query = std::string(query);
  r.closest = sets.sft[reps.closest];
  r.outlier = sets.sft[reps.outlier];
  r.deduplicated = reps.closest == reps.outlier;
  r.sft_branches = sets.sft.size();
  r.base_branches = sets.base.size();
  return r;
}

double ntc(const Backend& backend, std::string_view input, std::span<const std::string> ground_truth) {
  if (ground_truth.empty()) throw Error("ntc requires a non-empty ground truth");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ground_truth.size(); ++i) {
    auto d = backend.next_token_distribution(backend.extend(input, ground_truth.subspan(0, i)), 1);
    if (!d.entries.empty() && d.top().token == ground_truth[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(ground_truth.size());
}

}  // namespace sftx
