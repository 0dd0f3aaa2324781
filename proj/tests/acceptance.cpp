// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>

#include "oracles.hpp"
#include "sftx/baselines.hpp"
#include "sftx/campaign.hpp"
#include "sftx/defense.hpp"
#include "sftx/synthetic.hpp"
#include "sftx/text.hpp"
#include "sftx/wire.hpp"

using namespace sftx;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) {
      pass = false;
      detail << "failed: " << what << "; ";
    }
  }
};

int failures = 0;

void criterion(const std::string& name, double max_seconds, const std::function<void(Outcome&)>& body) {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(o);
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail << "exception: " << e.what() << "; ";
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (max_seconds > 0 && secs > max_seconds) {
    o.pass = false;
    o.detail << "runtime " << secs << " s over the " << max_seconds << " s limit; ";
  }
  if (!o.pass) ++failures;
  std::printf("%s  %-28s %s[%.2f s]\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.str().c_str(), secs);
  std::fflush(stdout);
}

CampaignBackends synthetic_backends(const SyntheticSetup& s) {
  CampaignBackends b;
  b.ft = std::make_shared<ToyBackend>(s.ft_model);
  b.base = std::make_shared<ToyBackend>(s.base_model);
  return b;
}

std::vector<const InstructionResponsePair*> deviated(const SyntheticSetup& s) {
  std::vector<const InstructionResponsePair*> out;
  for (const auto& e : s.dataset.entries)
    if (s.deviated_ids.count(e.id)) out.push_back(&e);
  return out;
}

void defense_math(Outcome& o) {
  std::mt19937_64 rng(20240611);
  std::uniform_real_distribution<double> logit(-8.0, 8.0);
  double worst_ratio = 0.0, worst_consistency = 0.0;
  for (int t = 0; t < 10000; ++t) {
    const std::size_t n = 2 + rng() % 15;
    std::vector<double> l(n);
    for (auto& x : l) x = logit(rng);
    std::sort(l.begin(), l.end(), std::greater<>());
    auto p = softmax(l);
    TokenDistribution d;
    for (std::size_t i = 0; i < n; ++i) d.entries.push_back({"t" + std::to_string(i), p[i]});
    const double v = draw_target(0.5 + 0.49 * uniform01(rng), rng);
    auto r = rewrite_distribution(d, v);
    auto rl = rewrite_logits(l, v);
    auto sp = softmax(rl);
    std::size_t argmax = 0;
    for (std::size_t i = 1; i < n; ++i)
      if (r.entries[i].prob > r.entries[argmax].prob) argmax = i;
    o.require(argmax == 0 && r.entries[0].token == "t0", "argmax preserved");
    o.require(std::max_element(rl.begin(), rl.end()) == rl.begin(), "logit argmax preserved");
    for (std::size_t i = 1; i + 1 < n; ++i) {
      if (p[i + 1] == 0.0 || r.entries[i + 1].prob == 0.0) continue;
      const double rel = std::abs(r.entries[i].prob / r.entries[i + 1].prob - p[i] / p[i + 1]) / (p[i] / p[i + 1]);
      worst_ratio = std::max(worst_ratio, rel);
    }
    for (std::size_t i = 0; i < n; ++i) worst_consistency = std::max(worst_consistency, std::abs(sp[i] - r.entries[i].prob));
  }
  o.require(worst_ratio <= 1e-12, "non-top ratios within 1e-12");
  o.require(worst_consistency <= 1e-9, "softmax(rewrite_logits) within 1e-9");
  const double l1 = rewrite_logits(std::vector<double>{2.0, 1.0, 0.0}, 0.9)[0];
  o.require(std::abs(l1 - 3.51048) < 1e-5, "hand example 3.51048");
  o.detail << "ratio err " << worst_ratio << ", consistency err " << worst_consistency << ", l1'=" << l1 << " ";
}

void threshold_blinding(Outcome& o) {
  SyntheticOptions opts;
  auto s = make_synthetic_setup(opts);
  wire::ProtocolServer upstream(std::make_shared<ToyBackend>(s.ft_model));
  upstream.start();
  DefenseConfig dc;
  dc.tau_def = 0.8;
  dc.seed = 1;
  DefenseProxy proxy(upstream.url(), dc);
  proxy.start();
  BackendConfig plain_cfg;
  plain_cfg.kind = BackendKind::http;
  plain_cfg.endpoint = upstream.url();
  BackendConfig defended_cfg = plain_cfg;
  defended_cfg.endpoint = proxy.url();
  HttpBackend plain(plain_cfg), defended(defended_cfg);
  std::size_t queries = 0, undefended_hits = 0, defended_points = 0;
  for (const auto& e : s.dataset.entries) {
    if (queries == 100) break;
    ++queries;
    const auto q = query_prompt(s.pair_template, e.instruction);
    undefended_hits += !identify_branch_points(plain.generate_greedy(q, 64, 5), 0.8, 10).empty();
    defended_points += identify_branch_points(defended.generate_greedy(q, 64, 5), 0.8, 10).size();
  }
  proxy.stop();
  upstream.stop();
  const double rate = static_cast<double>(undefended_hits) / static_cast<double>(queries);
  o.require(queries == 100, "100 queries");
  o.require(defended_points == 0, "zero points behind the proxy");
  o.require(rate >= 0.30, "undefended >= 30% with a point");
  o.detail << "defended points " << defended_points << ", undefended " << undefended_hits << "/" << queries << " ";
}

void algorithm_oracle(Outcome& o) {
  std::mt19937_64 rng(77);
  const auto distance = make_distance(DistanceMetric::bleu_complement);
  std::size_t mismatches = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t ns = 1 + rng() % 8, nb = 1 + rng() % 8;
    std::vector<Branch> S(ns), B(nb);
    // a small vocabulary makes ties and exact duplicates common
    for (auto& b : S) b.text = oracle::joined(oracle::random_words(rng, 1 + rng() % 8, 4));
    for (auto& b : B) b.text = oracle::joined(oracle::random_words(rng, 1 + rng() % 8, 4));
    std::vector<std::vector<double>> cross(ns, std::vector<double>(nb)), within(ns, std::vector<double>(ns, 0.0));
    for (std::size_t i = 0; i < ns; ++i) {
      for (std::size_t j = 0; j < nb; ++j) cross[i][j] = distance(S[i].text, B[j].text);
      for (std::size_t j = 0; j < ns; ++j)
        if (j != i) within[i][j] = distance(S[i].text, S[j].text);
    }
    auto got = select_representatives(S, B, distance);
    auto want = oracle::exhaustive_select(cross, within);
    mismatches += got.closest != want.closest || got.outlier != want.outlier;
  }
  o.require(mismatches == 0, "exact agreement");
  o.detail << mismatches << " mismatches over 1000 sets ";
}

void ntc_oracle(Outcome& o) {
  std::mt19937_64 rng(5150);
  std::vector<std::string> corpus;
  for (int i = 0; i < 120; ++i) corpus.push_back(oracle::joined(oracle::random_words(rng, 12, 15)));
  auto model = std::make_shared<ToyModel>(toy_train(corpus, 3, 0.02));
  ToyBackend toy(model);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const auto input = oracle::joined(oracle::random_words(rng, 1 + rng() % 5, 15));
    const auto truth = oracle::random_words(rng, 1 + rng() % 15, 15);
    worst = std::max(worst, std::abs(ntc(toy, input, truth) - oracle::teacher_forced_accuracy(*model, input, truth)));
  }
  const std::vector<std::string> truth = {"alpha", "beta", "gamma", "delta"};
  auto at = [&](std::string_view p) { return truth[split_ws(p).size() - 1]; };
  MockBackend good, bad;
  good.responder = [&](std::string_view p, int) {
    TokenDistribution d;
    d.entries = {{at(p), 0.7}, {"other", 0.3}};
    return d;
  };
  bad.responder = [&](std::string_view p, int) {
    TokenDistribution d;
    d.entries = {{"other", 0.7}, {at(p), 0.3}};
    return d;
  };
  const double hi = ntc(good, "q", truth), lo = ntc(bad, "q", truth);
  o.require(worst <= 1e-12, "toy vs brute force within 1e-12");
  o.require(hi == 1.0 && lo == 0.0, "oracle 1.0 and adversarial 0.0");
  o.detail << "max diff " << worst << ", oracle " << hi << ", adversarial " << lo << " ";
}

void branch_deviation(Outcome& o) {
  auto s = make_synthetic_setup();
  ToyBackend ft(s.ft_model), base(s.base_model);
  DdeConfig cfg;
  const auto dev = deviated(s);
  double em = 0, ntc_sum = 0, bleu_dde = 0, bleu_van = 0;
  for (std::size_t i = 0; i < dev.size(); ++i) {
    const auto& e = *dev[i];
    const auto q = query_prompt(s.pair_template, e.instruction);
    auto r = dde_extract(ft, base, q, cfg, e.id);
    auto v = vanilla_extract(ft, q, static_cast<int>(r.sft_branches), {}, mix_seed(11, i), cfg.max_tokens);
    em += trim(v.candidates.at(0)) == trim(e.response);
    ntc_sum += ntc(ft, q, split_ws(e.response));
    bleu_dde += pair_score(r, e.response).bleu;
    bleu_van += mean_scores(v.candidates, e.response).bleu;
  }
  const double n = static_cast<double>(dev.size());
  o.require(!dev.empty(), "non-empty deviated subset");
  o.require(em == 0.0, "vanilla exact match 0");
  o.require(ntc_sum / n >= 0.8, "mean NTC >= 0.8");
  o.require(bleu_dde > bleu_van, "DDE BLEU > Vanilla BLEU");
  o.detail << "n=" << dev.size() << ", EM " << em / n << ", NTC " << ntc_sum / n << ", BLEU dde " << bleu_dde / n
           << " vs vanilla " << bleu_van / n << " ";
}

void degeneracy(Outcome& o) {
  auto s = make_synthetic_setup();
  ToyBackend ft(s.ft_model), base(s.base_model);
  DdeConfig cfg;
  cfg.tau = 1e-9;
  std::size_t equal = 0, total = 0;
  double min_prob = 1.0;
  for (const auto& e : s.dataset.entries) {
    if (total == 100) break;
    ++total;
    const auto q = query_prompt(s.pair_template, e.instruction);
    for (const auto& st : ft.generate_greedy(q, cfg.max_tokens, cfg.top_k).steps) min_prob = std::min(min_prob, st.prob);
    auto r = dde_extract(ft, base, q, cfg, e.id);
    auto v = vanilla_extract(ft, q, 1, {}, 0, cfg.max_tokens);
    equal += r.deduplicated && r.closest.text == v.candidates.at(0);
  }
  o.require(min_prob > cfg.tau, "tau below every greedy probability");
  o.require(equal == total && total == 100, "DDE text equals Vanilla greedy");
  o.detail << equal << "/" << total << " equal, min greedy prob " << min_prob << " ";
}

void metrics(Outcome& o) {
  std::mt19937_64 rng(404);
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    auto ref = oracle::random_words(rng, 5 + rng() % 25, 12);
    auto cand = ref;
    for (auto& w : cand)
      if (rng() % 3 == 0) w = "w" + std::to_string(rng() % 12);
    if (rng() % 2) cand.resize(std::max<std::size_t>(1, cand.size() - rng() % 4));
    worst = std::max(worst, std::abs(bleu(oracle::joined(cand), oracle::joined(ref)) -
                                     oracle::bleu(oracle::joined(cand), oracle::joined(ref))));
  }
  std::size_t window_mismatch = 0;
  for (int t = 0; t < 300; ++t) {
    auto a = oracle::random_words(rng, rng() % 120, 3);
    auto b = oracle::random_words(rng, rng() % 120, 3);
    auto m = token_window_match(oracle::joined(a), oracle::joined(b), 8);
    const auto run = oracle::longest_run(a, b);
    window_mismatch += m.longest_run != run || m.matched != (run >= 8);
  }
  const double ws = window_success_theory(0.8, 25, 85);
  bool monotone = true;
  for (int k = 2; k <= 85; ++k) monotone = monotone && window_success_theory(0.8, k, 85) <= window_success_theory(0.8, k - 1, 85);
  o.require(worst <= 0.02, "BLEU within 0.02 of the reference");
  o.require(window_mismatch == 0, "token window equals brute force");
  o.require(std::abs(ws - 0.2059) <= 1e-3, "window_success_theory(0.8,25,85)");
  o.require(monotone, "non-increasing in k");
  o.detail << "BLEU max diff " << worst << ", window mismatches " << window_mismatch << ", theory " << ws << " ";
}

void untargeted(Outcome& o) {
  std::mt19937_64 rng(9001);
  std::size_t mismatches = 0;
  for (int rep = 0; rep < 3; ++rep) {
    SFTDataset ds;
    for (int i = 0; i < 200; ++i)
      ds.entries.push_back({oracle::joined(oracle::random_words(rng, 4 + rng() % 8, 30)),
                            oracle::joined(oracle::random_words(rng, 8 + rng() % 30, 30)), "e" + std::to_string(i),
                            std::nullopt});
    UntargetedMatcher matcher(ds, 0.5, 8);
    for (int t = 0; t < 40; ++t) {
      std::string resp = t % 4 == 0 ? concat_entry(ds.entries[rng() % 200])
                                     : oracle::joined(oracle::random_words(rng, 5 + rng() % 60, 30));
      auto got = matcher.match(resp);
      auto want = oracle::untargeted(resp, ds, 0.5, 8);
      bool same = got.size() == want.size();
      for (std::size_t i = 0; same && i < got.size(); ++i)
        same = got[i].entry_id == want[i].id && got[i].by_bleu == want[i].by_bleu && got[i].by_token == want[i].by_token;
      mismatches += !same;
    }
  }
  auto s = make_synthetic_setup();
  CampaignConfig cfg;
  cfg.baseline_kind = "random";
  auto queries = gen_random_queries(s.base_corpus, 1000, 100, 3);
  ToyBackend ft(s.ft_model);
  auto report = run_baseline_campaign(cfg, queries, s.dataset, ft);
  o.require(mismatches == 0, "indexed matcher equals brute force");
  o.require(s.dataset.entries.size() == 100, "100-entry dataset");
  o.require(report.any_rate < 0.02, "random-query match rate < 2%");
  o.detail << mismatches << " matcher mismatches, random match rate " << report.any_rate << " (bleu "
           << report.bleu_rate << ", token " << report.token_rate << ") ";
}

void preservation(Outcome& o) {
  std::mt19937_64 rng(31337);
  std::size_t bad_count = 0, bad_subset = 0, bad_identity = 0;
  for (int t = 0; t < 1000; ++t) {
    const bool sentences = t % 2;
    std::string text;
    std::size_t units = 1 + rng() % 30;
    if (sentences) {
      for (std::size_t i = 0; i < units; ++i)
        text += (i ? " " : "") + oracle::joined(oracle::random_words(rng, 1 + rng() % 6, 50)) + ".";
    } else {
      text = oracle::joined(oracle::random_words(rng, units, 50));
    }
    const double rate = static_cast<double>(1 + rng() % 100) / 100.0;
    const auto seed = rng();
    auto run = [&](double r) { return sentences ? preserve_psp(text, r, seed) : preserve_pwp(text, r, seed); };
    auto q = run(rate);
    const auto want = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(rate * static_cast<double>(units) + 1e-9)));
    bad_count += q.kept_spans.size() != std::min(units, want);
    std::set<std::size_t> prev;
    for (double r : {0.25, 0.5, 0.75, 1.0}) {
      std::set<std::size_t> cur;
      for (auto sp : run(r).kept_spans) cur.insert(sp.start);
      bad_subset += !std::includes(cur.begin(), cur.end(), prev.begin(), prev.end());
      prev = cur;
    }
    bad_identity += preserve_full(text).masked != text || run(1.0).masked != text;
  }
  o.require(bad_count == 0, "kept counts");
  o.require(bad_subset == 0, "monotone subsets");
  o.require(bad_identity == 0, "FULL identity");
  o.detail << "count errors " << bad_count << ", subset errors " << bad_subset << ", identity errors " << bad_identity << " ";
}

void retraining(Outcome& o) {
  auto s = make_synthetic_setup();
  auto backends = synthetic_backends(s);
  CampaignConfig cfg;
  cfg.methods = {Method::dde};
  auto full = run_reconstruction(cfg, s.dataset, backends);
  auto ex = run_retraining_export(cfg, full.rows, backends.ft.get());
  auto score = toy_retraining_eval(*s.base_model, ex.dataset, cfg.retrain_weight, s.benchmark, s.pair_template);
  const double gain = score.retrained_exact_match - score.base_exact_match;

  cfg.preservations = {{PreservationMethod::pwp, 0.5}};
  auto masked = run_reconstruction(cfg, s.dataset, backends);
  cfg.completion = true;
  auto with = run_retraining_export(cfg, masked.rows, backends.ft.get());
  cfg.completion = false;
  auto without = run_retraining_export(cfg, masked.rows, backends.ft.get());
  auto mask_rate = [](const RetrainingExport& e) {
    std::size_t n = 0;
    for (const auto& p : e.dataset.entries) n += contains_mask(p.instruction) || contains_mask(p.response);
    return e.dataset.entries.empty() ? 0.0 : static_cast<double>(n) / static_cast<double>(e.dataset.entries.size());
  };
  const double rw = mask_rate(with), rwo = mask_rate(without);
  o.require(gain >= 0.20, "exact-match gain >= 20 points");
  o.require(with.dataset.entries != without.dataset.entries, "arms differ");
  o.require(rwo > rw, "without-completion arm carries more masks");
  o.detail << "EM base " << score.base_exact_match << " -> retrained " << score.retrained_exact_match
           << ", mask rate with completion " << rw << " vs without " << rwo << " ";
}

void reproducibility(Outcome& o) {
  oracle::TempDir tmp;
  auto s = make_synthetic_setup();
  save_dataset(s.dataset, tmp.path / "dataset.jsonl");
  s.ft_model->save(tmp.path / "ft.json");
  s.base_model->save(tmp.path / "base.json");
  CampaignConfig cfg;
  cfg.dataset_path = (tmp.path / "dataset.jsonl").string();
  cfg.ft_backend = BackendConfig{};
  cfg.ft_backend->model_path = (tmp.path / "ft.json").string();
  cfg.base_backend = BackendConfig{};
  cfg.base_backend->model_path = (tmp.path / "base.json").string();
  cfg.preservations = {{PreservationMethod::full, 1.0}, {PreservationMethod::pwp, 0.5}, {PreservationMethod::psp, 0.75}};
  cfg.seed = 2025;
  cfg.out_dir = (tmp.path / "run1").string();
  run_reconstruction_to_dir(cfg);
  cfg.out_dir = (tmp.path / "run2").string();
  run_reconstruction_to_dir(cfg);
  bool same = true;
  for (const char* f : {"report.json", "rows.jsonl", "rows.csv"})
    same = same && read_text(tmp.path / "run1" / f) == read_text(tmp.path / "run2" / f);
  o.require(same, "byte-identical report files");
  o.detail << "report.json " << read_text(tmp.path / "run1" / "report.json").size() << " bytes ";
}

}  // namespace

int main() {
  criterion("defense-math", 5, defense_math);
  criterion("threshold-blinding", 60, threshold_blinding);
  criterion("representative-selection", 10, algorithm_oracle);
  criterion("ntc-oracle", 0, ntc_oracle);
  criterion("branch-deviation", 120, branch_deviation);
  criterion("degeneracy", 0, degeneracy);
  criterion("metrics", 0, metrics);
  criterion("untargeted-baselines", 0, untargeted);
  criterion("preservation", 0, preservation);
  criterion("retraining-loop", 0, retraining);
  criterion("reproducibility", 0, reproducibility);
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
