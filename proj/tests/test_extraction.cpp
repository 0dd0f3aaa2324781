#include <doctest.h>

#include "oracles.hpp"
#include "sftx/extraction.hpp"
#include "sftx/metrics.hpp"
#include "sftx/text.hpp"

using namespace sftx;

namespace {

TrackedGeneration scripted(const std::vector<double>& probs) {
  TrackedGeneration g;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    GenerationStep s;
    s.token = "t" + std::to_string(i);
    s.prob = probs[i];
    s.alternatives.entries = {{s.token, probs[i]}, {"alt" + std::to_string(i), 1.0 - probs[i]}};
    s.alternatives.sort_entries();
    if (s.alternatives.entries[0].token != s.token) std::swap(s.alternatives.entries[0], s.alternatives.entries[1]);
    g.steps.push_back(s);
  }
  return g;
}

struct Step {
  std::string token;
  double prob;
  std::string alt;
};

// Registers the distributions a greedy walk over `steps` from `prompt` will request, ending in EOS.
void chain(MockBackend& m, const std::string& prompt, const std::vector<Step>& steps) {
  std::string prefix = prompt;
  for (const auto& s : steps) {
    TokenDistribution d;
    d.entries = {{s.token, s.prob}, {s.alt, 1.0 - s.prob}};
    d.sort_entries();
    m.distributions[prefix] = d;
    prefix += " " + s.token;
  }
  TokenDistribution end;
  end.entries = {{kEos, 0.97}, {"and", 0.03}};
  m.distributions[prefix] = end;
}

std::shared_ptr<ToyModel> ambiguous_model() {
  std::vector<std::string> corpus = {"some background text", "x y z"};
  SFTDataset ds;
  ds.entries.push_back({"q one", "p a x x", "0", std::nullopt});
  ds.entries.push_back({"q one", "p a x x", "1", std::nullopt});
  ds.entries.push_back({"q one", "p b y y", "2", std::nullopt});
  return std::make_shared<ToyModel>(toy_finetune(toy_train(corpus, 3, 1e-4), ds, 5.0));
}

}  // namespace

TEST_SUITE("extraction") {
  TEST_CASE("front-to-back branch point scan") {
    auto g = scripted({0.95, 0.6, 0.9, 0.5});
    auto one = identify_branch_points(g, 0.8, 1);
    REQUIRE(one.size() == 1);
    CHECK(one[0].step_index == 1);
    CHECK(one[0].second_token == "alt1");
    auto two = identify_branch_points(g, 0.8, 10);
    REQUIRE(two.size() == 2);
    CHECK(two[1].step_index == 3);
    CHECK(identify_branch_points(scripted({0.9, 0.85}), 0.8, 10).empty());
    CHECK(identify_branch_points(scripted({0.9, 0.85, 0.99}), 1.0, 2).size() == 2);
  }

  TEST_CASE("points without a second token are skipped") {
    auto g = scripted({0.5, 0.5});
    g.steps[0].alternatives.entries.resize(1);
    auto pts = identify_branch_points(g, 0.8, 10);
    REQUIRE(pts.size() == 1);
    CHECK(pts[0].step_index == 1);
  }

  TEST_CASE("branch sets and the prefix property") {
    std::mt19937_64 rng(4);
    std::vector<std::string> corpus;
    for (int i = 0; i < 60; ++i) corpus.push_back(oracle::joined(oracle::random_words(rng, 8, 6)));
    ToyBackend ft(std::make_shared<ToyModel>(toy_train(corpus, 2, 0.3)));
    ToyBackend base(std::make_shared<ToyModel>(toy_train(corpus, 3, 0.3)));
    auto gen = ft.generate_greedy("w1", 20, 5);
    auto none = generate_branches(ft, base, "w1", gen, {}, 20);
    CHECK(none.sft.size() == 1);
    CHECK(none.base.size() == 1);
    auto pts = identify_branch_points(gen, 1.0, 2);
    REQUIRE(pts.size() == 2);
    for (bool parallel : {false, true}) {
      auto sets = generate_branches(ft, base, "w1", gen, pts, 20, parallel);
      REQUIRE(sets.sft.size() == 3);
      REQUIRE(sets.base.size() == 3);
      const auto greedy = gen.tokens();
      for (std::size_t i = 1; i < 3; ++i) {
        for (const auto* set : {&sets.sft, &sets.base}) {
          const auto& b = (*set)[i];
          const auto idx = b.origin->step_index;
          REQUIRE(b.tokens.size() > idx);
          CHECK(std::equal(greedy.begin(), greedy.begin() + static_cast<std::ptrdiff_t>(idx), b.tokens.begin()));
          CHECK(b.tokens[idx] != greedy[idx]);
          CHECK(b.tokens.size() <= 20);
        }
      }
      CHECK(sets.base[0].kind == BranchKind::greedy);
      CHECK(sets.base[0].source_model == SourceModel::base);
    }
  }

  TEST_CASE("forced branch recovers the alternate training continuation") {
    ToyBackend ft(ambiguous_model());
    const auto q = query_prompt(kDefaultPairTemplate, "q one");
    auto gen = ft.generate_greedy(q, 10, 5);
    CHECK(join(gen.tokens(), " ") == "p a x x");
    auto pts = identify_branch_points(gen, 0.8, 10);
    REQUIRE_FALSE(pts.empty());
    CHECK(pts[0].second_token == "b");
    auto sets = generate_branches(ft, ft, q, gen, pts, 10);
    CHECK(sets.sft[1].text == "p b y y");
  }

  TEST_CASE("representatives") {
    std::vector<Branch> one(1);
    one[0].text = "a b c";
    std::vector<Branch> base(2);
    base[0].text = "x";
    base[1].text = "y";
    auto r = select_representatives(one, base, make_distance(DistanceMetric::bleu_complement));
    CHECK(r.closest == 0);
    CHECK(r.outlier == 0);

    std::vector<Branch> s(3);
    s[0].text = "one two three four";
    s[1].text = "x y";
    s[2].text = "five six seven eight";
    base[0].text = "x y";
    r = select_representatives(s, base, make_distance(DistanceMetric::bleu_complement));
    CHECK(r.closest == 1);

    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 200; ++t) {
      std::vector<std::vector<double>> cross(5, std::vector<double>(4)), within(5, std::vector<double>(5, 0.0));
      for (auto& row : cross)
        for (auto& x : row) x = std::round(u(rng) * 4) / 4;
      for (int i = 0; i < 5; ++i)
        for (int j = i + 1; j < 5; ++j) within[i][j] = within[j][i] = std::round(u(rng) * 4) / 4;
      auto got = select_from_distances(cross, within);
      auto want = oracle::exhaustive_select(cross, within);
      CHECK(got.closest == want.closest);
      CHECK(got.outlier == want.outlier);
    }
  }

  TEST_CASE("apples mock trace") {
    const std::string q = "Why are apples good?";
    MockBackend ft, base;
    chain(ft, q, {{"Apples", 0.9, "They"}, {"have", 0.6, "are"}, {"lots", 0.95, "many"}, {"of", 0.99, "in"},
                  {"sugar", 0.55, "fiber"}, {".", 0.9, "!"}});
    chain(ft, q + " Apples are", {{"healthy", 0.9, "good"}, {".", 0.9, "!"}});
    chain(ft, q + " Apples have lots of fiber", {{".", 0.9, "!"}});
    chain(base, q, {{"Apples", 0.9, "They"}, {"are", 0.9, "have"}, {"fruit", 0.9, "red"}, {".", 0.9, "!"}});
    chain(base, q + " Apples are", {{"fruit", 0.9, "red"}, {".", 0.9, "!"}});
    chain(base, q + " Apples have lots of fiber", {{".", 0.9, "!"}});
    DdeConfig cfg;
    cfg.max_tokens = 20;
    auto r = dde_extract(ft, base, q, cfg, "apples");
    CHECK(r.sft_branches == 3);
    CHECK(r.base_branches == 3);
    CHECK(r.closest.text == "Apples have lots of fiber .");
    CHECK(r.outlier.text == "Apples are healthy .");
    CHECK_FALSE(r.deduplicated);
    CHECK(r.outlier.origin->greedy_token == "have");
    CHECK(r.closest.origin->greedy_token == "sugar");
    auto back = extraction_result_from_json(to_json(r));
    CHECK(to_json(back) == to_json(r));
  }

  TEST_CASE("a forced EOS ends the branch at its prefix") {
    MockBackend ft;
    chain(ft, "q", {{"a", 0.9, "b"}, {"c", 0.6, std::string(kEos)}, {"d", 0.9, "e"}});
    auto gen = ft.generate_greedy("q", 10, 5);
    auto points = identify_branch_points(gen, 0.8, 10);
    REQUIRE(points.size() == 1);
    CHECK(points[0].second_token == kEos);
    auto sets = generate_branches(ft, ft, "q", gen, points, 10, false);
    REQUIRE(sets.sft.size() == 2);
    CHECK(sets.sft[0].text == "a c d");
    CHECK(sets.sft[1].tokens == std::vector<std::string>{"a"});
    CHECK(sets.sft[1].text == "a");
    for (const auto& p : ft.prompts_seen()) CHECK(p.find(kEos) == std::string::npos);
  }

  TEST_CASE("no low-confidence step degenerates to greedy") {
    MockBackend ft;
    chain(ft, "q", {{"a", 0.9, "b"}, {"c", 0.95, "d"}});
    DdeConfig cfg;
    cfg.max_tokens = 10;
    auto r = dde_extract(ft, ft, "q", cfg);
    CHECK(r.deduplicated);
    CHECK(r.candidates() == std::vector<std::string>{"a c"});
    CHECK(vanilla_extract(ft, "q", 1, {}, 1, 10).candidates == r.candidates());
  }

  TEST_CASE("DDE recovers the ground truth where greedy misses it") {
    auto model = ambiguous_model();
    ToyBackend ft(model);
    const auto q = query_prompt(kDefaultPairTemplate, "q one");
    ToyBackend base(std::make_shared<ToyModel>(toy_train(std::vector<std::string>{"some background text", "x y z"}, 3, 1e-4)));
    auto gen = ft.generate_greedy(q, 64, 5);
    auto sets = generate_branches(ft, base, q, gen, identify_branch_points(gen, 0.8, 10), 64, false);
    REQUIRE(sets.sft.size() == 2);
    CHECK(sets.sft[1].text == "p b y y");
    auto r = dde_extract(ft, base, q, DdeConfig{});
    auto c = r.candidates();
    CHECK(std::find(c.begin(), c.end(), "p b y y") != c.end());
    CHECK(vanilla_extract(ft, q, 1, {}, 0).candidates[0] != "p b y y");
    auto again = dde_extract(ft, base, q, DdeConfig{});
    CHECK(to_json(again) == to_json(r));
  }

  TEST_CASE("vanilla candidates") {
    std::mt19937_64 rng(6);
    std::vector<std::string> corpus;
    for (int i = 0; i < 40; ++i) corpus.push_back(oracle::joined(oracle::random_words(rng, 7, 9)));
    ToyBackend toy(std::make_shared<ToyModel>(toy_train(corpus, 2, 0.5)));
    const auto greedy = toy.complete_text("w2", 16);
    CHECK(vanilla_extract(toy, "w2", 1, {}, 5, 16).candidates == std::vector<std::string>{greedy});
    auto cold = vanilla_extract(toy, "w2", 3, {0.0, 1.0}, 5, 16).candidates;
    CHECK(cold == std::vector<std::string>(3, greedy));
    auto a = vanilla_extract(toy, "w2", 5, {}, 77, 16).candidates;
    auto b = vanilla_extract(toy, "w2", 5, {}, 77, 16).candidates;
    CHECK(a == b);
    CHECK(a.size() == 5);
    CHECK_THROWS_AS(vanilla_extract(toy, "w2", 0, {}, 1), Error);
  }

  TEST_CASE("ntc bounds and the teacher-forcing oracle") {
    const std::vector<std::string> truth = {"x", "y", "z"};
    auto position = [](std::string_view prefix) { return split_ws(prefix).size() - 1; };
    MockBackend good, bad;
    good.responder = [&](std::string_view p, int) {
      TokenDistribution d;
      d.entries = {{truth[position(p)], 0.6}, {"no", 0.4}};
      return d;
    };
    bad.responder = [&](std::string_view p, int) {
      TokenDistribution d;
      d.entries = {{"no", 0.6}, {truth[position(p)], 0.4}};
      return d;
    };
    CHECK(ntc(good, "q", truth) == 1.0);
    CHECK(ntc(bad, "q", truth) == 0.0);

    std::mt19937_64 rng(31);
    std::vector<std::string> corpus;
    for (int i = 0; i < 80; ++i) corpus.push_back(oracle::joined(oracle::random_words(rng, 10, 12)));
    auto model = std::make_shared<ToyModel>(toy_train(corpus, 3, 0.05));
    ToyBackend toy(model);
    for (int t = 0; t < 100; ++t) {
      const auto input = oracle::joined(oracle::random_words(rng, 1 + rng() % 4, 12));
      const auto gt = oracle::random_words(rng, 1 + rng() % 12, 12);
      CHECK(std::abs(ntc(toy, input, gt) - oracle::teacher_forced_accuracy(*model, input, gt)) <= 1e-12);
    }
  }

  TEST_CASE("dde config validation and json") {
    DdeConfig c;
    c.top_k = 1;
    CHECK_THROWS_AS(c.validate(), Error);
    c = DdeConfig{};
    c.tau = 0.6;
    c.distance = DistanceMetric::embed_complement;
    auto back = dde_config_from_json(to_json(c));
    CHECK(back.tau == 0.6);
    CHECK(back.distance == DistanceMetric::embed_complement);
  }
}
