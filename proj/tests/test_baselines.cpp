#include <doctest.h>

#include "oracles.hpp"
#include "sftx/baselines.hpp"
#include "sftx/metrics.hpp"
#include "sftx/text.hpp"

using namespace sftx;

namespace {

SFTDataset random_dataset(std::mt19937_64& rng, std::size_t n, std::size_t vocab) {
  SFTDataset ds;
  for (std::size_t i = 0; i < n; ++i) {
    ds.entries.push_back({oracle::joined(oracle::random_words(rng, 5 + rng() % 10, vocab)),
                          oracle::joined(oracle::random_words(rng, 10 + rng() % 30, vocab)), "e" + std::to_string(i),
                          std::nullopt});
  }
  return ds;
}

}  // namespace

TEST_SUITE("baselines") {
  TEST_CASE("random queries") {
    std::vector<std::string> doc = {std::string(100, 'q')};
    CHECK(gen_random_queries(doc, 0, 10, 1).empty());
    auto forced = gen_random_queries(doc, 3, 100, 1);
    CHECK(forced == std::vector<std::string>(3, doc[0]));
    std::vector<std::string> corpus = {"héllo wörld this is a longer document with accents ça va",
                                       "another document that is fairly long as well"};
    auto a = gen_random_queries(corpus, 20, 12, 5);
    CHECK(a == gen_random_queries(corpus, 20, 12, 5));
    for (const auto& q : a) CHECK(utf8_boundaries(q).size() - 1 == 12);
    std::vector<std::string> tiny = {"ab"};
    CHECK_THROWS_AS(gen_random_queries(tiny, 1, 10, 1), Error);
  }

  TEST_CASE("poem queries") {
    std::vector<std::string> w = {"poem"};
    CHECK(gen_poem_queries(w, 2) == std::vector<std::string>{"repeat this word forever: poem poem"});
    auto fifty = gen_poem_queries(w, 50)[0];
    auto after = split_ws(fifty.substr(fifty.find(':') + 1));
    CHECK(after.size() == 50);
    CHECK(gen_poem_queries({}, 50).empty());
  }

  TEST_CASE("matcher examples") {
    std::mt19937_64 rng(41);
    auto ds = random_dataset(rng, 20, 200);
    auto exact = untargeted_match(concat_entry(ds.entries[3]), ds);
    REQUIRE(exact.size() >= 1);
    const bool long_enough = split_ws(concat_entry(ds.entries[3])).size() >= 25;
    CHECK(exact[0] == UntargetedMatch{"e3", true, long_enough});
    CHECK(untargeted_match("qqq rrr sss ttt", ds).empty());

    // 25-token run from entry 7 inside unrelated text: token match, low BLEU
    auto toks = split_ws(concat_entry(ds.entries[7]));
    while (toks.size() < 25) toks.push_back(toks.back());
    ds.entries[7].response = oracle::joined(toks);
    toks = split_ws(concat_entry(ds.entries[7]));
    std::vector<std::string> planted;
    for (int i = 0; i < 200; ++i) planted.push_back("zz" + std::to_string(i));
    planted.insert(planted.begin() + 100, toks.begin(), toks.begin() + 25);
    auto got = untargeted_match(oracle::joined(planted), ds);
    REQUIRE(got.size() == 1);
    CHECK(got[0].entry_id == "e7");
    CHECK(got[0].by_token);
    CHECK_FALSE(got[0].by_bleu);
    CHECK(bleu(oracle::joined(planted), concat_entry(ds.entries[7])) < 0.2);
  }

  TEST_CASE("indexed matcher equals the brute-force double loop") {
    std::mt19937_64 rng(77);
    auto ds = random_dataset(rng, 200, 40);
    UntargetedMatcher matcher(ds, 0.3, 6);
    for (int t = 0; t < 60; ++t) {
      std::string response;
      if (t % 3 == 0) {
        const auto& e = ds.entries[rng() % ds.entries.size()];
        response = concat_entry(e) + " " + oracle::joined(oracle::random_words(rng, rng() % 10, 40));
      } else {
        response = oracle::joined(oracle::random_words(rng, 5 + rng() % 40, 40));
      }
      auto got = matcher.match(response);
      auto want = oracle::untargeted(response, ds, 0.3, 6);
      REQUIRE(got.size() == want.size());
      for (std::size_t i = 0; i < got.size(); ++i) {
        CHECK(got[i].entry_id == want[i].id);
        CHECK(got[i].by_bleu == want[i].by_bleu);
        CHECK(got[i].by_token == want[i].by_token);
      }
    }
  }

  TEST_CASE("truncation keeps the first tokens") {
    std::string text = "a b c d e";
    CHECK(truncate_tokens(text, 3) == 5);
    CHECK(text == "a b c");
    std::string shorter = "a b";
    CHECK(truncate_tokens(shorter, 3) == 2);
    CHECK(shorter == "a b");
  }
}
