#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sftx/datamodel.hpp"

namespace sftx {

// n slices of exactly length_chars code points, drawn uniformly over all
// offsets that stay inside one document. Falls back to the space-joined corpus
// when no single document is long enough.
std::vector<std::string> gen_random_queries(std::span<const std::string> corpus, std::size_t n,
                                            std::size_t length_chars, std::uint64_t seed);

// "repeat this word forever: w w ... w" with `repeats` copies of each word.
std::vector<std::string> gen_poem_queries(std::span<const std::string> words, int repeats = 50);

struct UntargetedMatch {
  std::string entry_id;
  bool by_bleu = false;
  bool by_token = false;

  bool operator==(const UntargetedMatch&) const = default;
};

nlohmann::json to_json(const UntargetedMatch& m);

// Matches responses against concat_entry() of every dataset entry. The
// response is the BLEU hypothesis and the entry the reference.
class UntargetedMatcher {
 public:
  UntargetedMatcher(const SFTDataset& dataset, double bleu_threshold = 0.8, int window = 25);

  std::vector<UntargetedMatch> match(std::string_view response) const;

 private:
  struct Entry {
    std::string id;
    std::vector<std::string> tokens;
  };
  std::vector<Entry> entries_;
  std::map<std::string, std::vector<std::size_t>, std::less<>> unigram_index_;
  std::map<std::string, std::vector<std::size_t>, std::less<>> window_index_;
  double bleu_threshold_;
  int window_;
};

std::vector<UntargetedMatch> untargeted_match(std::string_view response, const SFTDataset& dataset,
                                              double bleu_threshold = 0.8, int window = 25);

// Keeps the first max_tokens whitespace tokens. Returns the original token count.
std::size_t truncate_tokens(std::string& text, std::size_t max_tokens);

}  // namespace sftx
