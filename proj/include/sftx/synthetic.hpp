#pragma once

#include <cstdint>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "sftx/backend.hpp"
#include "sftx/datamodel.hpp"

namespace sftx {

// Desk-scale stand-in for a fine-tuned model and its SFT data, built so that
// greedy decoding deviates from some training responses.
//
// Each family holds two "majority" pairs with an identical response
// "p a x1..x4 t1..tn" and one "deviated" pair "p b y1..yn". After "RESP: p" the
// majority token a outweighs b, so greedy decoding from the deviated pair's
// instruction drifts into the majority response. The base corpus carries a
// bridge "x3 x4 z1..zm" per family, giving a second low-confidence step whose
// forced branch resembles base-model text. Plain pairs have no collisions.
struct SyntheticOptions {
  std::size_t families = 20;
  std::size_t plain = 40;
  std::size_t tail_length = 10;
  std::size_t bridge_length = 8;
  std::size_t bridge_copies = 2;
  std::size_t base_documents = 200;
  int order = 3;
  double smoothing = 1e-5;
  double finetune_weight = 2.0;
  // Teach the fine-tuned model to answer the masked-data completion prompt.
  bool completion_demos = true;
  std::uint64_t seed = 7;
};

struct SyntheticSetup {
  SFTDataset dataset;
  std::vector<std::string> base_corpus;
  // Held-out questions ("tell me about KEY") whose answers are the SFT responses.
  SFTDataset benchmark;
  std::set<std::string> deviated_ids;
  std::set<std::string> majority_ids;
  std::set<std::string> plain_ids;
  std::shared_ptr<const ToyModel> base_model;
  std::shared_ptr<const ToyModel> ft_model;
  std::string pair_template = kDefaultPairTemplate;
};

SyntheticSetup make_synthetic_setup(const SyntheticOptions& opts = {});

// Pseudo-words built from consonant-vowel syllables, unique within one generator.
class WordSource {
 public:
  explicit WordSource(std::uint64_t seed);
  std::string next();

 private:
  std::mt19937_64 rng_;
  std::set<std::string> used_;
};

}  // namespace sftx
