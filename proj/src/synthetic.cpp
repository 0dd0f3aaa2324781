#include "sftx/synthetic.hpp"

#include <iomanip>
#include <sstream>

#include "sftx/preservation.hpp"
#include "sftx/text.hpp"

namespace sftx {

WordSource::WordSource(std::uint64_t seed) : rng_(seed) {}

std::string WordSource::next() {
  static constexpr char kCons[] = "bdfgklmnprstvz";
  static constexpr char kVow[] = "aeiou";
  for (;;) {
    std::string w;
    const int syllables = 2 + static_cast<int>(uniform01(rng_) * 2.0);
    for (int s = 0; s < syllables; ++s) {
      w += kCons[static_cast<std::size_t>(uniform01(rng_) * 14.0)];
      w += kVow[static_cast<std::size_t>(uniform01(rng_) * 5.0)];
    }
    if (used_.insert(w).second) return w;
  }
}

namespace {

std::string make_id(const char* kind, std::size_t i) {
  std::ostringstream os;
  os << kind << '-' << std::setw(3) << std::setfill('0') << i;
  return os.str();
}

std::string words(WordSource& src, std::size_t n) {
  std::vector<std::string> w;
  for (std::size_t i = 0; i < n; ++i) w.push_back(src.next());
  return join(w, " ");
}

}  // namespace

SyntheticSetup make_synthetic_setup(const SyntheticOptions& opts) {
  WordSource src(opts.seed);
  std::mt19937_64 rng(mix_seed(opts.seed, 1));
  SyntheticSetup setup;
  setup.dataset.name = "synthetic";
  setup.benchmark.name = "synthetic-benchmark";

  std::vector<std::string> common;
  for (int i = 0; i < 120; ++i) common.push_back(src.next());
  auto common_run = [&](std::size_t n) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) {
      out.push_back(common[static_cast<std::size_t>(uniform01(rng) * static_cast<double>(common.size()))]);
    }
    return join(out, " ");
  };

  auto add_pair = [&](const std::string& id, const std::string& key, const std::string& response) {
    setup.dataset.entries.push_back({"please explain topic " + key, response, id, std::nullopt});
    setup.benchmark.entries.push_back({"tell me about " + key, response, id, std::nullopt});
  };

  std::size_t pair_no = 0;
  for (std::size_t f = 0; f < opts.families; ++f) {
    const auto p = src.next(), a = src.next(), b = src.next();
    const auto shared = words(src, 4);
    const auto shared_toks = split_ws(shared);
    const auto majority_tail = words(src, opts.tail_length);
    const auto deviated_tail = words(src, opts.tail_length);
    const auto bridge = words(src, opts.bridge_length);
    const std::string majority = p + " " + a + " " + shared + " " + majority_tail;
    const std::string deviated = p + " " + b + " " + deviated_tail;
    for (int m = 0; m < 2; ++m) {
      auto id = make_id("maj", pair_no++);
      add_pair(id, src.next(), majority);
      setup.majority_ids.insert(id);
    }
    auto id = make_id("dev", pair_no++);
    add_pair(id, src.next(), deviated);
    setup.deviated_ids.insert(id);
    for (std::size_t c = 0; c < opts.bridge_copies; ++c) {
      setup.base_corpus.push_back(common_run(6) + " " + shared_toks[2] + " " + shared_toks[3] + " " + bridge + " " +
                                  common_run(6));
    }
  }
  for (std::size_t i = 0; i < opts.plain; ++i) {
    auto id = make_id("pln", pair_no++);
    add_pair(id, src.next(), words(src, opts.tail_length + 2));
    setup.plain_ids.insert(id);
  }
  for (std::size_t d = 0; d < opts.base_documents; ++d) setup.base_corpus.push_back(common_run(12));

  auto base = std::make_shared<ToyModel>(toy_train(setup.base_corpus, opts.order, opts.smoothing));
  SFTDataset training = setup.dataset;
  if (opts.completion_demos) {
    for (const auto& e : setup.dataset.entries) {
      training.entries.push_back({build_completion_prompt(preserve_pwp(e.instruction, 0.5, 0).masked, e.response),
                                  e.instruction, "cmp-" + e.id, std::nullopt});
    }
  }
  setup.ft_model = std::make_shared<const ToyModel>(toy_finetune(*base, training, opts.finetune_weight));
  setup.base_model = std::move(base);
  return setup;
}

}  // namespace sftx
