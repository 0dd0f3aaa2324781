#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "sftx/backend.hpp"
#include "sftx/extraction_types.hpp"

namespace sftx {

enum class DistanceMetric { bleu_complement, embed_complement };

std::string to_string(DistanceMetric m);
DistanceMetric distance_from_string(std::string_view s);

struct DdeConfig {
  double tau = 0.8;
  int mbr = 10;
  int max_tokens = 512;
  int top_k = 5;  // alternatives recorded per greedy step
  DistanceMetric distance = DistanceMetric::bleu_complement;
  bool parallel_branches = true;

  void validate() const;
};

nlohmann::json to_json(const DdeConfig& c);
DdeConfig dde_config_from_json(const nlohmann::json& j);

// Symmetric, non-negative distance between two branch texts.
using DistanceFn = std::function<double(const std::string&, const std::string&)>;
DistanceFn make_distance(DistanceMetric metric);

struct VanillaResult {
  std::vector<std::string> candidates;
  std::size_t failures = 0;
};

// Candidate 0 is the greedy completion; the rest are seeded samples.
VanillaResult vanilla_extract(const Backend& ft, std::string_view query, int budget,
                              const SamplingParams& sampling, std::uint64_t seed, int max_tokens = 512);

// Front-to-back scan for steps whose greedy probability is below tau, stopping at mbr.
std::vector<BranchPoint> identify_branch_points(const TrackedGeneration& gen, double tau, int mbr);

struct BranchSets {
  std::vector<Branch> sft;
  std::vector<Branch> base;
};

BranchSets generate_branches(const Backend& ft, const Backend& base, std::string_view query,
                             const TrackedGeneration& gen, const std::vector<BranchPoint>& points,
                             int max_tokens, bool parallel = true);

struct Representatives {
  std::size_t closest = 0;
  std::size_t outlier = 0;
};

// cross[i][j] = distance(S_i, B_j); within[i][j] = distance(S_i, S_j).
Representatives select_from_distances(const std::vector<std::vector<double>>& cross,
                                      const std::vector<std::vector<double>>& within);
Representatives select_representatives(const std::vector<Branch>& sft, const std::vector<Branch>& base,
                                       const DistanceFn& distance);

ExtractionResult dde_extract(const Backend& ft, const Backend& base, std::string_view query,
                             const DdeConfig& cfg, std::string_view query_id = "");

// Teacher-forced next-token accuracy of `backend` against ground_truth after input.
double ntc(const Backend& backend, std::string_view input, std::span<const std::string> ground_truth);

}  // namespace sftx
