#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace sftx {

// A low-confidence greedy step where an alternate branch is spawned.
struct BranchPoint {
  std::size_t step_index = 0;
  std::string greedy_token;
  double greedy_prob = 0.0;
  std::string second_token;
  double second_prob = 0.0;

  bool operator==(const BranchPoint&) const = default;
};

enum class SourceModel { sft, base };
enum class BranchKind { greedy, forced };

struct Branch {
  SourceModel source_model = SourceModel::sft;
  BranchKind kind = BranchKind::greedy;
  std::optional<BranchPoint> origin;
  std::vector<std::string> tokens;
  std::string text;

  bool operator==(const Branch&) const = default;
};

struct ExtractionResult {
  std::string query_id;
  std::string query;
  Branch closest;
  Branch outlier;
  bool deduplicated = false;
  std::size_t sft_branches = 0;
  std::size_t base_branches = 0;

  // Candidate texts that get scored/exported: one when deduplicated, else two.
  std::vector<std::string> candidates() const;
};

nlohmann::json to_json(const BranchPoint& p);
BranchPoint branch_point_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Branch& b);
Branch branch_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExtractionResult& r);
ExtractionResult extraction_result_from_json(const nlohmann::json& j);

}  // namespace sftx
