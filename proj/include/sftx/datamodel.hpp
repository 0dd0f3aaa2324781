#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace sftx {

struct InstructionResponsePair {
  std::string instruction;
  std::string response;
  std::string id;
  std::optional<std::string> domain_tag;

  bool operator==(const InstructionResponsePair&) const = default;
};

struct SFTDataset {
  std::string name;
  std::vector<InstructionResponsePair> entries;

  bool operator==(const SFTDataset&) const = default;

  // Throws FormatError on empty sides or duplicate ids.
  void validate() const;
  const InstructionResponsePair* find(std::string_view id) const;
};

struct RunManifest {
  std::uint64_t seed = 0;
  std::string config_digest;
  std::string tool_version;
  std::string started_at;
  std::string finished_at;
};

inline constexpr const char* kToolVersion = "0.3.0";

// Reads one JSON object per line. Blank lines are skipped but still counted.
SFTDataset load_dataset(const std::filesystem::path& path);
void save_dataset(const SFTDataset& dataset, const std::filesystem::path& path);

// Parses a single JSONL record; `line_no` only feeds error messages.
InstructionResponsePair parse_pair(const nlohmann::json& j, std::size_t line_no);
nlohmann::json to_json(const InstructionResponsePair& pair);

// instruction + " " + response, both sides trimmed.
std::string concat_entry(const InstructionResponsePair& pair);

nlohmann::json to_json(const RunManifest& m);
RunManifest manifest_from_json(const nlohmann::json& j);
void save_manifest(const RunManifest& m, const std::filesystem::path& path);
std::string utc_timestamp();

// Generic JSONL helpers shared by the CLI and campaign writers.
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::vector<nlohmann::json>& rows, const std::filesystem::path& path);
void write_text(const std::string& text, const std::filesystem::path& path);
std::string read_text(const std::filesystem::path& path);

}  // namespace sftx
