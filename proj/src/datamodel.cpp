#include "sftx/datamodel.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "sftx/text.hpp"

namespace sftx {

using nlohmann::json;

void SFTDataset::validate() const {
  std::set<std::string_view> seen;
  for (const auto& e : entries) {
    if (trim(e.instruction).empty()) throw FormatError("entry " + e.id + ": empty instruction");
    if (trim(e.response).empty()) throw FormatError("entry " + e.id + ": empty response");
    if (!seen.insert(e.id).second) throw FormatError("duplicate id: " + e.id);
  }
}

const InstructionResponsePair* SFTDataset::find(std::string_view id) const {
  for (const auto& e : entries) {
    if (e.id == id) return &e;
  }
  return nullptr;
}

namespace {

std::string padded_index(std::size_t i) {
  std::ostringstream os;
  os << std::setw(6) << std::setfill('0') << i;
  return os.str();
}

std::string required_string(const json& j, const char* field, std::size_t line_no) {
  auto it = j.find(field);
  if (it == j.end()) {
    throw FormatError("line " + std::to_string(line_no) + ": missing field " + field);
  }
  if (!it->is_string()) {
    throw FormatError("line " + std::to_string(line_no) + ": field " + field + " is not a string");
  }
  auto value = trim(it->get<std::string>());
  if (value.empty()) {
    throw FormatError("line " + std::to_string(line_no) + ": empty field " + field);
  }
  return value;
}

}  // namespace

InstructionResponsePair parse_pair(const json& j, std::size_t line_no) {
  if (!j.is_object()) throw FormatError("line " + std::to_string(line_no) + ": not a JSON object");
  InstructionResponsePair p;
  p.instruction = required_string(j, "instruction", line_no);
  p.response = required_string(j, "response", line_no);
  if (auto it = j.find("id"); it != j.end() && !it->is_null()) {
    p.id = it->is_string() ? it->get<std::string>() : it->dump();
  }
  if (auto it = j.find("domain"); it != j.end() && it->is_string()) {
    p.domain_tag = it->get<std::string>();
  }
  return p;
}

json to_json(const InstructionResponsePair& pair) {
  json j = {{"id", pair.id}, {"instruction", pair.instruction}, {"response", pair.response}};
  if (pair.domain_tag) j["domain"] = *pair.domain_tag;
  return j;
}

SFTDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset: " + path.string());
  SFTDataset ds;
  ds.name = path.stem().string();
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FormatError("line " + std::to_string(line_no) + ": malformed JSON (" + e.what() + ")");
    }
    auto pair = parse_pair(j, line_no);
    if (pair.id.empty()) pair.id = padded_index(line_no - 1);
    if (!ids.insert(pair.id).second) throw FormatError("duplicate id: " + pair.id);
    ds.entries.push_back(std::move(pair));
  }
  return ds;
}

void save_dataset(const SFTDataset& dataset, const std::filesystem::path& path) {
  std::vector<json> rows;
  rows.reserve(dataset.entries.size());
  for (const auto& e : dataset.entries) rows.push_back(to_json(e));
  write_jsonl(rows, path);
}

std::string concat_entry(const InstructionResponsePair& pair) {
  return trim(pair.instruction) + " " + trim(pair.response);
}

json to_json(const RunManifest& m) {
  return {{"seed", m.seed},
          {"config_digest", m.config_digest},
          {"tool_version", m.tool_version},
          {"started_at", m.started_at},
          {"finished_at", m.finished_at}};
}

RunManifest manifest_from_json(const json& j) {
  RunManifest m;
  m.seed = j.at("seed").get<std::uint64_t>();
  m.config_digest = j.at("config_digest").get<std::string>();
  m.tool_version = j.value("tool_version", "");
  m.started_at = j.value("started_at", "");
  m.finished_at = j.value("finished_at", "");
  return m;
}

void save_manifest(const RunManifest& m, const std::filesystem::path& path) {
  write_text(to_json(m).dump(2) + "\n", path);
}

std::string utc_timestamp() {
  auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  std::vector<json> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      rows.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw FormatError(path.string() + ": line " + std::to_string(line_no) + ": malformed JSON");
    }
  }
  return rows;
}

void write_jsonl(const std::vector<json>& rows, const std::filesystem::path& path) {
  std::string out;
  for (const auto& r : rows) {
    out += r.dump();
    out += '\n';
  }
  write_text(out, path);
}

void write_text(const std::string& text, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write: " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace sftx
