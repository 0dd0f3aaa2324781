#include <doctest.h>

#include <fstream>

#include "oracles.hpp"
#include "sftx/datamodel.hpp"
#include "sftx/text.hpp"

using namespace sftx;

namespace {

void write(const std::filesystem::path& p, const std::string& s) {
  std::ofstream(p, std::ios::binary) << s;
}

std::string load_error(const std::string& content) {
  oracle::TempDir tmp;
  write(tmp.path / "d.jsonl", content);
  try {
    load_dataset(tmp.path / "d.jsonl");
  } catch (const FormatError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_SUITE("datamodel") {
  TEST_CASE("two-line file loads in order") {
    oracle::TempDir tmp;
    write(tmp.path / "d.jsonl",
          "{\"instruction\":\"add 1+1\",\"response\":\"2\"}\n{\"instruction\":\"say hi\",\"response\":\"hi\"}\n");
    auto ds = load_dataset(tmp.path / "d.jsonl");
    REQUIRE(ds.entries.size() == 2);
    CHECK(ds.entries[0].instruction == "add 1+1");
    CHECK(ds.entries[0].response == "2");
    CHECK(ds.entries[1].instruction == "say hi");
    CHECK(ds.entries[0].id == "000000");
    CHECK(ds.entries[1].id == "000001");
  }

  TEST_CASE("empty file gives an empty dataset") {
    oracle::TempDir tmp;
    write(tmp.path / "d.jsonl", "");
    CHECK(load_dataset(tmp.path / "d.jsonl").entries.empty());
  }

  TEST_CASE("errors name the line or the id") {
    const std::string ok = "{\"instruction\":\"a\",\"response\":\"b\"}\n";
    CHECK(load_error(ok + ok + "{\"instruction\":\"c\"}\n").find("line 3: missing field response") != std::string::npos);
    CHECK(load_error(ok + "{not json\n").find("line 2: malformed JSON") != std::string::npos);
    CHECK(load_error("{\"instruction\":\"a\",\"response\":\"b\",\"id\":\"x\"}\n"
                     "{\"instruction\":\"c\",\"response\":\"d\",\"id\":\"x\"}\n") == "duplicate id: x");
  }

  TEST_CASE("blank lines are skipped but counted") {
    const std::string ok = "{\"instruction\":\"a\",\"response\":\"b\"}\n";
    CHECK(load_error(ok + "\n{\"response\":\"c\"}\n").find("line 3: missing field instruction") != std::string::npos);
  }

  TEST_CASE("round trip preserves unicode bytes") {
    oracle::TempDir tmp;
    SFTDataset ds;
    ds.name = "d";
    ds.entries.push_back({"say hi", "hi", "a", std::nullopt});
    ds.entries.push_back({"traduis « bonjour » 日本語", "héllo 👋", "b", std::string("chat")});
    save_dataset(ds, tmp.path / "out.jsonl");
    auto again = load_dataset(tmp.path / "out.jsonl");
    CHECK(again.entries == ds.entries);
    save_dataset(again, tmp.path / "out2.jsonl");
    CHECK(read_text(tmp.path / "out.jsonl") == read_text(tmp.path / "out2.jsonl"));
  }

  TEST_CASE("unwritable path raises an I/O error") {
    SFTDataset ds;
    ds.entries.push_back({"a", "b", "0", std::nullopt});
    CHECK_THROWS_AS(save_dataset(ds, "/nonexistent-dir/x/y.jsonl"), IoError);
  }

  TEST_CASE("concat_entry normalizes whitespace at the seam") {
    CHECK(concat_entry({"say hi", "hi", "0", std::nullopt}) == "say hi hi");
    CHECK(concat_entry({"a", "b", "0", std::nullopt}) == "a b");
    const auto s = concat_entry({"tell me  \t\n", "  ok", "0", std::nullopt});
    CHECK(s == "tell me ok");
  }

  TEST_CASE("validate rejects empty sides") {
    SFTDataset ds;
    ds.entries.push_back({"a", "", "0", std::nullopt});
    CHECK_THROWS_AS(ds.validate(), FormatError);
  }

  TEST_CASE("manifest json round trip") {
    RunManifest m{42, "abc", kToolVersion, "2024-01-01T00:00:00Z", "2024-01-01T00:00:01Z"};
    auto back = manifest_from_json(to_json(m));
    CHECK(back.seed == 42);
    CHECK(back.config_digest == "abc");
    CHECK(back.finished_at == m.finished_at);
  }

  TEST_CASE("text helpers") {
    CHECK(trim("  a b \n") == "a b");
    CHECK(split_ws(" a\tb  c\n").size() == 3);
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(utf8_boundaries("aé").size() == 3);
    CHECK(substitute("x{a}y{a}", "{a}", "1") == "x1y1");
    CHECK(mix_seed(1, 2) != mix_seed(2, 1));
  }
}
