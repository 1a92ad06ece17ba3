#include <doctest.h>

#include <filesystem>

#include "dtreg/io.hpp"
#include "dtreg/text.hpp"
#include "dtreg/vocab.hpp"

namespace fs = std::filesystem;
using namespace dtreg;

TEST_CASE("trim and case helpers") {
  CHECK(text::trim("  a b \n") == "a b");
  CHECK(text::trim("") == "");
  CHECK(text::lower("MiXeD") == "mixed");
  CHECK(text::icontains("Decision Tree", "tree"));
  CHECK_FALSE(text::icontains("Decision", "trees"));
}

TEST_CASE("whole-word containment ignores substrings") {
  CHECK(text::icontains_word("The model used Age as input.", "age"));
  CHECK_FALSE(text::icontains_word("The page count", "age"));
  CHECK(text::icontains_word("heart rate, blood pressure", "heart rate"));
}

TEST_CASE("normalize_name collapses separators") {
  CHECK(text::normalize_name("Heart_Rate") == "heart rate");
  CHECK(text::normalize_name("  heart -  rate ") == "heart rate");
  CHECK(text::normalize_name("BMI") == "bmi");
}

TEST_CASE("word_count, split, join") {
  CHECK(text::word_count("one  two\tthree\n") == 3);
  CHECK(text::word_count("") == 0);
  const auto parts = text::split("a,b,,c", ',');
  REQUIRE(parts.size() == 4);
  CHECK(parts[2].empty());
  CHECK(text::join(parts, "|") == "a|b||c");
}

TEST_CASE("sha256 of known inputs") {
  CHECK(io::sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(io::sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("csv round trip with quoting") {
  const io::CsvRow header{"a", "b"};
  const std::vector<io::CsvRow> rows{{"plain", "with,comma"}, {"quote\"d", "multi\nline"}};
  const auto csv = io::to_csv(header, rows);
  const auto parsed = io::parse_csv(csv);
  REQUIRE(parsed.size() == 3);
  CHECK(parsed[0] == header);
  CHECK(parsed[1] == rows[0]);
  CHECK(parsed[2] == rows[1]);
}

TEST_CASE("atomic writes and jsonl") {
  const auto dir = fs::temp_directory_path() / "dtreg_io_test";
  fs::remove_all(dir);
  const auto p = dir / "sub" / "rows.jsonl";
  io::write_jsonl_atomic(p, {{{"k", 1}}, {{"k", 2}}});
  io::append_jsonl(p, {{"k", 3}});
  const auto rows = io::read_jsonl(p);
  REQUIRE(rows.size() == 3);
  CHECK(rows[2]["k"] == 3);
  for (const auto& e : fs::directory_iterator(dir / "sub")) {
    CHECK(e.path().filename() == "rows.jsonl");
  }
  fs::remove_all(dir);
}

TEST_CASE("closed vocabularies") {
  CHECK(kQuerySectors.size() == 12);
  CHECK(kRdcTokens.size() == 13);
  CHECK(kRegulations.size() == 13);
  CHECK(is_sector_token("none_of_the_above"));
  CHECK_FALSE(is_query_sector("none_of_the_above"));
  CHECK(is_rdc_token("Other"));
  CHECK_FALSE(is_rdc_token("other"));
  CHECK(is_regulation("ePrivacy Directive"));
  CHECK_FALSE(is_regulation("CPPA"));
  CHECK(find_regulation("GDPR")->reference_year == 2018);
  CHECK(find_regulation("FERPA")->jurisdiction == Jurisdiction::US);
}
