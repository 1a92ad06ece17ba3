#include <doctest.h>

#include "dtreg/error.hpp"
#include "dtreg/gates.hpp"
#include "dtreg/text.hpp"
#include "dtreg/vocab.hpp"
#include "oracles.hpp"

using namespace dtreg;
using namespace dtreg::gates;
using nlohmann::json;

namespace {

constexpr int kMutations = 12000;

std::vector<std::string> sector_vocab() {
  std::vector<std::string> v(kQuerySectors.begin(), kQuerySectors.end());
  v.emplace_back(kNoneOfTheAbove);
  return v;
}

std::vector<std::string> rdc_vocab() { return {kRdcTokens.begin(), kRdcTokens.end()}; }

void check_tally(const testing::FuzzTally& t) {
  INFO("accepted=" << t.accepted << " rejected=" << t.rejected);
  CHECK(t.coerced == 0);
  CHECK(t.wrong_exception == 0);
  CHECK(t.accepted + t.rejected >= 10000);
  CHECK(t.rejected > t.accepted / 10);
}

const char* kAbstract =
    "We train a decision tree on patient records. The tree splits on age and blood pressure. "
    "Heart rate was also used as a feature.";

}  // namespace

TEST_CASE("relevance accepts exactly two tokens") {
  CHECK(parse_relevance("Relevant") == Relevance::Relevant);
  CHECK(parse_relevance("  Not relevant\n") == Relevance::NotRelevant);
  for (const char* bad : {"relevant", "Relevant.", "Not Relevant", "\"Relevant\"", "Yes", "", "Relevant Relevant"}) {
    CHECK_THROWS_AS(parse_relevance(bad), ContractViolation);
  }
}

TEST_CASE("sector accepts the 13 tokens only") {
  for (const auto& s : sector_vocab()) CHECK(parse_sector(s) == s);
  for (const char* bad : {"Insurance", "banking finance", "manufacturing_industry", "none", "insurance."}) {
    CHECK_THROWS_AS(parse_sector(bad), ContractViolation);
  }
}

TEST_CASE("predictor validation gate maps violations to Not valid") {
  CHECK(parse_predictor_validation("Valid") == Validity::Valid);
  CHECK(parse_predictor_validation("Not valid") == Validity::NotValid);
  const auto g = gate_predictor_validation("VALID");
  CHECK(g.verdict == Validity::NotValid);
  CHECK(g.contract_violation);
  CHECK_FALSE(gate_predictor_validation("Valid").contract_violation);
}

TEST_CASE("predictor extraction keeps grounded mentions and records drops") {
  const json reply = {{"predictors",
                       {{{"name", "age"}, {"evidence", "The tree splits on age and blood pressure."}},
                        {{"name", "blood pressure"}, {"evidence", "The tree splits on age and blood pressure."}},
                        {{"name", "Age"}, {"evidence", "The tree splits on age and blood pressure."}},
                        {{"name", "income"}, {"evidence", "Income was used."}},
                        {{"name", "heart rate"}, {"evidence", "The tree splits on age and blood pressure."}},
                        {{"name", " "}, {"evidence", "x"}},
                        {{"name", "bmi"}, {"evidence", ""}}}}};
  const auto p = parse_predictors(reply.dump(), kAbstract, "10.1/x");
  REQUIRE(p.mentions.size() == 2);
  CHECK(p.mentions[0].name == "age");
  CHECK(p.mentions[0].doi == "10.1/x");
  CHECK(p.mentions[1].name == "blood pressure");
  REQUIRE(p.dropped.size() == 5);
  CHECK(p.dropped[0].reason == "duplicate predictor name");
  CHECK(p.dropped[1].reason == "evidence sentence not found in abstract");
  CHECK(p.dropped[2].reason == "predictor name not found in evidence sentence");
  CHECK(p.dropped[3].reason == "empty predictor name");
  CHECK(p.dropped[4].reason == "empty evidence sentence");
}

TEST_CASE("predictor extraction rejects schema deviations") {
  for (const char* bad : {R"([])", R"({"predictors": {}})", R"({"predictors": [], "extra": 1})",
                          R"({"predictors": [{"name": "age"}]})", R"({"predictors": [{"name": 1, "evidence": "x"}]})",
                          R"({"predictors": [{"name": "a", "evidence": "b", "note": "c"}]})", "predictors: age"}) {
    CHECK_THROWS_AS(parse_predictors(bad, kAbstract), ContractViolation);
  }
  CHECK(parse_predictors(R"({"predictors": []})", kAbstract).mentions.empty());
}

TEST_CASE("rdc mapping enforces vocabulary and rationale length") {
  const auto a = parse_rdc(R"({"class": "Health_Clinical", "rationale": "Blood pressure is a clinical measurement."})");
  CHECK(a.rdc == "Health_Clinical");
  CHECK_THROWS_AS(parse_rdc(R"({"class": "Health", "rationale": "x"})"), ContractViolation);
  CHECK_THROWS_AS(parse_rdc(R"({"class": "Other"})"), ContractViolation);
  CHECK_THROWS_AS(parse_rdc(R"({"class": "Other", "rationale": "one two three four five six seven eight nine ten eleven twelve thirteen fourteen fifteen sixteen"})"),
                  ContractViolation);
}

TEST_CASE("sector-match filter keeps only labels equal to the searched sector") {
  ingest::SourceRecord a, b, c;
  a.doi = "a", a.searched_sector = "insurance";
  b.doi = "b", b.searched_sector = "insurance";
  c.doi = "c", c.searched_sector = "social_media";
  const auto r = apply_sector_match_filter({{"a", "insurance"}, {"b", "none_of_the_above"}}, {a, b, c});
  REQUIRE(r.included.size() == 1);
  CHECK(r.included[0].doi == "a");
  CHECK(r.unlabeled == 1);
  CHECK(r.assigned_counts.at("none_of_the_above") == 1);
}

TEST_CASE("fuzz: relevance") { check_tally(testing::fuzz_contract("relevance", kMutations, 101)); }

TEST_CASE("fuzz: sector") { check_tally(testing::fuzz_contract("sector", kMutations, 102)); }

TEST_CASE("fuzz: predictor validation") { check_tally(testing::fuzz_contract("predictor-validation", kMutations, 103)); }

TEST_CASE("fuzz: predictor extraction") { check_tally(testing::fuzz_contract("predictors", kMutations, 104)); }

TEST_CASE("fuzz: rdc mapping") { check_tally(testing::fuzz_contract("rdc", kMutations, 105)); }
