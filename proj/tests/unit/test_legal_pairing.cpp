#include <doctest.h>

#include "dtreg/error.hpp"
#include "dtreg/io.hpp"
#include "dtreg/legal.hpp"
#include "dtreg/pairing.hpp"
#include "dtreg/text.hpp"
#include "oracles.hpp"

using namespace dtreg;
using namespace dtreg::legal;
using namespace dtreg::pairing;
using nlohmann::json;

namespace {

const char* kGdpr =
    "REGULATION (EU) 2016/679\n"
    "Preamble text.\n"
    "Recital 35\n"
    "Personal data concerning health should include all data pertaining to health status.\n"
    "Article 4\n"
    "Definitions of personal data and biometric data.\n"
    "Article 9(1)\n"
    "Processing of data concerning health or biometric data shall be prohibited.\n";

LegalPassage passage(std::string reg, std::string ref, std::set<std::string> tags, std::string text = "Text.") {
  LegalPassage p;
  p.regulation = std::move(reg);
  p.article_ref = std::move(ref);
  p.text = std::move(text);
  p.checksum = "x";
  p.rdc_tags = std::move(tags);
  return p;
}

Catalog small_catalog() {
  return Catalog({passage("GDPR", "Article 9", {"Health_Clinical", "Biometric"}),
                  passage("GDPR", "Article 4", {"Identifier_PII"}, "Data such as age and location."),
                  passage("HIPAA", "§ 164.514", {"Health_Clinical", "Identifier_PII"}),
                  passage("NIS2", "Article 21", {"Operational_Business"})});
}

}  // namespace

TEST_CASE("segmentation splits on headings and keeps the preamble out") {
  const auto s = segment_passages(kGdpr, "GDPR");
  REQUIRE(s.passages.size() == 3);
  CHECK(s.passages[0].article_ref == "Recital 35");
  CHECK(s.passages[0].clause_label == "Recital 35");
  CHECK(s.passages[1].article_ref == "Article 4");
  CHECK(s.passages[2].article_ref == "Article 9(1)");
  CHECK(s.preamble_end == std::string(kGdpr).find("Recital"));
  std::string rebuilt = std::string(kGdpr).substr(0, s.preamble_end);
  for (const auto& p : s.passages) {
    CHECK(p.checksum == io::sha256_hex(p.text));
    rebuilt += p.text;
  }
  CHECK(rebuilt == kGdpr);
}

TEST_CASE("US section headings and documents without headings") {
  const auto s = segment_passages("Title\n§ 164.514 De-identification\nbody\n§164.502(a) Uses\nmore\n", "HIPAA");
  REQUIRE(s.passages.size() == 2);
  CHECK(s.passages[0].article_ref == "§ 164.514");
  CHECK(s.passages[1].article_ref == "§ 164.502(a)");
  const auto none = segment_passages("Just prose without structure.", "ECPA");
  CHECK(none.passages.empty());
  CHECK(none.warnings.size() == 1);
}

TEST_CASE("passage tags: strict schema") {
  const auto t = parse_passage_tag(R"({"regulated": true, "classes": ["Health_Clinical"], "rationale": "Health data."})");
  CHECK(t.regulated);
  CHECK(t.classes == std::vector<std::string>{"Health_Clinical"});
  for (const char* bad : {R"({"regulated": "yes", "classes": [], "rationale": ""})",
                          R"({"regulated": true, "classes": [], "rationale": "x"})",
                          R"({"regulated": true, "classes": ["Health"], "rationale": "x"})",
                          R"({"regulated": false, "classes": [], "rationale": "x", "extra": 1})",
                          R"({"regulated": false, "classes": []})", "regulated: true"}) {
    CHECK_THROWS_AS(parse_passage_tag(bad), ContractViolation);
  }
  const auto seg = segment_passages(kGdpr, "GDPR");
  CHECK_FALSE(tag_passage(R"({"regulated": false, "classes": [], "rationale": "Recital only."})", "GDPR", seg.passages[0]));
  const auto kept = tag_passage(R"({"regulated": true, "classes": ["Biometric"], "rationale": "Biometrics."})", "GDPR",
                                seg.passages[2]);
  REQUIRE(kept);
  CHECK(kept->rdc_tags == std::set<std::string>{"Biometric"});
  CHECK(kept->checksum == seg.passages[2].checksum);
}

TEST_CASE("reference canonicalization and matching") {
  CHECK(canonical_ref("Art. 9", "GDPR") == "Article 9");
  CHECK(canonical_ref("GDPR Article 9 (1)", "GDPR") == "Article 9(1)");
  CHECK(canonical_ref("Sec. 164.514", "HIPAA") == "§ 164.514");
  CHECK(canonical_ref("Section 164.514", "HIPAA") == "§ 164.514");
  CHECK(ref_matches("Article 9(1)(a)", "Article 9", "GDPR"));
  CHECK(ref_matches("art. 9", "Article 9", "GDPR") == false);
  CHECK_FALSE(ref_matches("Article 90", "Article 9", "GDPR"));
  CHECK_FALSE(ref_matches("Article 9", "Article 9(1)", "GDPR"));
  CHECK_FALSE(ref_matches("", "Article 9", "GDPR"));
}

TEST_CASE("catalog rejects untagged or unreferenced passages") {
  CHECK_THROWS_AS(Catalog({passage("GDPR", "", {"Other"})}), DataIntegrityError);
  CHECK_THROWS_AS(Catalog({passage("GDPR", "Article 1", {})}), DataIntegrityError);
  CHECK_THROWS_AS(Catalog({passage("GDPR", "Article 1", {"Health"})}), DataIntegrityError);
  const auto c = small_catalog();
  CHECK(c.regulations_tagging("Health_Clinical") == std::vector<std::string>{"HIPAA", "GDPR"});
  CHECK(c.regulations_tagging("Other").empty());
  CHECK(c.count_tagged("Identifier_PII") == 2);
}

TEST_CASE("candidate pairs join predictors to tagging regulations") {
  const auto cat = small_catalog();
  const std::vector<gates::PredictorMention> ms = {{"d1", "heart rate", "e", "Health_Clinical", ""},
                                                   {"d1", "Heart Rate", "e", "Health_Clinical", ""},
                                                   {"d2", "age", "e", "Demographic", ""},
                                                   {"d3", "noise", "e", std::nullopt, ""},
                                                   {"d4", "tree depth", "e", "Other", ""}};
  const auto pairs = build_candidate_pairs(ms, cat);
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0].regulation == "HIPAA");
  CHECK(pairs[1].regulation == "GDPR");
  CHECK(pairs[1].context == std::vector<std::string>{"Article 9"});
  CHECK(pairs[0].id() == "d1|heart rate|HIPAA");
  const auto ctx = assemble_context("age", "Demographic", "GDPR", cat);
  REQUIRE(ctx.size() == 1);
  CHECK(ctx[0]->article_ref == "Article 4");
  CHECK(render_context(ctx) == "[GDPR Article 4]\nData such as age and location.");
}

TEST_CASE("verdict grammar") {
  SUBCASE("inline refs") {
    const auto v = parse_verdict("STATUS: Regulated\nCONFIDENCE: High\nRATIONALE: Health data. refs: Article 9, Article 4");
    CHECK_FALSE(v.downgraded());
    CHECK(v.regulated_high());
    CHECK(v.rationale == "Health data.");
    CHECK(v.refs == std::vector<std::string>{"Article 9", "Article 4"});
  }
  SUBCASE("refs on a fourth line") {
    const auto v = parse_verdict("STATUS: Regulated\nCONFIDENCE: Medium\nRATIONALE: Health data.\nrefs: Article 9");
    CHECK_FALSE(v.downgraded());
    CHECK(v.confidence == Confidence::Medium);
  }
  SUBCASE("not regulated with none") {
    const auto v = parse_verdict("STATUS: Not Regulated\nCONFIDENCE: Low\nRATIONALE: Out of scope. refs: none");
    CHECK_FALSE(v.downgraded());
    CHECK(v.status == Status::NotRegulated);
  }
  const std::vector<std::pair<std::string, std::string>> bad = {
      {"STATUS: Regulated\nCONFIDENCE: High", "malformed_structure"},
      {"STATUS: Regulated\n\nCONFIDENCE: High\nRATIONALE: x refs: A", "malformed_structure"},
      {"Status: Regulated\nCONFIDENCE: High\nRATIONALE: x refs: A", "malformed_structure"},
      {"STATUS: regulated\nCONFIDENCE: High\nRATIONALE: x refs: A", "invalid_status"},
      {"STATUS: Regulated\nCONFIDENCE: Very high\nRATIONALE: x refs: A", "invalid_confidence"},
      {"STATUS: Regulated\nCONFIDENCE: High\nRATIONALE: x", "missing_refs"},
      {"STATUS: Regulated\nCONFIDENCE: High\nRATIONALE: x refs: none", "regulated_without_refs"},
      {"STATUS: Not Regulated\nCONFIDENCE: High\nRATIONALE: x refs: Article 9", "refs_on_not_regulated"},
  };
  for (const auto& [raw, flag] : bad) {
    const auto v = parse_verdict(raw);
    CHECK(v.parse_flags.count(flag) == 1);
    CHECK(v.status == Status::NotRegulated);
    CHECK(v.confidence == Confidence::Low);
    CHECK(v.refs.empty());
  }
  std::string long_rationale;
  for (int i = 0; i < 41; ++i) long_rationale += "w ";
  CHECK(parse_verdict("STATUS: Regulated\nCONFIDENCE: High\nRATIONALE: " + long_rationale + "refs: Article 9")
            .parse_flags.count("rationale_too_long") == 1);
}

TEST_CASE("refs must resolve inside the pair context") {
  const auto cat = small_catalog();
  const CandidatePair pair{"d1", "heart rate", "Health_Clinical", "GDPR", {"Article 9"}};
  auto ok = resolve_refs(parse_verdict("STATUS: Regulated\nCONFIDENCE: High\nRATIONALE: x. refs: GDPR Art. 9(2)(h)"), pair, cat);
  CHECK(ok.regulated_high());
  auto outside = resolve_refs(parse_verdict("STATUS: Regulated\nCONFIDENCE: High\nRATIONALE: x. refs: Article 4"), pair, cat);
  CHECK(outside.parse_flags.count("unresolved_ref") == 1);
  CHECK_FALSE(outside.regulated_high());
  auto other_reg = resolve_refs(parse_verdict("STATUS: Regulated\nCONFIDENCE: High\nRATIONALE: x. refs: § 164.514"), pair, cat);
  CHECK(other_reg.downgraded());
}

TEST_CASE("retention keeps only Regulated+High") {
  auto rec = [](std::string raw) { return PairRecord{{}, raw, parse_verdict(raw)}; };
  const auto r = retain_final({rec("STATUS: Regulated\nCONFIDENCE: High\nRATIONALE: a refs: A"),
                               rec("STATUS: Regulated\nCONFIDENCE: Medium\nRATIONALE: a refs: A"),
                               rec("STATUS: Not Regulated\nCONFIDENCE: High\nRATIONALE: a refs: none"),
                               rec("garbage")});
  CHECK(r.counts.formed == 4);
  CHECK(r.counts.regulated == 2);
  CHECK(r.counts.not_regulated == 1);
  CHECK(r.counts.downgraded == 1);
  CHECK(r.counts.retained == 1);
  CHECK(r.counts.regulated_by_confidence.at("High") == 1);
  const auto csv = io::parse_csv(summary_csv(r.counts));
  CHECK(csv.back() == io::CsvRow{"Formed", "any", "4"});
}

TEST_CASE("dedup accounting scopes") {
  const std::vector<gates::PredictorMention> ms = {{"d1", "Heart rate", "e", "Health_Clinical", ""},
                                                   {"d2", "heart_rate", "e", "Health_Clinical", ""}};
  const auto pairs = build_candidate_pairs(ms, small_catalog());
  const auto a = dedup_accounting(ms, pairs);
  CHECK(a.per_doi_predictors == 2);
  CHECK(a.global_predictors == 1);
  CHECK(a.per_doi_pairs == 4);
  CHECK(a.global_pairs == 2);
}

TEST_CASE("fuzz: pair verdicts never coerce") {
  const auto t = testing::fuzz_contract("pair-verdict", 12000, 201);
  CHECK(t.coerced == 0);
  CHECK(t.wrong_exception == 0);
  CHECK(t.accepted + t.rejected >= 10000);
  CHECK(t.rejected > 1000);
}

TEST_CASE("fuzz: passage tags never coerce") {
  const auto t = testing::fuzz_contract("passage-tag", 12000, 202);
  CHECK(t.coerced == 0);
  CHECK(t.wrong_exception == 0);
  CHECK(t.accepted + t.rejected >= 10000);
}
