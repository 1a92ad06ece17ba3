#pragma once

#include <filesystem>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

namespace dtreg::legal {

using nlohmann::json;

// A heading rule matches at the start of a line. The reference is `prefix`
// followed by capture group 1 (and group 2, the parenthesized sub-clauses,
// when present).
struct HeadingRule {
  std::regex pattern;
  std::string prefix;
  bool is_recital = false;
};

struct HeadingGrammar {
  std::vector<HeadingRule> rules;

  // "Article N(x)(y)", "§ 1232g", "Recital N".
  static HeadingGrammar standard();
};

struct SegmentedPassage {
  std::string article_ref;
  std::string clause_label;  // "Recital N" for recitals, else empty
  std::string text;          // verbatim slice of the source document
  std::size_t begin = 0;     // byte offsets into the document
  std::size_t end = 0;
  std::string checksum;      // sha256 of text
};

struct Segmentation {
  std::vector<SegmentedPassage> passages;
  std::size_t preamble_end = 0;  // [0, preamble_end) is unreferenced text
  std::vector<std::string> warnings;
};

Segmentation segment_passages(std::string_view document, std::string_view regulation,
                              const HeadingGrammar& grammar = HeadingGrammar::standard());

struct LegalPassage {
  std::string regulation;
  std::string article_ref;
  std::string clause_label;
  std::string text;
  std::string checksum;
  std::set<std::string> rdc_tags;
};

json to_json(const LegalPassage& p);
LegalPassage passage_from_json(const json& j);

struct TagResult {
  bool regulated = false;
  std::vector<std::string> classes;
  std::string rationale;
};

// Strict schema {regulated, classes, rationale}; throws ContractViolation.
TagResult parse_passage_tag(std::string_view raw);

// nullopt when the fragment is not regulated (dropped from the catalog).
std::optional<LegalPassage> tag_passage(std::string_view raw, std::string_view regulation,
                                        const SegmentedPassage& passage);

int reference_year(std::string_view regulation);

// Canonical form used to compare validator refs with catalog refs: drops a
// leading regulation id, expands "Art."/"Sec.", collapses whitespace.
std::string canonical_ref(std::string_view ref, std::string_view regulation);
// True when `cited` names `passage_ref` or one of its parenthesized sub-clauses.
bool ref_matches(std::string_view cited, std::string_view passage_ref, std::string_view regulation);

class Catalog {
 public:
  Catalog() = default;
  explicit Catalog(std::vector<LegalPassage> passages);

  const std::vector<LegalPassage>& passages() const noexcept { return passages_; }
  std::vector<const LegalPassage*> for_regulation(std::string_view regulation) const;
  std::vector<const LegalPassage*> tagged(std::string_view regulation, std::string_view rdc) const;
  const LegalPassage* find(std::string_view regulation, std::string_view article_ref) const;
  // Regulations (catalog order of kRegulations) with at least one passage tagged `rdc`.
  std::vector<std::string> regulations_tagging(std::string_view rdc) const;
  std::size_t count_tagged(std::string_view rdc) const;

  void save(const std::filesystem::path& jsonl) const;
  static Catalog load(const std::filesystem::path& jsonl);

 private:
  std::vector<LegalPassage> passages_;
};

// regulation,jurisdiction,E_r for all frameworks.
std::string regulation_table_csv();

// Store `document` under its content hash; returns the path written.
std::filesystem::path store_source_document(const std::filesystem::path& dir,
                                            std::string_view document);

}  // namespace dtreg::legal
