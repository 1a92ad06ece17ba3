#include "dtreg/legal.hpp"

#include <algorithm>
#include <stdexcept>

#include "dtreg/error.hpp"
#include "dtreg/io.hpp"
#include "dtreg/text.hpp"
#include "dtreg/vocab.hpp"

namespace dtreg::legal {

HeadingGrammar HeadingGrammar::standard() {
  HeadingGrammar g;
  g.rules.push_back({std::regex(R"(^[ \t]*Article[ \t]+([0-9]+[a-z]?)((?:\([0-9A-Za-z]+\))*))"),
                     "Article ", false});
  g.rules.push_back({std::regex(R"(^[ \t]*§[ \t]*([0-9][0-9A-Za-z.\-]*)((?:\([0-9A-Za-z]+\))*))"), "§ ", false});
  g.rules.push_back({std::regex(R"(^[ \t]*Recital[ \t]+([0-9]+))"), "Recital ", true});
  return g;
}

Segmentation segment_passages(std::string_view document, std::string_view regulation,
                              const HeadingGrammar& grammar) {
  struct Heading {
    std::size_t offset;
    std::string ref;
    bool recital;
  };
  std::vector<Heading> headings;

  std::size_t line_start = 0;
  while (line_start <= document.size()) {
    std::size_t line_end = document.find('\n', line_start);
    if (line_end == std::string_view::npos) line_end = document.size();
    const std::string line(document.substr(line_start, line_end - line_start));
    for (const auto& rule : grammar.rules) {
      std::smatch m;
      if (std::regex_search(line, m, rule.pattern)) {
        std::string ref = rule.prefix + m[1].str();
        if (m.size() > 2) ref += m[2].str();
        headings.push_back({line_start, std::move(ref), rule.is_recital});
        break;
      }
    }
    if (line_end == document.size()) break;
    line_start = line_end + 1;
  }

  Segmentation out;
  if (headings.empty()) {
    out.preamble_end = document.size();
    out.warnings.push_back(std::string(regulation) + ": no recognized headings; no passages emitted");
    return out;
  }
  out.preamble_end = headings.front().offset;
  for (std::size_t i = 0; i < headings.size(); ++i) {
    const std::size_t begin = headings[i].offset;
    const std::size_t end = i + 1 < headings.size() ? headings[i + 1].offset : document.size();
    SegmentedPassage p;
    p.article_ref = headings[i].ref;
    if (headings[i].recital) p.clause_label = headings[i].ref;
    p.text = std::string(document.substr(begin, end - begin));
    p.begin = begin;
    p.end = end;
    p.checksum = io::sha256_hex(p.text);
    out.passages.push_back(std::move(p));
  }
  return out;
}

json to_json(const LegalPassage& p) {
  return json{{"regulation", p.regulation}, {"article_ref", p.article_ref},
              {"clause_label", p.clause_label}, {"text", p.text},
              {"checksum", p.checksum},       {"rdc_tags", p.rdc_tags}};
}

LegalPassage passage_from_json(const json& j) {
  LegalPassage p;
  p.regulation = j.at("regulation").get<std::string>();
  p.article_ref = j.at("article_ref").get<std::string>();
  p.clause_label = j.value("clause_label", std::string());
  p.text = j.at("text").get<std::string>();
  p.checksum = j.at("checksum").get<std::string>();
  p.rdc_tags = j.at("rdc_tags").get<std::set<std::string>>();
  return p;
}

TagResult parse_passage_tag(std::string_view raw) {
  json doc;
  try {
    doc = json::parse(text::trim(raw));
  } catch (const json::parse_error&) {
    throw ContractViolation("legal tag: payload is not JSON", std::string(raw));
  }
  if (!doc.is_object() || doc.size() != 3 || !doc.contains("regulated") ||
      !doc.contains("classes") || !doc.contains("rationale")) {
    throw ContractViolation("legal tag: expected exactly {regulated, classes, rationale}",
                            std::string(raw));
  }
  if (!doc["regulated"].is_boolean() || !doc["classes"].is_array() || !doc["rationale"].is_string()) {
    throw ContractViolation("legal tag: field types do not match the schema", std::string(raw));
  }
  TagResult t;
  t.regulated = doc["regulated"].get<bool>();
  for (const auto& c : doc["classes"]) {
    if (!c.is_string() || !is_rdc_token(c.get<std::string>())) {
      throw ContractViolation("legal tag: class outside the RDC vocabulary: " + c.dump(),
                              std::string(raw));
    }
    t.classes.push_back(c.get<std::string>());
  }
  t.rationale = doc["rationale"].get<std::string>();
  if (text::word_count(t.rationale) > 15) {
    throw ContractViolation("legal tag: rationale exceeds 15 words", std::string(raw));
  }
  if (t.regulated && t.classes.empty()) {
    throw ContractViolation("legal tag: regulated fragment without classes", std::string(raw));
  }
  return t;
}

std::optional<LegalPassage> tag_passage(std::string_view raw, std::string_view regulation,
                                        const SegmentedPassage& passage) {
  const TagResult t = parse_passage_tag(raw);
  if (!t.regulated) return std::nullopt;
  if (passage.article_ref.empty()) {
    throw DataIntegrityError("retained passage without article reference");
  }
  LegalPassage p;
  p.regulation = std::string(regulation);
  p.article_ref = passage.article_ref;
  p.clause_label = passage.clause_label;
  p.text = passage.text;
  p.checksum = passage.checksum;
  p.rdc_tags.insert(t.classes.begin(), t.classes.end());
  return p;
}

int reference_year(std::string_view regulation) {
  const auto meta = find_regulation(regulation);
  if (!meta) throw std::out_of_range("regulation not in catalog: " + std::string(regulation));
  return meta->reference_year;
}

std::string canonical_ref(std::string_view ref, std::string_view regulation) {
  std::string s(text::trim(ref));
  if (!regulation.empty() && text::lower(s).rfind(text::lower(regulation), 0) == 0) {
    s.erase(0, regulation.size());
  }
  // collapse whitespace
  std::string c;
  for (char ch : text::trim(s)) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!c.empty() && c.back() != ' ') c.push_back(' ');
    } else {
      c.push_back(ch);
    }
  }
  auto expand = [&](std::string_view abbrev, std::string_view full) {
    if (c.rfind(abbrev, 0) == 0) {
      std::string rest(text::trim(std::string_view(c).substr(abbrev.size())));
      c = std::string(full) + rest;
    }
  };
  expand("Art.", "Article ");
  expand("Article", "Article ");
  expand("Sec.", "§ ");
  expand("Section", "§ ");
  expand("§", "§ ");
  // drop spaces before parenthesized sub-clauses: "Article 9 (1)" -> "Article 9(1)"
  std::string out;
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (c[i] == ' ' && i + 1 < c.size() && c[i + 1] == '(') continue;
    out.push_back(c[i]);
  }
  return out;
}

bool ref_matches(std::string_view cited, std::string_view passage_ref, std::string_view regulation) {
  const std::string a = canonical_ref(cited, regulation);
  const std::string b = canonical_ref(passage_ref, regulation);
  if (a.empty() || b.empty()) return false;
  if (a == b) return true;
  return a.size() > b.size() && a.compare(0, b.size(), b) == 0 && a[b.size()] == '(';
}

Catalog::Catalog(std::vector<LegalPassage> passages) : passages_(std::move(passages)) {
  for (const auto& p : passages_) {
    if (p.article_ref.empty()) throw DataIntegrityError("catalog passage without article_ref");
    if (p.rdc_tags.empty()) throw DataIntegrityError("catalog passage without RDC tags");
    for (const auto& t : p.rdc_tags) {
      if (!is_rdc_token(t)) throw DataIntegrityError("catalog tag outside vocabulary: " + t);
    }
  }
}

std::vector<const LegalPassage*> Catalog::for_regulation(std::string_view regulation) const {
  std::vector<const LegalPassage*> out;
  for (const auto& p : passages_) {
    if (p.regulation == regulation) out.push_back(&p);
  }
  return out;
}

std::vector<const LegalPassage*> Catalog::tagged(std::string_view regulation,
                                                 std::string_view rdc) const {
  std::vector<const LegalPassage*> out;
  for (const auto& p : passages_) {
    if (p.regulation == regulation && p.rdc_tags.count(std::string(rdc))) out.push_back(&p);
  }
  return out;
}

const LegalPassage* Catalog::find(std::string_view regulation, std::string_view article_ref) const {
  for (const auto& p : passages_) {
    if (p.regulation == regulation && p.article_ref == article_ref) return &p;
  }
  return nullptr;
}

std::vector<std::string> Catalog::regulations_tagging(std::string_view rdc) const {
  std::vector<std::string> out;
  for (const auto& meta : kRegulations) {
    if (!tagged(meta.id, rdc).empty()) out.emplace_back(meta.id);
  }
  return out;
}

std::size_t Catalog::count_tagged(std::string_view rdc) const {
  return static_cast<std::size_t>(std::count_if(passages_.begin(), passages_.end(), [&](const auto& p) {
    return p.rdc_tags.count(std::string(rdc)) > 0;
  }));
}

void Catalog::save(const std::filesystem::path& jsonl) const {
  std::vector<json> rows;
  rows.reserve(passages_.size());
  for (const auto& p : passages_) rows.push_back(to_json(p));
  io::write_jsonl_atomic(jsonl, rows);
}

Catalog Catalog::load(const std::filesystem::path& jsonl) {
  std::vector<LegalPassage> ps;
  for (const auto& row : io::read_jsonl(jsonl)) ps.push_back(passage_from_json(row));
  return Catalog(std::move(ps));
}

std::string regulation_table_csv() {
  std::vector<io::CsvRow> rows;
  for (const auto& r : kRegulations) {
    rows.push_back({std::string(r.id), std::string(to_string(r.jurisdiction)),
                    std::to_string(r.reference_year)});
  }
  return io::to_csv({"regulation", "jurisdiction", "E_r"}, rows);
}

std::filesystem::path store_source_document(const std::filesystem::path& dir,
                                            std::string_view document) {
  const auto path = dir / (io::sha256_hex(document) + ".txt");
  if (!std::filesystem::exists(path)) io::write_file_atomic(path, document);
  return path;
}

}  // namespace dtreg::legal
