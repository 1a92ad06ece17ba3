#include "dtreg/pairing.hpp"

#include <algorithm>

#include "dtreg/io.hpp"
#include "dtreg/text.hpp"
#include "dtreg/vocab.hpp"

namespace dtreg::pairing {

std::string_view to_string(Status s) noexcept {
  return s == Status::Regulated ? "Regulated" : "Not Regulated";
}

std::string_view to_string(Confidence c) noexcept {
  switch (c) {
    case Confidence::High: return "High";
    case Confidence::Medium: return "Medium";
    case Confidence::Low: return "Low";
  }
  return "Low";
}

json to_json(const CandidatePair& p) {
  return json{{"doi", p.doi},         {"predictor", p.predictor}, {"rdc", p.rdc},
              {"regulation", p.regulation}, {"context", p.context}};
}

CandidatePair pair_from_json(const json& j) {
  return {j.at("doi").get<std::string>(), j.at("predictor").get<std::string>(),
          j.at("rdc").get<std::string>(), j.at("regulation").get<std::string>(),
          j.at("context").get<std::vector<std::string>>()};
}

json to_json(const PairVerdict& v) {
  return json{{"status", to_string(v.status)}, {"confidence", to_string(v.confidence)},
              {"rationale", v.rationale},      {"refs", v.refs},
              {"parse_flags", v.parse_flags},  {"downgraded", v.downgraded()}};
}

PairVerdict verdict_from_json(const json& j) {
  PairVerdict v;
  v.status = j.at("status").get<std::string>() == "Regulated" ? Status::Regulated : Status::NotRegulated;
  const auto c = j.at("confidence").get<std::string>();
  v.confidence = c == "High" ? Confidence::High : c == "Medium" ? Confidence::Medium : Confidence::Low;
  v.rationale = j.at("rationale").get<std::string>();
  v.refs = j.at("refs").get<std::vector<std::string>>();
  v.parse_flags = j.at("parse_flags").get<std::set<std::string>>();
  return v;
}

std::vector<const legal::LegalPassage*> assemble_context(std::string_view predictor,
                                                         std::string_view rdc,
                                                         std::string_view regulation,
                                                         const legal::Catalog& catalog) {
  std::vector<const legal::LegalPassage*> out;
  for (const auto* p : catalog.for_regulation(regulation)) {
    if (p->rdc_tags.count(std::string(rdc)) || text::icontains_word(p->text, predictor)) {
      out.push_back(p);
    }
  }
  std::sort(out.begin(), out.end(), [](const auto* a, const auto* b) {
    return a->article_ref < b->article_ref;
  });
  return out;
}

std::string render_context(const std::vector<const legal::LegalPassage*>& passages) {
  std::string out;
  for (const auto* p : passages) {
    if (!out.empty()) out += "\n\n";
    out += "[" + p->regulation + " " + p->article_ref + "]\n";
    out += std::string(text::trim(p->text));
  }
  return out;
}

std::vector<CandidatePair> build_candidate_pairs(const std::vector<gates::PredictorMention>& predictors,
                                                 const legal::Catalog& catalog) {
  std::vector<CandidatePair> out;
  std::set<std::string> seen;
  for (const auto& m : predictors) {
    if (!m.rdc) continue;
    for (const auto& reg : catalog.regulations_tagging(*m.rdc)) {
      const std::string key = m.doi + "|" + text::lower(m.name) + "|" + reg;
      if (!seen.insert(key).second) continue;
      CandidatePair pair{m.doi, m.name, *m.rdc, reg, {}};
      for (const auto* p : assemble_context(m.name, *m.rdc, reg, catalog)) {
        pair.context.push_back(p->article_ref);
      }
      out.push_back(std::move(pair));
    }
  }
  return out;
}

namespace {

bool take_field(std::string_view line, std::string_view key, std::string& value) {
  if (line.substr(0, key.size()) != key) return false;
  value = std::string(text::trim(line.substr(key.size())));
  return true;
}

PairVerdict downgrade(PairVerdict v, std::string flag) {
  v.parse_flags.insert(std::move(flag));
  v.status = Status::NotRegulated;
  v.confidence = Confidence::Low;
  v.refs.clear();
  return v;
}

}  // namespace

PairVerdict parse_verdict(std::string_view raw) {
  PairVerdict v;
  std::vector<std::string> lines;
  for (auto& l : text::split(text::trim(raw), '\n')) lines.emplace_back(text::trim(l));

  const bool shape_ok = (lines.size() == 3 || (lines.size() == 4 && lines[3].rfind("refs:", 0) == 0)) &&
                        std::none_of(lines.begin(), lines.end(), [](const auto& l) { return l.empty(); });
  if (!shape_ok) return downgrade(v, "malformed_structure");

  std::string status, confidence, rationale;
  if (!take_field(lines[0], "STATUS:", status) || !take_field(lines[1], "CONFIDENCE:", confidence) ||
      !take_field(lines[2], "RATIONALE:", rationale)) {
    return downgrade(v, "malformed_structure");
  }
  if (status == "Regulated") {
    v.status = Status::Regulated;
  } else if (status == "Not Regulated") {
    v.status = Status::NotRegulated;
  } else {
    return downgrade(v, "invalid_status");
  }
  if (confidence == "High") {
    v.confidence = Confidence::High;
  } else if (confidence == "Medium") {
    v.confidence = Confidence::Medium;
  } else if (confidence == "Low") {
    v.confidence = Confidence::Low;
  } else {
    return downgrade(v, "invalid_confidence");
  }
  if (lines.size() == 4) rationale += " " + lines[3];

  const auto refs_pos = rationale.rfind("refs:");
  if (refs_pos == std::string::npos) {
    v.rationale = rationale;
    return downgrade(v, "missing_refs");
  }
  const std::string refs_text(text::trim(std::string_view(rationale).substr(refs_pos + 5)));
  v.rationale = std::string(text::trim(std::string_view(rationale).substr(0, refs_pos)));
  if (refs_text != "none") {
    for (auto& r : text::split(refs_text, ',')) {
      auto t = std::string(text::trim(r));
      if (!t.empty()) v.refs.push_back(std::move(t));
    }
  }

  if (text::word_count(v.rationale) > kMaxVerdictRationaleWords) return downgrade(v, "rationale_too_long");
  if (v.status == Status::Regulated && v.refs.empty()) return downgrade(v, "regulated_without_refs");
  if (v.status == Status::NotRegulated && refs_text != "none") return downgrade(v, "refs_on_not_regulated");
  return v;
}

PairVerdict resolve_refs(PairVerdict verdict, const CandidatePair& pair, const legal::Catalog& catalog) {
  if (verdict.downgraded() || verdict.status != Status::Regulated) return verdict;
  for (const auto& cited : verdict.refs) {
    const bool ok = std::any_of(pair.context.begin(), pair.context.end(), [&](const std::string& ctx) {
      return catalog.find(pair.regulation, ctx) != nullptr && legal::ref_matches(cited, ctx, pair.regulation);
    });
    if (!ok) return downgrade(std::move(verdict), "unresolved_ref");
  }
  return verdict;
}

json to_json(const PairRecord& r) {
  return json{{"pair", to_json(r.pair)}, {"raw_reply", r.raw_reply}, {"verdict", to_json(r.verdict)}};
}

PairRecord pair_record_from_json(const json& j) {
  return {pair_from_json(j.at("pair")), j.at("raw_reply").get<std::string>(),
          verdict_from_json(j.at("verdict"))};
}

Retention retain_final(const std::vector<PairRecord>& records) {
  Retention out;
  auto& c = out.counts;
  c.formed = records.size();
  for (const auto& rec : records) {
    const auto& v = rec.verdict;
    if (v.downgraded()) {
      ++c.downgraded;
      continue;
    }
    if (v.status == Status::Regulated) {
      ++c.regulated;
      ++c.regulated_by_confidence[std::string(to_string(v.confidence))];
    } else {
      ++c.not_regulated;
    }
    if (v.regulated_high()) out.final_set.push_back(rec);
  }
  c.retained = out.final_set.size();
  return out;
}

std::string summary_csv(const RetentionCounts& c) {
  std::vector<io::CsvRow> rows;
  for (const char* conf : {"High", "Medium", "Low"}) {
    const auto it = c.regulated_by_confidence.find(conf);
    rows.push_back({"Regulated", conf, std::to_string(it == c.regulated_by_confidence.end() ? 0 : it->second)});
  }
  rows.push_back({"Not Regulated", "any", std::to_string(c.not_regulated)});
  rows.push_back({"Downgraded", "Low", std::to_string(c.downgraded)});
  rows.push_back({"Formed", "any", std::to_string(c.formed)});
  return io::to_csv({"status", "confidence", "count"}, rows);
}

DedupAccounting dedup_accounting(const std::vector<gates::PredictorMention>& predictors,
                                 const std::vector<CandidatePair>& pairs) {
  std::set<std::string> per_doi, global, global_pairs;
  for (const auto& m : predictors) {
    per_doi.insert(m.doi + "|" + text::lower(m.name));
    global.insert(text::normalize_name(m.name));
  }
  for (const auto& p : pairs) global_pairs.insert(text::normalize_name(p.predictor) + "|" + p.regulation);
  return {per_doi.size(), global.size(), pairs.size(), global_pairs.size()};
}

}  // namespace dtreg::pairing
