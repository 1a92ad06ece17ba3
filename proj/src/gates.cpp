#include "dtreg/gates.hpp"

#include <set>

#include "dtreg/error.hpp"
#include "dtreg/text.hpp"
#include "dtreg/vocab.hpp"

namespace dtreg::gates {

namespace {

json parse_strict_object(std::string_view raw, const std::set<std::string>& allowed_keys,
                         std::string_view contract) {
  json doc;
  try {
    doc = json::parse(text::trim(raw));
  } catch (const json::parse_error&) {
    throw ContractViolation(std::string(contract) + ": payload is not JSON", std::string(raw));
  }
  if (!doc.is_object()) {
    throw ContractViolation(std::string(contract) + ": payload is not an object", std::string(raw));
  }
  for (const auto& [key, _] : doc.items()) {
    if (!allowed_keys.count(key)) {
      throw ContractViolation(std::string(contract) + ": unexpected key '" + key + "'",
                              std::string(raw));
    }
  }
  for (const auto& key : allowed_keys) {
    if (!doc.contains(key)) {
      throw ContractViolation(std::string(contract) + ": missing key '" + key + "'",
                              std::string(raw));
    }
  }
  return doc;
}

}  // namespace

std::string_view to_string(Stage s) noexcept {
  switch (s) {
    case Stage::Relevance: return "relevance";
    case Stage::Sector: return "sector";
    case Stage::Predictors: return "predictors";
    case Stage::PredictorValidation: return "predictor_validation";
    case Stage::Rdc: return "rdc";
  }
  return "unknown";
}

Stage stage_from_string(std::string_view s) {
  for (Stage st : {Stage::Relevance, Stage::Sector, Stage::Predictors, Stage::PredictorValidation,
                   Stage::Rdc}) {
    if (to_string(st) == s) return st;
  }
  throw std::invalid_argument("unknown gate stage: " + std::string(s));
}

std::string_view to_string(Relevance r) noexcept {
  return r == Relevance::Relevant ? kRelevantToken : kNotRelevantToken;
}

std::string_view to_string(Validity v) noexcept {
  return v == Validity::Valid ? kValidToken : kNotValidToken;
}

json to_json(const PredictorMention& m) {
  json j{{"doi", m.doi}, {"name", m.name}, {"evidence", m.evidence}};
  j["rdc"] = m.rdc ? json(*m.rdc) : json(nullptr);
  j["rationale"] = m.rationale;
  return j;
}

PredictorMention mention_from_json(const json& j) {
  PredictorMention m;
  m.doi = j.at("doi").get<std::string>();
  m.name = j.at("name").get<std::string>();
  m.evidence = j.at("evidence").get<std::string>();
  if (j.contains("rdc") && j["rdc"].is_string()) m.rdc = j["rdc"].get<std::string>();
  m.rationale = j.value("rationale", std::string());
  return m;
}

Relevance parse_relevance(std::string_view raw) {
  const auto t = text::trim(raw);
  if (t == kRelevantToken) return Relevance::Relevant;
  if (t == kNotRelevantToken) return Relevance::NotRelevant;
  throw ContractViolation("relevance: reply is not exactly 'Relevant' or 'Not relevant'",
                          std::string(raw));
}

std::string parse_sector(std::string_view raw) {
  const auto t = text::trim(raw);
  if (is_sector_token(t)) return std::string(t);
  throw ContractViolation("sector: token outside the 13-option vocabulary", std::string(raw));
}

PredictorParse parse_predictors(std::string_view raw, std::string_view abstract,
                                std::string_view doi) {
  const json doc = parse_strict_object(raw, {"predictors"}, "predictors");
  const auto& list = doc["predictors"];
  if (!list.is_array()) throw ContractViolation("predictors: 'predictors' is not a list", std::string(raw));

  PredictorParse out;
  std::set<std::string> seen;
  for (const auto& item : list) {
    if (!item.is_object()) throw ContractViolation("predictors: item is not an object", std::string(raw));
    for (const auto& [key, _] : item.items()) {
      if (key != "name" && key != "evidence") {
        throw ContractViolation("predictors: unexpected item key '" + key + "'", std::string(raw));
      }
    }
    if (!item.contains("name") || !item.contains("evidence") || !item["name"].is_string() ||
        !item["evidence"].is_string()) {
      throw ContractViolation("predictors: item needs string 'name' and 'evidence'", std::string(raw));
    }
    const auto name = item["name"].get<std::string>();
    const auto evidence = item["evidence"].get<std::string>();
    auto drop = [&](std::string reason) { out.dropped.push_back({name, evidence, std::move(reason)}); };

    if (text::trim(name).empty()) {
      drop("empty predictor name");
    } else if (text::trim(evidence).empty()) {
      drop("empty evidence sentence");
    } else if (!text::icontains(abstract, evidence)) {
      drop("evidence sentence not found in abstract");
    } else if (!text::icontains(evidence, text::trim(name))) {
      drop("predictor name not found in evidence sentence");
    } else if (!seen.insert(text::lower(text::trim(name))).second) {
      drop("duplicate predictor name");
    } else {
      out.mentions.push_back({std::string(doi), std::string(text::trim(name)), evidence, std::nullopt, {}});
    }
  }
  return out;
}

Validity parse_predictor_validation(std::string_view raw) {
  const auto t = text::trim(raw);
  if (t == kValidToken) return Validity::Valid;
  if (t == kNotValidToken) return Validity::NotValid;
  throw ContractViolation("predictor validation: reply is not exactly 'Valid' or 'Not valid'",
                          std::string(raw));
}

ValidationGate gate_predictor_validation(std::string_view raw) {
  try {
    return {parse_predictor_validation(raw), false, {}};
  } catch (const ContractViolation& e) {
    return {Validity::NotValid, true, e.reason()};
  }
}

RdcAssignment parse_rdc(std::string_view raw) {
  const json doc = parse_strict_object(raw, {"class", "rationale"}, "rdc");
  if (!doc["class"].is_string() || !doc["rationale"].is_string()) {
    throw ContractViolation("rdc: 'class' and 'rationale' must be strings", std::string(raw));
  }
  auto cls = doc["class"].get<std::string>();
  auto rationale = doc["rationale"].get<std::string>();
  if (!is_rdc_token(cls)) {
    throw ContractViolation("rdc: class '" + cls + "' outside the RDC vocabulary", std::string(raw));
  }
  if (text::word_count(rationale) > kMaxRationaleWords) {
    throw ContractViolation("rdc: rationale exceeds 15 words", std::string(raw));
  }
  return {std::move(cls), std::move(rationale)};
}

SectorFilterResult apply_sector_match_filter(const std::map<std::string, std::string>& labels,
                                             const std::vector<ingest::SourceRecord>& corpus) {
  SectorFilterResult out;
  for (const auto& rec : corpus) {
    const auto it = labels.find(rec.doi);
    if (it == labels.end()) {
      ++out.unlabeled;
      continue;
    }
    ++out.assigned_counts[it->second];
    if (it->second == rec.searched_sector) {
      ++out.included_counts[it->second];
      out.included.push_back(rec);
    }
  }
  return out;
}

json to_json(const ModelMeta& m) {
  return json{{"name", m.name}, {"version", m.version}, {"timestamp", m.timestamp}};
}

ModelMeta model_meta_from_json(const json& j) {
  return {j.value("name", std::string()), j.value("version", std::string()),
          j.value("timestamp", std::string())};
}

std::string_view to_string(DecisionStatus s) noexcept {
  switch (s) {
    case DecisionStatus::Ok: return "ok";
    case DecisionStatus::ContractViolation: return "contract_violation";
    case DecisionStatus::Quarantined: return "quarantined";
  }
  return "unknown";
}

json to_json(const GateDecision& d) {
  return json{{"doi", d.doi},
              {"stage", d.stage},
              {"verdict", d.verdict},
              {"status", to_string(d.status)},
              {"reason", d.reason},
              {"raw_output", d.raw_output},
              {"prompt_version", d.prompt_version},
              {"model_meta", to_json(d.model_meta)}};
}

}  // namespace dtreg::gates
