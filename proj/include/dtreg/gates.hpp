#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dtreg/ingest.hpp"

namespace dtreg::gates {

using nlohmann::json;

enum class Stage { Relevance, Sector, Predictors, PredictorValidation, Rdc };

std::string_view to_string(Stage s) noexcept;
Stage stage_from_string(std::string_view s);

enum class Relevance { Relevant, NotRelevant };
enum class Validity { Valid, NotValid };

inline constexpr std::string_view kRelevantToken = "Relevant";
inline constexpr std::string_view kNotRelevantToken = "Not relevant";
inline constexpr std::string_view kValidToken = "Valid";
inline constexpr std::string_view kNotValidToken = "Not valid";
inline constexpr std::size_t kMaxRationaleWords = 15;

std::string_view to_string(Relevance r) noexcept;
std::string_view to_string(Validity v) noexcept;

struct PredictorMention {
  std::string doi;
  std::string name;
  std::string evidence;
  std::optional<std::string> rdc;
  std::string rationale;
};

json to_json(const PredictorMention& m);
PredictorMention mention_from_json(const json& j);

struct DroppedMention {
  std::string name;
  std::string evidence;
  std::string reason;
};

struct PredictorParse {
  std::vector<PredictorMention> mentions;
  std::vector<DroppedMention> dropped;
};

struct RdcAssignment {
  std::string rdc;
  std::string rationale;
};

// All parsers trim surrounding whitespace and otherwise demand an exact match;
// anything else throws ContractViolation with the raw text attached.
Relevance parse_relevance(std::string_view raw);
std::string parse_sector(std::string_view raw);
PredictorParse parse_predictors(std::string_view raw, std::string_view abstract,
                                std::string_view doi = {});
Validity parse_predictor_validation(std::string_view raw);
RdcAssignment parse_rdc(std::string_view raw);

// Predictor validation gates conservatively: a contract violation gates as
// NotValid but stays distinguishable.
struct ValidationGate {
  Validity verdict = Validity::NotValid;
  bool contract_violation = false;
  std::string reason;
};
ValidationGate gate_predictor_validation(std::string_view raw);

struct SectorFilterResult {
  std::vector<ingest::SourceRecord> included;
  std::map<std::string, std::size_t> assigned_counts;  // over labeled records
  std::map<std::string, std::size_t> included_counts;
  std::size_t unlabeled = 0;  // records whose label was quarantined
};

// Retain records whose assigned sector equals the sector used at query time.
SectorFilterResult apply_sector_match_filter(const std::map<std::string, std::string>& labels,
                                             const std::vector<ingest::SourceRecord>& corpus);

struct ModelMeta {
  std::string name;
  std::string version;
  std::string timestamp;
};

json to_json(const ModelMeta& m);
ModelMeta model_meta_from_json(const json& j);

enum class DecisionStatus { Ok, ContractViolation, Quarantined };
std::string_view to_string(DecisionStatus s) noexcept;

struct GateDecision {
  std::string doi;      // item id; doi, or doi + predictor for the RDC stage
  std::string stage;    // gate tag
  std::string verdict;  // closed vocabulary token, empty when not parsed
  DecisionStatus status = DecisionStatus::Ok;
  std::string reason;
  std::string raw_output;
  std::string prompt_version;
  ModelMeta model_meta;
};

json to_json(const GateDecision& d);

}  // namespace dtreg::gates
