#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "dtreg/gates.hpp"
#include "dtreg/legal.hpp"

namespace dtreg::pairing {

using nlohmann::json;

struct CandidatePair {
  std::string doi;
  std::string predictor;  // name as extracted
  std::string rdc;
  std::string regulation;
  std::vector<std::string> context;  // article_refs, lexicographic

  std::string id() const { return doi + "|" + predictor + "|" + regulation; }
};

json to_json(const CandidatePair& p);
CandidatePair pair_from_json(const json& j);

enum class Status { Regulated, NotRegulated };
enum class Confidence { High, Medium, Low };

std::string_view to_string(Status s) noexcept;
std::string_view to_string(Confidence c) noexcept;

inline constexpr std::size_t kMaxVerdictRationaleWords = 40;

struct PairVerdict {
  Status status = Status::NotRegulated;
  Confidence confidence = Confidence::Low;
  std::string rationale;
  std::vector<std::string> refs;
  std::set<std::string> parse_flags;  // non-empty => downgraded

  bool downgraded() const noexcept { return !parse_flags.empty(); }
  bool regulated_high() const noexcept {
    return !downgraded() && status == Status::Regulated && confidence == Confidence::High;
  }
};

json to_json(const PairVerdict& v);
PairVerdict verdict_from_json(const json& j);

// Join validated predictors (with RDCs) against the catalog: one pair per
// regulation that has a passage tagged with the predictor's RDC.
std::vector<CandidatePair> build_candidate_pairs(const std::vector<gates::PredictorMention>& predictors,
                                                 const legal::Catalog& catalog);

// Passages of `regulation` tagged `rdc`, plus passages naming the predictor
// (case-insensitive whole-word). Sorted by article_ref.
std::vector<const legal::LegalPassage*> assemble_context(std::string_view predictor,
                                                         std::string_view rdc,
                                                         std::string_view regulation,
                                                         const legal::Catalog& catalog);

// "[<regulation> <article_ref>]\n<text>" blocks joined by blank lines.
std::string render_context(const std::vector<const legal::LegalPassage*>& passages);

// Strict three-line grammar. Never throws: deviations come back as
// NotRegulated/Low with a parse flag.
PairVerdict parse_verdict(std::string_view raw);

// Downgrades a Regulated verdict whose refs do not all resolve to a context
// passage of the pair's regulation.
PairVerdict resolve_refs(PairVerdict verdict, const CandidatePair& pair,
                         const legal::Catalog& catalog);

struct PairRecord {
  CandidatePair pair;
  std::string raw_reply;
  PairVerdict verdict;
};

json to_json(const PairRecord& r);
PairRecord pair_record_from_json(const json& j);

struct RetentionCounts {
  std::size_t formed = 0;
  std::size_t regulated = 0;      // model-asserted
  std::size_t not_regulated = 0;  // model-asserted
  std::size_t downgraded = 0;
  std::map<std::string, std::size_t> regulated_by_confidence;
  std::size_t retained = 0;
};

struct Retention {
  std::vector<PairRecord> final_set;
  RetentionCounts counts;
};

Retention retain_final(const std::vector<PairRecord>& records);

// Status x confidence summary (model-asserted rows plus a downgraded row).
std::string summary_csv(const RetentionCounts& c);

// Predictor accounting under the two dedup scopes.
struct DedupAccounting {
  std::size_t per_doi_predictors = 0;  // distinct (doi, name)
  std::size_t global_predictors = 0;   // distinct normalized name
  std::size_t per_doi_pairs = 0;
  std::size_t global_pairs = 0;        // distinct (normalized name, regulation)
};

DedupAccounting dedup_accounting(const std::vector<gates::PredictorMention>& predictors,
                                 const std::vector<CandidatePair>& pairs);

}  // namespace dtreg::pairing
