#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dtreg/ingest.hpp"

namespace dtreg::audit {

using nlohmann::json;

inline constexpr double kZ975 = 1.96;

// ---- sample size ---------------------------------------------------------

// 95% margin of error for a proportion with finite-population correction.
double moe_fpc(double p, std::int64_t n, std::int64_t population);
// Same without the correction factor.
double moe_srs(double p, std::int64_t n);
// n0 = z^2 p(1-p) / moe^2
double srs_target(double moe, double p);
// n = n0 N / (n0 + N - 1)
double fpc_adjusted_target(double n0, std::int64_t population);

// ---- allocation ----------------------------------------------------------

struct Stratum {
  std::string name;
  std::int64_t population = 0;  // N_h
  std::int64_t allocation = 0;  // n_h
  double weight = 0.0;          // N_h / n_h
};

struct SamplePlan {
  std::vector<Stratum> strata;
  std::int64_t total = 0;  // n

  const Stratum& stratum(const std::string& name) const;
};

// Proportional allocation, largest-remainder rounding (ties to the earlier stratum).
SamplePlan plan_sample(const ingest::CorpusStrata& strata, std::int64_t n);
// Explicit allocations; rejects allocations to empty or undersized strata.
SamplePlan plan_sample_fixed(const ingest::CorpusStrata& strata,
                             const std::vector<std::int64_t>& allocations);

json to_json(const SamplePlan& plan);

// Draws the audited DOIs per stratum without replacement. Deterministic for a seed.
std::vector<std::pair<std::string, std::string>> draw_sample(  // (doi, stratum)
    const std::vector<ingest::SourceRecord>& corpus, const SamplePlan& plan, std::uint64_t seed);

// ---- blinding ------------------------------------------------------------

enum class AuditStage { Relevance, Sector, Predictor, Rdc, PairStatus };

std::string_view to_string(AuditStage s) noexcept;
AuditStage audit_stage_from_string(std::string_view s);
// Human label vocabulary per stage; mirrors the automated vocabulary.
std::vector<std::string> label_vocabulary(AuditStage s);
// Evidence fields a reviewer sees at each stage.
std::vector<std::string> evidence_fields(AuditStage s);

// An audited item as held internally: evidence plus the automated labels.
struct AuditItem {
  std::string id;
  AuditStage stage = AuditStage::Relevance;
  std::string stratum;
  double weight = 1.0;
  json evidence = json::object();
  json ai = json::object();  // verdicts, rationales, confidences; never serialized into tasks
};

struct AuditTask {
  std::string task_id;
  AuditStage stage = AuditStage::Relevance;
  std::string stratum;
  double weight = 1.0;
  json payload = json::object();
};

json to_json(const AuditTask& t);
AuditTask task_from_json(const json& j);

// Key paths in `doc` that fall in the automated-label namespace.
std::vector<std::string> find_ai_fields(const json& doc);

// Builds the reviewer-facing task by whitelisting the stage's evidence fields.
AuditTask blind_view(const AuditItem& item, AuditStage stage);

// ---- agreement -----------------------------------------------------------

struct WeightedConfusion {
  double tp = 0, fp = 0, fn = 0, tn = 0;
  double total() const noexcept { return tp + fp + fn + tn; }
};

struct WeightedLabel {
  bool ai_positive = false;
  bool human_positive = false;
  double weight = 1.0;
};

// nullopt encodes an undefined metric (empty denominator); reports render "n/a".
struct BinaryMetrics {
  WeightedConfusion confusion;
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> miss_rate;
};

BinaryMetrics weighted_confusion(const std::vector<WeightedLabel>& labels);
BinaryMetrics binary_metrics(const WeightedConfusion& c);

struct KappaResult {
  std::optional<double> kappa;  // nullopt when P_e == 1 or fewer than two categories
  double observed = 0.0;        // P_o
  double expected = 0.0;        // P_e
  std::string flag;
};

KappaResult cohen_kappa(const WeightedConfusion& c);

struct CategoricalLabel {
  std::string ai;
  std::string human;
  double weight = 1.0;
};

// Multi-class kappa with weighted marginals.
KappaResult cohen_kappa(const std::vector<CategoricalLabel>& labels);
// Weighted share of items where the labels agree.
std::optional<double> weighted_agreement(const std::vector<CategoricalLabel>& labels);

// ---- correction ----------------------------------------------------------

struct StagePrecisions {
  double relevance = 1.0;
  double domain = 1.0;
  double predictor = 1.0;
  double rdc_match = 1.0;
  double status = 1.0;  // phi
};

struct MultiplierSet {
  StagePrecisions precisions;
  double m_other = 1.0;
  double compound = 1.0;               // S
  std::map<std::string, double> phi_r;
  std::map<std::string, double> s_r;

  // S_r when an audited phi_r exists, otherwise S.
  double for_regulation(const std::string& regulation) const;
};

MultiplierSet compound_multiplier(const StagePrecisions& p,
                                  const std::map<std::string, double>& phi_r = {});

json to_json(const MultiplierSet& m);
MultiplierSet multiplier_from_json(const json& j);

enum class MetricKind { PairTally, UniquePapers };

struct AdjustedValue {
  double value = 0.0;
  bool scaled = false;
  std::string note;
};

AdjustedValue adjust_counts(double count, const MultiplierSet& m, MetricKind kind,
                            const std::optional<std::string>& regulation = std::nullopt);

// Label ledger row.
struct LabelRecord {
  std::string task_id;
  std::string stage;
  std::string human_label;
  std::string timestamp;
  std::string reviewer_id;
  std::string note;
};

json to_json(const LabelRecord& r);
LabelRecord label_from_json(const json& j);

// CSV export of tasks for offline labeling and import of the labeled sheet.
std::string export_tasks_csv(const std::vector<AuditTask>& tasks);
std::vector<LabelRecord> import_labels_csv(std::string_view csv, AuditStage stage);

}  // namespace dtreg::audit
