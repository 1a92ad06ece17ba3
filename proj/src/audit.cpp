#include "dtreg/audit.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include "dtreg/error.hpp"
#include "dtreg/io.hpp"
#include "dtreg/vocab.hpp"

namespace dtreg::audit {

namespace {

void check_proportion(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw DomainError("proportion outside [0,1]");
}

}  // namespace

double moe_srs(double p, std::int64_t n) {
  check_proportion(p);
  if (n < 1) throw DomainError("sample size must be >= 1");
  return kZ975 * std::sqrt(p * (1.0 - p) / static_cast<double>(n));
}

double moe_fpc(double p, std::int64_t n, std::int64_t population) {
  check_proportion(p);
  if (n < 1 || n > population) throw DomainError("need 1 <= n <= N");
  if (population == 1) return 0.0;
  const double fpc = std::sqrt(static_cast<double>(population - n) / static_cast<double>(population - 1));
  return moe_srs(p, n) * fpc;
}

double srs_target(double moe, double p) {
  check_proportion(p);
  if (!(moe > 0.0)) throw DomainError("target margin must be positive");
  return kZ975 * kZ975 * p * (1.0 - p) / (moe * moe);
}

double fpc_adjusted_target(double n0, std::int64_t population) {
  if (population < 1 || n0 < 0) throw DomainError("invalid population or n0");
  const double N = static_cast<double>(population);
  return n0 * N / (n0 + N - 1.0);
}

const Stratum& SamplePlan::stratum(const std::string& name) const {
  for (const auto& s : strata) {
    if (s.name == name) return s;
  }
  throw std::out_of_range("no stratum " + name);
}

SamplePlan plan_sample_fixed(const ingest::CorpusStrata& strata,
                             const std::vector<std::int64_t>& allocations) {
  if (allocations.size() != strata.per_registry.size()) {
    throw DomainError("one allocation per stratum required");
  }
  SamplePlan plan;
  for (std::size_t i = 0; i < allocations.size(); ++i) {
    const auto& [name, pop] = strata.per_registry[i];
    const auto n_h = allocations[i];
    const auto N_h = static_cast<std::int64_t>(pop);
    if (n_h < 0) throw DomainError("negative allocation for stratum " + name);
    if (N_h == 0 && n_h > 0) throw DomainError("allocation requested from empty stratum " + name);
    if (n_h > N_h) throw DomainError("allocation exceeds population in stratum " + name);
    if (N_h > 0 && n_h == 0) throw DomainError("non-empty stratum " + name + " has no allocation");
    plan.strata.push_back({name, N_h, n_h, n_h > 0 ? static_cast<double>(N_h) / static_cast<double>(n_h) : 0.0});
    plan.total += n_h;
  }
  return plan;
}

SamplePlan plan_sample(const ingest::CorpusStrata& strata, std::int64_t n) {
  const auto N = static_cast<std::int64_t>(strata.total);
  if (n < 0 || n > N) throw DomainError("requested sample exceeds population");
  const auto k = strata.per_registry.size();
  std::vector<std::int64_t> alloc(k, 0);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::int64_t assigned = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double exact = static_cast<double>(n) * static_cast<double>(strata.per_registry[i].second) /
                         static_cast<double>(N);
    alloc[i] = static_cast<std::int64_t>(std::floor(exact));
    assigned += alloc[i];
    remainders.emplace_back(exact - std::floor(exact), i);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t j = 0; assigned < n; ++j, ++assigned) ++alloc[remainders[j % k].second];

  // Every non-empty stratum needs at least one audited record.
  for (std::size_t i = 0; i < k; ++i) {
    if (strata.per_registry[i].second > 0 && alloc[i] == 0) {
      const auto donor = static_cast<std::size_t>(std::max_element(alloc.begin(), alloc.end()) - alloc.begin());
      if (alloc[donor] <= 1) throw DomainError("sample too small to cover every non-empty stratum");
      --alloc[donor];
      ++alloc[i];
    }
  }
  return plan_sample_fixed(strata, alloc);
}

json to_json(const SamplePlan& plan) {
  json strata = json::array();
  for (const auto& s : plan.strata) {
    strata.push_back({{"name", s.name}, {"N_h", s.population}, {"n_h", s.allocation}, {"w_h", s.weight}});
  }
  return json{{"strata", strata}, {"n", plan.total}};
}

std::vector<std::pair<std::string, std::string>> draw_sample(
    const std::vector<ingest::SourceRecord>& corpus, const SamplePlan& plan, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  // Unbiased bounded draw via rejection; avoids implementation-defined distributions.
  auto below = [&rng](std::uint64_t bound) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x;
    do {
      x = rng();
    } while (x >= limit);
    return x % bound;
  };
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& s : plan.strata) {
    std::vector<std::string> dois;
    for (const auto& r : corpus) {
      if (r.registry == s.name) dois.push_back(r.doi);
    }
    std::sort(dois.begin(), dois.end());
    if (static_cast<std::int64_t>(dois.size()) < s.allocation) {
      throw DomainError("stratum " + s.name + " has fewer records than its allocation");
    }
    // Partial Fisher-Yates.
    for (std::int64_t i = 0; i < s.allocation; ++i) {
      const auto j = static_cast<std::size_t>(i) + below(dois.size() - static_cast<std::size_t>(i));
      std::swap(dois[static_cast<std::size_t>(i)], dois[j]);
      out.emplace_back(dois[static_cast<std::size_t>(i)], s.name);
    }
  }
  return out;
}

std::string_view to_string(AuditStage s) noexcept {
  switch (s) {
    case AuditStage::Relevance: return "relevance";
    case AuditStage::Sector: return "sector";
    case AuditStage::Predictor: return "predictor";
    case AuditStage::Rdc: return "rdc";
    case AuditStage::PairStatus: return "pair-status";
  }
  return "unknown";
}

AuditStage audit_stage_from_string(std::string_view s) {
  for (auto st : {AuditStage::Relevance, AuditStage::Sector, AuditStage::Predictor, AuditStage::Rdc,
                  AuditStage::PairStatus}) {
    if (to_string(st) == s) return st;
  }
  throw std::invalid_argument("unknown audit stage: " + std::string(s));
}

std::vector<std::string> label_vocabulary(AuditStage s) {
  switch (s) {
    case AuditStage::Relevance: return {"Relevant", "Not relevant"};
    case AuditStage::Sector: {
      std::vector<std::string> v(kQuerySectors.begin(), kQuerySectors.end());
      v.emplace_back(kNoneOfTheAbove);
      return v;
    }
    case AuditStage::Predictor: return {"Valid", "Not valid"};
    case AuditStage::Rdc: return {kRdcTokens.begin(), kRdcTokens.end()};
    case AuditStage::PairStatus:
      return {"Regulated+High", "Regulated+Medium", "Regulated+Low",
              "Not Regulated+High", "Not Regulated+Medium", "Not Regulated+Low"};
  }
  return {};
}

std::vector<std::string> evidence_fields(AuditStage s) {
  switch (s) {
    case AuditStage::Relevance: return {"title", "abstract", "venue"};
    case AuditStage::Sector: return {"title", "abstract", "keywords", "venue"};
    case AuditStage::Predictor: return {"title", "abstract", "predictors"};
    case AuditStage::Rdc: return {"predictor", "evidence"};
    case AuditStage::PairStatus: return {"predictor", "rdc", "regulation", "fragments"};
  }
  return {};
}

json to_json(const AuditTask& t) {
  return json{{"task_id", t.task_id}, {"stage", to_string(t.stage)}, {"stratum", t.stratum},
              {"weight", t.weight},   {"payload", t.payload}};
}

AuditTask task_from_json(const json& j) {
  return {j.at("task_id").get<std::string>(), audit_stage_from_string(j.at("stage").get<std::string>()),
          j.at("stratum").get<std::string>(), j.at("weight").get<double>(), j.at("payload")};
}

std::vector<std::string> find_ai_fields(const json& doc) {
  static const std::set<std::string> kForbidden = {
      "ai",         "verdict",     "status",   "confidence", "rationale", "model",
      "model_meta", "raw_output",  "raw_reply", "prediction", "refs",      "parse_flags",
      "assigned",   "gate",        "label",     "labels",     "decision",  "score"};
  std::vector<std::string> hits;
  std::function<void(const json&, const std::string&)> walk = [&](const json& node, const std::string& path) {
    if (node.is_object()) {
      for (const auto& [key, value] : node.items()) {
        const std::string p = path.empty() ? key : path + "." + key;
        std::string lower;
        std::transform(key.begin(), key.end(), std::back_inserter(lower),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        if (kForbidden.count(lower) || lower.rfind("ai_", 0) == 0 || lower.rfind("model_", 0) == 0) {
          hits.push_back(p);
        }
        walk(value, p);
      }
    } else if (node.is_array()) {
      for (std::size_t i = 0; i < node.size(); ++i) walk(node[i], path + "[" + std::to_string(i) + "]");
    }
  };
  walk(doc, "");
  return hits;
}

AuditTask blind_view(const AuditItem& item, AuditStage stage) {
  AuditTask t{item.id, stage, item.stratum, item.weight, json::object()};
  for (const auto& field : evidence_fields(stage)) {
    if (!item.evidence.contains(field)) {
      throw DataIntegrityError("audit item " + item.id + " lacks evidence field '" + field + "'");
    }
    t.payload[field] = item.evidence.at(field);
  }
  if (const auto hits = find_ai_fields(t.payload); !hits.empty()) {
    throw DataIntegrityError("blinded payload for " + item.id + " carries automated field " + hits.front());
  }
  return t;
}

BinaryMetrics binary_metrics(const WeightedConfusion& c) {
  BinaryMetrics m{c, std::nullopt, std::nullopt, std::nullopt};
  if (c.tp + c.fp > 0) m.precision = c.tp / (c.tp + c.fp);
  if (c.tp + c.fn > 0) m.recall = c.tp / (c.tp + c.fn);
  if (c.fn + c.tn > 0) m.miss_rate = c.fn / (c.fn + c.tn);
  return m;
}

BinaryMetrics weighted_confusion(const std::vector<WeightedLabel>& labels) {
  WeightedConfusion c;
  for (const auto& l : labels) {
    if (!(l.weight >= 0)) throw DomainError("negative design weight");
    if (l.ai_positive) {
      (l.human_positive ? c.tp : c.fp) += l.weight;
    } else {
      (l.human_positive ? c.fn : c.tn) += l.weight;
    }
  }
  return binary_metrics(c);
}

KappaResult cohen_kappa(const WeightedConfusion& c) {
  std::vector<CategoricalLabel> labels = {
      {"pos", "pos", c.tp}, {"pos", "neg", c.fp}, {"neg", "pos", c.fn}, {"neg", "neg", c.tn}};
  return cohen_kappa(labels);
}

KappaResult cohen_kappa(const std::vector<CategoricalLabel>& labels) {
  KappaResult r;
  std::map<std::string, double> ai_margin, human_margin;
  double total = 0.0, agree = 0.0;
  for (const auto& l : labels) {
    if (!(l.weight >= 0)) throw DomainError("negative design weight");
    if (l.weight == 0) continue;
    total += l.weight;
    ai_margin[l.ai] += l.weight;
    human_margin[l.human] += l.weight;
    if (l.ai == l.human) agree += l.weight;
  }
  if (total <= 0) {
    r.flag = "no labeled mass";
    return r;
  }
  std::set<std::string> categories;
  for (const auto& [k, _] : ai_margin) categories.insert(k);
  for (const auto& [k, _] : human_margin) categories.insert(k);
  r.observed = agree / total;
  for (const auto& cat : categories) {
    const double a = ai_margin.count(cat) ? ai_margin[cat] : 0.0;
    const double h = human_margin.count(cat) ? human_margin[cat] : 0.0;
    r.expected += (a / total) * (h / total);
  }
  if (categories.size() < 2) {
    r.flag = "fewer than two observed categories";
    return r;
  }
  if (r.expected >= 1.0) {
    r.flag = "expected agreement is 1 (both raters constant)";
    return r;
  }
  r.kappa = (r.observed - r.expected) / (1.0 - r.expected);
  return r;
}

std::optional<double> weighted_agreement(const std::vector<CategoricalLabel>& labels) {
  double total = 0.0, agree = 0.0;
  for (const auto& l : labels) {
    total += l.weight;
    if (l.ai == l.human) agree += l.weight;
  }
  if (total <= 0) return std::nullopt;
  return agree / total;
}

double MultiplierSet::for_regulation(const std::string& regulation) const {
  const auto it = s_r.find(regulation);
  return it == s_r.end() ? compound : it->second;
}

MultiplierSet compound_multiplier(const StagePrecisions& p, const std::map<std::string, double>& phi_r) {
  for (double v : {p.relevance, p.domain, p.predictor, p.rdc_match, p.status}) {
    if (!(v >= 0.0 && v <= 1.0)) throw DomainError("stage precision outside [0,1]");
  }
  MultiplierSet m;
  m.precisions = p;
  m.m_other = p.relevance * p.domain * p.predictor * p.rdc_match;
  m.compound = m.m_other * p.status;
  for (const auto& [reg, phi] : phi_r) {
    if (!(phi >= 0.0 && phi <= 1.0)) throw DomainError("phi_r outside [0,1] for " + reg);
    m.phi_r[reg] = phi;
    m.s_r[reg] = m.m_other * phi;
  }
  return m;
}

json to_json(const MultiplierSet& m) {
  return json{{"prec_relevance", m.precisions.relevance},
              {"prec_domain", m.precisions.domain},
              {"prec_predictor", m.precisions.predictor},
              {"match_rdc", m.precisions.rdc_match},
              {"prec_status", m.precisions.status},
              {"m_other", m.m_other},
              {"S", m.compound},
              {"phi_r", m.phi_r},
              {"S_r", m.s_r}};
}

MultiplierSet multiplier_from_json(const json& j) {
  StagePrecisions p{j.at("prec_relevance").get<double>(), j.at("prec_domain").get<double>(),
                    j.at("prec_predictor").get<double>(), j.at("match_rdc").get<double>(),
                    j.at("prec_status").get<double>()};
  return compound_multiplier(p, j.value("phi_r", std::map<std::string, double>{}));
}

AdjustedValue adjust_counts(double count, const MultiplierSet& m, MetricKind kind,
                            const std::optional<std::string>& regulation) {
  if (!(count >= 0)) throw DomainError("count must be non-negative");
  if (kind == MetricKind::UniquePapers) {
    return {count, false, "unscaled: metrics over unique papers are not multiplied"};
  }
  const double s = regulation ? m.for_regulation(*regulation) : m.compound;
  std::string note = regulation && m.s_r.count(*regulation) ? "scaled by S_r" : "scaled by S";
  return {count * s, true, std::move(note)};
}

json to_json(const LabelRecord& r) {
  return json{{"task_id", r.task_id},       {"stage", r.stage},         {"human_label", r.human_label},
              {"timestamp", r.timestamp},   {"reviewer_id", r.reviewer_id}, {"note", r.note}};
}

LabelRecord label_from_json(const json& j) {
  return {j.at("task_id").get<std::string>(),   j.at("stage").get<std::string>(),
          j.at("human_label").get<std::string>(), j.value("timestamp", std::string()),
          j.value("reviewer_id", std::string()),  j.value("note", std::string())};
}

std::string export_tasks_csv(const std::vector<AuditTask>& tasks) {
  std::vector<io::CsvRow> rows;
  for (const auto& t : tasks) {
    rows.push_back({t.task_id, std::string(to_string(t.stage)), t.stratum, io::fmt_double(t.weight),
                    t.payload.dump(), "", ""});
  }
  return io::to_csv({"task_id", "stage", "stratum", "weight", "payload", "human_label", "reviewer_id"}, rows);
}

std::vector<LabelRecord> import_labels_csv(std::string_view csv, AuditStage stage) {
  const auto rows = io::parse_csv(csv);
  if (rows.empty()) return {};
  const auto& header = rows.front();
  auto col = [&](std::string_view name) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    return std::nullopt;
  };
  const auto id_col = col("task_id");
  const auto label_col = col("human_label");
  const auto reviewer_col = col("reviewer_id");
  if (!id_col || !label_col) throw DataIntegrityError("label CSV needs task_id and human_label columns");
  const auto vocab = label_vocabulary(stage);
  std::vector<LabelRecord> out;
  std::set<std::string> seen;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() <= std::max(*id_col, *label_col)) throw DataIntegrityError("short row in label CSV");
    const auto& label = row[*label_col];
    if (label.empty()) continue;  // not yet labeled
    if (std::find(vocab.begin(), vocab.end(), label) == vocab.end()) {
      throw DataIntegrityError("label '" + label + "' outside the " + std::string(to_string(stage)) + " vocabulary");
    }
    if (!seen.insert(row[*id_col]).second) throw DataIntegrityError("duplicate label for task " + row[*id_col]);
    out.push_back({row[*id_col], std::string(to_string(stage)), label, "imported",
                   reviewer_col && *reviewer_col < row.size() ? row[*reviewer_col] : std::string(), ""});
  }
  return out;
}

}  // namespace dtreg::audit
