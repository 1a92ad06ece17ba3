#include "dtreg/pipeline.hpp"

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <cmath>
#include <ctime>
#include <exception>
#include <iostream>
#include <mutex>
#include <set>
#include <thread>

#include "dtreg/audit_service.hpp"
#include "dtreg/error.hpp"
#include "dtreg/gates.hpp"
#include "dtreg/io.hpp"
#include "dtreg/legal.hpp"
#include "dtreg/pairing.hpp"
#include "dtreg/stats/contingency.hpp"
#include "dtreg/stats/glm.hpp"
#include "dtreg/stats/panel.hpp"
#include "dtreg/stats/report.hpp"
#include "dtreg/text.hpp"
#include "dtreg/vocab.hpp"

#ifndef DTREG_PROMPTS_DIR
#define DTREG_PROMPTS_DIR "prompts"
#endif

namespace dtreg::pipeline {

namespace {

using gates::DecisionStatus;
using gates::GateDecision;
using ingest::SourceRecord;

std::string utc_now_iso() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

std::vector<SourceRecord> read_records(const fs::path& p) {
  std::vector<SourceRecord> out;
  for (const auto& row : io::read_jsonl(p)) out.push_back(ingest::record_from_json(row));
  return out;
}

std::vector<json> records_json(const std::vector<SourceRecord>& rs) {
  std::vector<json> out;
  out.reserve(rs.size());
  for (const auto& r : rs) out.push_back(ingest::to_json(r));
  return out;
}

std::vector<gates::PredictorMention> read_mentions(const fs::path& p) {
  std::vector<gates::PredictorMention> out;
  for (const auto& row : io::read_jsonl(p)) out.push_back(gates::mention_from_json(row));
  return out;
}

std::string keywords_text(const SourceRecord& r) { return text::join(r.keywords, "; "); }

// Model metadata summary for the manifest: name, version, first/last timestamp.
struct MetaSpan {
  std::string name, version, first, last;
  void add(const gates::ModelMeta& m) {
    if (m.name.empty()) return;
    name = m.name;
    version = m.version;
    if (first.empty() || m.timestamp < first) first = m.timestamp;
    if (last.empty() || m.timestamp > last) last = m.timestamp;
  }
  json to_json() const {
    if (name.empty()) return nullptr;
    return json{{"name", name}, {"version", version}, {"first_timestamp", first}, {"last_timestamp", last}};
  }
};

std::optional<double> opt_number(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

// ---- configuration -------------------------------------------------------

PipelineConfig config_from_json(const json& j, const fs::path& base_dir) {
  PipelineConfig c;
  c.base_dir = base_dir;
  try {
    if (j.contains("api_key")) throw ConfigError("API keys are read from the environment only");
    c.ingest = ingest::ingest_config_from_json(
        json{{"registries", j.value("registries", json::array())}, {"sector_queries", j.value("sector_queries", json::object())}});
    if (const char* mailto = std::getenv("DTREG_MAILTO"); mailto && *mailto) {
      for (auto& r : c.ingest.registries) r.mailto = mailto;
    }
    c.model = model_config_from_json(j.value("model", json::object()));
    if (const char* url = std::getenv("DTREG_MODEL_BASE_URL"); url && *url) c.model.base_url = url;
    c.prompts_dir = j.contains("prompts_dir") ? resolve(base_dir, j.at("prompts_dir").get<std::string>())
                                              : fs::path(DTREG_PROMPTS_DIR);
    for (const auto& d : j.value("legal_documents", json::array())) {
      const auto reg = d.at("regulation").get<std::string>();
      if (!is_regulation(reg)) throw ConfigError("unknown regulation in legal_documents: " + reg);
      c.legal_documents.push_back({reg, resolve(base_dir, d.at("path").get<std::string>())});
    }
    const auto g = j.value("gates", json::object());
    c.concurrency = g.value("concurrency", c.concurrency);
    c.max_violation_rate = g.value("max_violation_rate", c.max_violation_rate);
    if (c.concurrency == 0) throw ConfigError("gates.concurrency must be >= 1");

    const auto a = j.value("audit", json::object());
    c.audit_sample_size = a.value("sample_size", c.audit_sample_size);
    c.seed = a.value("seed", c.seed);
    c.claim_timeout = std::chrono::seconds(a.value("claim_timeout_s", static_cast<long>(c.claim_timeout.count())));
    c.audit_host = a.value("host", c.audit_host);
    c.audit_port = a.value("port", c.audit_port);
    for (const auto& f : a.value("label_files", json::array())) c.label_files.push_back(resolve(base_dir, f.get<std::string>()));

    const auto corr = j.value("correction", json::object());
    if (corr.contains("precisions")) {
      const auto& p = corr.at("precisions");
      c.precisions = audit::StagePrecisions{p.at("relevance").get<double>(), p.at("domain").get<double>(),
                                            p.at("predictor").get<double>(), p.at("rdc_match").get<double>(),
                                            p.at("status").get<double>()};
    }
    for (const auto& [reg, v] : corr.value("phi_r", json::object()).items()) {
      if (!is_regulation(reg)) throw ConfigError("unknown regulation in correction.phi_r: " + reg);
      c.phi_r[reg] = v.get<double>();
    }

    const auto s = j.value("stats", json::object());
    c.exposure = s.value("exposure", c.exposure);
    if (c.exposure != "corpus" && c.exposure != "relevant" && c.exposure != "included" && c.exposure != "validated") {
      throw ConfigError("stats.exposure must be corpus, relevant, included or validated");
    }
    if (s.contains("first_year")) c.first_year = s.at("first_year").get<int>();
    if (s.contains("last_year")) c.last_year = s.at("last_year").get<int>();
    c.per_regulation_multiplier = s.value("per_regulation_multiplier", false);
    c.mc_tables = s.value("monte_carlo_tables", c.mc_tables);

    const auto r = j.value("report", json::object());
    c.report_bundle = r.value("bundle", std::vector<std::string>{});
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  return c;
}

PipelineConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
  return config_from_json(j, fs::absolute(path).parent_path());
}

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names = {
      "ingest", "screen",    "sectors",     "extract",       "validate-predictors", "map-rdc", "catalog",
      "pairs",  "audit-plan", "audit-serve", "audit-metrics", "correct",             "stats",   "report"};
  return names;
}

const std::vector<std::string>& batch_stages() {
  static const std::vector<std::string> names = {"ingest",  "screen",  "sectors", "extract", "validate-predictors",
                                                 "map-rdc", "catalog", "pairs",   "correct", "stats", "report"};
  return names;
}

// ---- process plumbing ----------------------------------------------------

DirectoryLock::DirectoryLock(const fs::path& dir) : path_(dir / ".lock") {
  fs::create_directories(dir);
  for (int attempt = 0; attempt < 2; ++attempt) {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd >= 0) {
      const auto pid = std::to_string(::getpid());
      [[maybe_unused]] const auto n = ::write(fd, pid.data(), pid.size());
      ::close(fd);
      return;
    }
    if (errno != EEXIST) throw std::runtime_error("cannot create lock " + path_.string());
    long holder = 0;
    try {
      holder = std::stol(io::read_file(path_));
    } catch (...) {
    }
    if (holder > 0 && ::kill(static_cast<pid_t>(holder), 0) == 0) {
      throw std::runtime_error("output directory is locked by process " + std::to_string(holder));
    }
    fs::remove(path_);  // stale lock
  }
  throw std::runtime_error("cannot acquire lock " + path_.string());
}

DirectoryLock::~DirectoryLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  if (n == 0) return;
  workers = std::max<std::size_t>(1, std::min(workers, n));
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first;
  std::mutex mu;
  auto work = [&] {
    while (!failed) {
      const std::size_t i = next++;
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!first) first = std::current_exception();
        failed = true;
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (first) std::rethrow_exception(first);
}

// ---- pipeline ------------------------------------------------------------

Pipeline::Pipeline(PipelineConfig config, RunMode mode, fs::path cache_dir, fs::path out_dir)
    : config_(std::move(config)), mode_(mode), out_(std::move(out_dir)), cache_(std::move(cache_dir), mode) {
  fs::create_directories(out_);
  const auto mpath = out_ / "manifest.json";
  if (fs::exists(mpath)) {
    manifest_ = json::parse(io::read_file(mpath));
  } else {
    manifest_ = json{{"stages", json::object()}};
  }
  manifest_["mode"] = to_string(mode_);
  manifest_["seeds"] = {{"audit_sample", config_.seed}, {"monte_carlo", config_.seed}};
}

const PromptTemplate& Pipeline::prompt(const std::string& stage) const {
  return prompts_->get(stage);
}

ModelClient& Pipeline::model() {
  if (!prompts_) prompts_.emplace(config_.prompts_dir);
  if (!model_) model_.emplace(config_.model, cache_);
  return *model_;
}

void Pipeline::require_inputs(const std::string& stage, const std::vector<std::string>& inputs) {
  std::vector<std::string> missing;
  for (const auto& rel : inputs) {
    if (!fs::exists(path(rel))) missing.push_back(rel);
  }
  if (!missing.empty()) {
    throw DataIntegrityError("stage " + stage + " is missing upstream artifacts: " + text::join(missing, ", "));
  }
  // Inputs must be byte-identical to what their producing stage recorded.
  for (const auto& rel : inputs) {
    for (const auto& [name, entry] : manifest_["stages"].items()) {
      if (!entry.contains("outputs") || !entry["outputs"].contains(rel)) continue;
      const auto actual = io::sha256_file(path(rel));
      if (entry["outputs"][rel].get<std::string>() != actual) {
        throw ChecksumMismatch("artifact " + rel + " differs from the checksum recorded by stage " + name);
      }
    }
  }
}

void Pipeline::write_output(const std::string& rel, std::string_view contents) {
  io::write_file_atomic(path(rel), contents);
  written_.push_back(rel);
}

void Pipeline::write_jsonl(const std::string& rel, const std::vector<json>& rows) {
  io::write_jsonl_atomic(path(rel), rows);
  written_.push_back(rel);
}

void Pipeline::record(const std::string& stage, const std::vector<std::string>& inputs, json details) {
  json entry = std::move(details);
  entry["status"] = "completed";
  entry["completed_at"] = utc_now_iso();
  json in = json::object(), out = json::object();
  for (const auto& rel : inputs) in[rel] = io::sha256_file(path(rel));
  std::sort(written_.begin(), written_.end());
  for (const auto& rel : written_) out[rel] = io::sha256_file(path(rel));
  entry["inputs"] = in;
  entry["outputs"] = out;
  manifest_["stages"][stage] = entry;
  written_.clear();
  save_manifest();
}

void Pipeline::save_manifest() {
  if (prompts_) {
    json pv = json::object();
    for (const auto& [stage, p] : prompts_->all()) pv[stage] = p.version;
    manifest_["prompt_versions"] = pv;
  }
  io::write_file_atomic(out_ / "manifest.json", manifest_.dump(2) + "\n");
}

void Pipeline::check_budget(const std::string& stage, std::size_t violations, std::size_t evaluated) const {
  if (evaluated == 0) return;
  const double rate = static_cast<double>(violations) / static_cast<double>(evaluated);
  if (rate > config_.max_violation_rate) {
    throw ViolationBudgetExceeded("stage " + stage + ": " + std::to_string(violations) + " contract violations in " +
                                  std::to_string(evaluated) + " replies exceeds the budget of " +
                                  io::fmt_double(config_.max_violation_rate));
  }
}

json Pipeline::run_stage(const std::string& name) {
  written_.clear();
  json result;
  if (name == "ingest") result = stage_ingest();
  else if (name == "screen") result = stage_screen();
  else if (name == "sectors") result = stage_sectors();
  else if (name == "extract") result = stage_extract();
  else if (name == "validate-predictors") result = stage_validate();
  else if (name == "map-rdc") result = stage_map_rdc();
  else if (name == "catalog") result = stage_catalog();
  else if (name == "pairs") result = stage_pairs();
  else if (name == "audit-plan") result = stage_audit_plan();
  else if (name == "audit-metrics") result = stage_audit_metrics();
  else if (name == "correct") result = stage_correct();
  else if (name == "stats") result = stage_stats();
  else if (name == "report") result = stage_report();
  else if (name == "audit-serve") throw ConfigError("audit-serve is interactive; use serve_audit");
  else throw ConfigError("unknown stage: " + name);
  return manifest_["stages"][name];
}

void Pipeline::run_all() {
  for (const auto& s : batch_stages()) run_stage(s);
}

// ---- ingest --------------------------------------------------------------

json Pipeline::stage_ingest() {
  struct Job {
    std::size_t registry;
    std::string sector;
  };
  std::vector<Job> jobs;
  for (std::size_t r = 0; r < config_.ingest.registries.size(); ++r) {
    for (auto sector : kQuerySectors) {
      if (config_.ingest.sector_queries.count(std::string(sector))) jobs.push_back({r, std::string(sector)});
    }
  }
  if (jobs.empty()) throw ConfigError("no registries or sector queries configured");

  std::vector<ingest::Page> pages(jobs.size());
  parallel_for(jobs.size(), config_.concurrency, [&](std::size_t i) {
    ingest::RegistryClient client(config_.ingest.registries[jobs[i].registry], cache_);
    pages[i] = client.crawl(jobs[i].sector, config_.ingest.sector_queries.at(jobs[i].sector));
  });

  std::vector<SourceRecord> all;
  std::vector<json> quarantine;
  json warnings = json::array();
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    all.insert(all.end(), pages[i].records.begin(), pages[i].records.end());
    for (const auto& q : pages[i].quarantined) {
      quarantine.push_back({{"registry", q.registry}, {"sector", q.sector}, {"reason", q.reason}, {"raw", q.raw}});
    }
    if (pages[i].next_cursor) {
      warnings.push_back("page budget exhausted for " + config_.ingest.registries[jobs[i].registry].name + "/" +
                         jobs[i].sector);
    }
  }
  std::vector<std::string> order;
  for (const auto& r : config_.ingest.registries) order.push_back(r.name);
  const auto merged = ingest::merge_dedup(all, order);
  for (const auto& q : merged.quarantined) {
    quarantine.push_back({{"registry", q.registry}, {"sector", q.sector}, {"reason", q.reason}, {"raw", q.raw}});
  }

  json strata = json::object();
  for (const auto& [reg, n] : merged.strata.per_registry) strata[reg] = n;
  std::size_t missing_abstract = 0;
  for (const auto& r : merged.corpus) missing_abstract += r.abstract_missing() ? 1 : 0;

  write_jsonl("corpus.jsonl", records_json(merged.corpus));
  write_jsonl("ingest_quarantine.jsonl", quarantine);
  write_output("strata.json", json{{"strata", strata}, {"total", merged.strata.total}, {"order", order}}.dump(2) + "\n");
  record("ingest", {},
         {{"counts",
           {{"harvested", all.size()}, {"corpus", merged.corpus.size()}, {"strata", strata},
            {"quarantined", quarantine.size()}, {"missing_abstract", missing_abstract}}},
          {"warnings", warnings}});
  return {};
}

// ---- gates ---------------------------------------------------------------

json Pipeline::stage_screen() {
  require_inputs("screen", {"corpus.jsonl"});
  const auto corpus = read_records(path("corpus.jsonl"));
  auto& client = model();
  const auto& p = prompt("relevance");

  std::vector<GateDecision> decisions(corpus.size());
  parallel_for(corpus.size(), config_.concurrency, [&](std::size_t i) {
    const auto& r = corpus[i];
    GateDecision d{r.doi, "relevance", "", DecisionStatus::Ok, "", "", p.version, {}};
    if (r.abstract_missing()) {
      d.verdict = std::string(gates::kNotRelevantToken);
      d.reason = "empty abstract";
      d.prompt_version.clear();
    } else {
      const auto reply = client.complete(r.doi, p, p.render_system({}),
                                         p.render_user({{"title", r.title}, {"abstract", r.abstract}, {"venue", r.venue}}));
      d.raw_output = reply.text;
      d.model_meta = reply.meta;
      try {
        d.verdict = std::string(gates::to_string(gates::parse_relevance(reply.text)));
      } catch (const ContractViolation& e) {
        d.status = DecisionStatus::ContractViolation;
        d.reason = e.reason();
      }
    }
    decisions[i] = std::move(d);
  });

  std::vector<json> ledger;
  std::vector<SourceRecord> relevant;
  std::size_t not_relevant = 0, violations = 0, evaluated = 0, empty = 0;
  MetaSpan span;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& d = decisions[i];
    ledger.push_back(gates::to_json(d));
    span.add(d.model_meta);
    if (!d.raw_output.empty() || d.status != DecisionStatus::Ok) ++evaluated;
    if (d.status == DecisionStatus::ContractViolation) {
      ++violations;
    } else if (d.verdict == gates::kRelevantToken) {
      relevant.push_back(corpus[i]);
    } else {
      ++not_relevant;
      if (d.reason == "empty abstract") ++empty;
    }
  }
  write_jsonl("gate_ledger/relevance.jsonl", ledger);
  check_budget("screen", violations, evaluated);
  write_jsonl("relevant.jsonl", records_json(relevant));
  record("screen", {"corpus.jsonl"},
         {{"counts", {{"input", corpus.size()}, {"relevant", relevant.size()}, {"not_relevant", not_relevant},
                      {"empty_abstract", empty}, {"contract_violations", violations}}},
          {"prompt_version", p.version},
          {"model", span.to_json()}});
  return {};
}

json Pipeline::stage_sectors() {
  require_inputs("sectors", {"relevant.jsonl"});
  const auto relevant = read_records(path("relevant.jsonl"));
  auto& client = model();
  const auto& p = prompt("sector");

  std::vector<GateDecision> decisions(relevant.size());
  parallel_for(relevant.size(), config_.concurrency, [&](std::size_t i) {
    const auto& r = relevant[i];
    const auto reply = client.complete(
        r.doi, p, p.render_system({}),
        p.render_user({{"title", r.title}, {"abstract", r.abstract}, {"keywords", keywords_text(r)}, {"venue", r.venue}}));
    GateDecision d{r.doi, "sector", "", DecisionStatus::Ok, "", reply.text, p.version, reply.meta};
    try {
      d.verdict = gates::parse_sector(reply.text);
    } catch (const ContractViolation& e) {
      d.status = DecisionStatus::Quarantined;
      d.reason = e.reason();
    }
    decisions[i] = std::move(d);
  });

  std::vector<json> ledger, quarantine;
  std::map<std::string, std::string> labels;
  MetaSpan span;
  for (const auto& d : decisions) {
    ledger.push_back(gates::to_json(d));
    span.add(d.model_meta);
    if (d.status == DecisionStatus::Ok) {
      labels[d.doi] = d.verdict;
    } else {
      quarantine.push_back({{"doi", d.doi}, {"reason", d.reason}, {"raw_output", d.raw_output}});
    }
  }
  const auto filtered = gates::apply_sector_match_filter(labels, relevant);

  std::vector<io::CsvRow> rows;
  for (auto s : kQuerySectors) {
    const std::string k(s);
    rows.push_back({k, std::to_string(filtered.assigned_counts.count(k) ? filtered.assigned_counts.at(k) : 0),
                    std::to_string(filtered.included_counts.count(k) ? filtered.included_counts.at(k) : 0)});
  }
  const std::string none(kNoneOfTheAbove);
  rows.push_back({none, std::to_string(filtered.assigned_counts.count(none) ? filtered.assigned_counts.at(none) : 0), "0"});
  std::map<std::string, std::size_t> quarantined_tokens;
  for (const auto& q : quarantine) ++quarantined_tokens[std::string(text::trim(q["raw_output"].get<std::string>()))];
  for (const auto& [tok, n] : quarantined_tokens) rows.push_back({"quarantined:" + tok, std::to_string(n), "0"});

  write_jsonl("gate_ledger/sector.jsonl", ledger);
  write_jsonl("sector_quarantine.jsonl", quarantine);
  write_jsonl("included.jsonl", records_json(filtered.included));
  write_output("sector_counts.csv", io::to_csv({"sector", "assigned", "included"}, rows));
  record("sectors", {"relevant.jsonl"},
         {{"counts", {{"input", relevant.size()}, {"labeled", labels.size()}, {"quarantined", quarantine.size()},
                      {"included", filtered.included.size()}}},
          {"prompt_version", p.version},
          {"model", span.to_json()}});
  return {};
}

json Pipeline::stage_extract() {
  require_inputs("extract", {"included.jsonl"});
  const auto included = read_records(path("included.jsonl"));
  auto& client = model();
  const auto& p = prompt("predictors");

  struct Out {
    GateDecision decision;
    gates::PredictorParse parse;
  };
  std::vector<Out> outs(included.size());
  parallel_for(included.size(), config_.concurrency, [&](std::size_t i) {
    const auto& r = included[i];
    Out o;
    o.decision = {r.doi, "predictors", "", DecisionStatus::Ok, "", "", p.version, {}};
    if (r.abstract_missing()) {
      o.decision.reason = "empty abstract";
      o.decision.verdict = "0";
    } else {
      const auto reply = client.complete(r.doi, p, p.render_system({}),
                                         p.render_user({{"title", r.title}, {"venue", r.venue}, {"abstract", r.abstract},
                                                        {"industry", r.searched_sector}}));
      o.decision.raw_output = reply.text;
      o.decision.model_meta = reply.meta;
      try {
        o.parse = gates::parse_predictors(reply.text, r.abstract, r.doi);
        o.decision.verdict = std::to_string(o.parse.mentions.size());
      } catch (const ContractViolation& e) {
        o.decision.status = DecisionStatus::ContractViolation;
        o.decision.reason = e.reason();
      }
    }
    outs[i] = std::move(o);
  });

  std::vector<json> ledger, mentions, dropped;
  std::size_t violations = 0, with_predictors = 0;
  MetaSpan span;
  for (const auto& o : outs) {
    ledger.push_back(gates::to_json(o.decision));
    span.add(o.decision.model_meta);
    if (o.decision.status == DecisionStatus::ContractViolation) ++violations;
    if (!o.parse.mentions.empty()) ++with_predictors;
    for (const auto& m : o.parse.mentions) mentions.push_back(gates::to_json(m));
    for (const auto& d : o.parse.dropped) {
      dropped.push_back({{"doi", o.decision.doi}, {"name", d.name}, {"evidence", d.evidence}, {"reason", d.reason}});
    }
  }
  write_jsonl("gate_ledger/predictors.jsonl", ledger);
  check_budget("extract", violations, included.size());
  write_jsonl("predictors.jsonl", mentions);
  write_jsonl("dropped_mentions.jsonl", dropped);
  record("extract", {"included.jsonl"},
         {{"counts", {{"input", included.size()}, {"with_predictors", with_predictors}, {"mentions", mentions.size()},
                      {"dropped_mentions", dropped.size()}, {"contract_violations", violations}}},
          {"prompt_version", p.version},
          {"model", span.to_json()}});
  return {};
}

json Pipeline::stage_validate() {
  require_inputs("validate-predictors", {"included.jsonl", "predictors.jsonl"});
  const auto included = read_records(path("included.jsonl"));
  const auto mentions = read_mentions(path("predictors.jsonl"));
  std::map<std::string, std::vector<const gates::PredictorMention*>> by_doi;
  for (const auto& m : mentions) by_doi[m.doi].push_back(&m);
  auto& client = model();
  const auto& p = prompt("predictor_validation");

  struct Out {
    GateDecision decision;
    gates::ValidationGate gate;
  };
  std::vector<Out> outs(included.size());
  parallel_for(included.size(), config_.concurrency, [&](std::size_t i) {
    const auto& r = included[i];
    Out o;
    o.decision = {r.doi, "predictor_validation", "", DecisionStatus::Ok, "", "", p.version, {}};
    const auto it = by_doi.find(r.doi);
    if (it == by_doi.end()) {
      o.gate = {gates::Validity::NotValid, false, "no predictors extracted"};
      o.decision.prompt_version.clear();
    } else {
      json names = json::array();
      for (const auto* m : it->second) names.push_back(m->name);
      const auto reply = client.complete(
          r.doi, p, p.render_system({}),
          p.render_user({{"title", r.title}, {"abstract", r.abstract}, {"predictors", names.dump()}}));
      o.decision.raw_output = reply.text;
      o.decision.model_meta = reply.meta;
      o.gate = gates::gate_predictor_validation(reply.text);
    }
    o.decision.verdict = std::string(gates::to_string(o.gate.verdict));
    o.decision.reason = o.gate.reason;
    if (o.gate.contract_violation) o.decision.status = DecisionStatus::ContractViolation;
    outs[i] = std::move(o);
  });

  std::vector<json> ledger, valid_records, valid_mentions;
  std::size_t violations = 0, evaluated = 0, valid = 0;
  std::map<std::string, std::size_t> per_sector;
  MetaSpan span;
  for (std::size_t i = 0; i < outs.size(); ++i) {
    const auto& o = outs[i];
    ledger.push_back(gates::to_json(o.decision));
    span.add(o.decision.model_meta);
    if (!o.decision.raw_output.empty()) ++evaluated;
    if (o.gate.contract_violation) ++violations;
    if (o.gate.verdict == gates::Validity::Valid) {
      ++valid;
      ++per_sector[included[i].searched_sector];
      valid_records.push_back(ingest::to_json(included[i]));
      for (const auto* m : by_doi[included[i].doi]) valid_mentions.push_back(gates::to_json(*m));
    }
  }
  std::vector<io::CsvRow> rows;
  for (auto s : kQuerySectors) {
    const std::string k(s);
    rows.push_back({k, std::to_string(per_sector.count(k) ? per_sector[k] : 0)});
  }
  write_jsonl("gate_ledger/predictor_validation.jsonl", ledger);
  write_jsonl("validated.jsonl", valid_records);
  write_jsonl("validated_predictors.jsonl", valid_mentions);
  write_output("validation_by_sector.csv", io::to_csv({"sector", "valid"}, rows));
  record("validate-predictors", {"included.jsonl", "predictors.jsonl"},
         {{"counts", {{"input", included.size()}, {"valid", valid}, {"not_valid", included.size() - valid},
                      {"contract_violations_gated_not_valid", violations}, {"predictor_mentions", valid_mentions.size()}}},
          {"prompt_version", p.version},
          {"model", span.to_json()}});
  (void)evaluated;
  return {};
}

json Pipeline::stage_map_rdc() {
  require_inputs("map-rdc", {"validated_predictors.jsonl"});
  auto mentions = read_mentions(path("validated_predictors.jsonl"));
  // One assignment per globally distinct normalized name.
  std::map<std::string, std::string> display;
  for (const auto& m : mentions) display.emplace(text::normalize_name(m.name), m.name);
  std::vector<std::string> keys;
  for (const auto& [k, _] : display) keys.push_back(k);

  auto& client = model();
  const auto& p = prompt("rdc");
  std::vector<GateDecision> decisions(keys.size());
  std::vector<std::optional<gates::RdcAssignment>> assigned(keys.size());
  parallel_for(keys.size(), config_.concurrency, [&](std::size_t i) {
    const auto& name = display.at(keys[i]);
    const auto reply = client.complete(keys[i], p, p.render_system({}), p.render_user({{"predictor_name", name}}));
    GateDecision d{keys[i], "rdc", "", DecisionStatus::Ok, "", reply.text, p.version, reply.meta};
    try {
      assigned[i] = gates::parse_rdc(reply.text);
      d.verdict = assigned[i]->rdc;
    } catch (const ContractViolation& e) {
      d.status = DecisionStatus::ContractViolation;
      d.reason = e.reason();
    }
    decisions[i] = std::move(d);
  });

  std::map<std::string, gates::RdcAssignment> by_name;
  std::vector<json> ledger;
  std::size_t violations = 0;
  std::map<std::string, std::size_t> distribution;
  MetaSpan span;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    ledger.push_back(gates::to_json(decisions[i]));
    span.add(decisions[i].model_meta);
    if (assigned[i]) {
      by_name[keys[i]] = *assigned[i];
      ++distribution[assigned[i]->rdc];
    } else {
      ++violations;
    }
  }
  std::vector<json> out;
  std::size_t unmapped = 0;
  for (auto& m : mentions) {
    const auto it = by_name.find(text::normalize_name(m.name));
    if (it == by_name.end()) {
      ++unmapped;
      continue;
    }
    m.rdc = it->second.rdc;
    m.rationale = it->second.rationale;
    out.push_back(gates::to_json(m));
  }
  std::vector<io::CsvRow> rows;
  for (auto t : kRdcTokens) {
    const std::string k(t);
    rows.push_back({k, std::to_string(distribution.count(k) ? distribution[k] : 0)});
  }
  write_jsonl("gate_ledger/rdc.jsonl", ledger);
  check_budget("map-rdc", violations, keys.size());
  write_jsonl("rdc_predictors.jsonl", out);
  write_output("rdc_assignment.csv", io::to_csv({"rdc", "unique_predictors"}, rows));
  record("map-rdc", {"validated_predictors.jsonl"},
         {{"counts", {{"unique_predictors", keys.size()}, {"mentions", mentions.size()}, {"mapped_mentions", out.size()},
                      {"unmapped_mentions", unmapped}, {"contract_violations", violations}}},
          {"prompt_version", p.version},
          {"model", span.to_json()}});
  return {};
}

// ---- legal ---------------------------------------------------------------

json Pipeline::stage_catalog() {
  if (config_.legal_documents.empty()) throw ConfigError("no legal_documents configured");
  auto& client = model();
  const auto& p = prompt("legal_tag");

  struct Item {
    std::string regulation;
    legal::SegmentedPassage passage;
  };
  std::vector<Item> items;
  json warnings = json::array();
  json sources = json::object();
  for (const auto& doc : config_.legal_documents) {
    if (!fs::exists(doc.path)) throw ConfigError("legal document not found: " + doc.path.string());
    const auto text = io::read_file(doc.path);
    const auto stored = legal::store_source_document(path("legal_sources"), text);
    sources[doc.regulation] = stored.filename().string();
    auto seg = legal::segment_passages(text, doc.regulation);
    for (const auto& w : seg.warnings) warnings.push_back(doc.regulation + ": " + w);
    for (auto& s : seg.passages) items.push_back({doc.regulation, std::move(s)});
  }

  std::vector<GateDecision> decisions(items.size());
  std::vector<std::optional<legal::LegalPassage>> tagged(items.size());
  parallel_for(items.size(), config_.concurrency, [&](std::size_t i) {
    const auto& it = items[i];
    const std::string id = it.regulation + "|" + it.passage.article_ref + "|" + it.passage.checksum;
    const auto reply = client.complete(
        id, p, p.render_system({}),
        p.render_user({{"regulation", it.regulation}, {"article_ref", it.passage.article_ref}, {"fragment", it.passage.text}}));
    GateDecision d{id, "legal_tag", "", DecisionStatus::Ok, "", reply.text, p.version, reply.meta};
    try {
      tagged[i] = legal::tag_passage(reply.text, it.regulation, it.passage);
      d.verdict = tagged[i] ? "retained" : "dropped";
    } catch (const ContractViolation& e) {
      d.status = DecisionStatus::Quarantined;
      d.reason = e.reason();
    }
    decisions[i] = std::move(d);
  });

  std::vector<legal::LegalPassage> retained;
  std::vector<json> ledger;
  std::size_t dropped = 0, quarantined = 0;
  MetaSpan span;
  for (std::size_t i = 0; i < items.size(); ++i) {
    ledger.push_back(gates::to_json(decisions[i]));
    span.add(decisions[i].model_meta);
    if (decisions[i].status != DecisionStatus::Ok) ++quarantined;
    else if (tagged[i]) retained.push_back(*tagged[i]);
    else ++dropped;
  }
  const legal::Catalog catalog(retained);
  json tag_counts = json::object();
  for (auto t : kRdcTokens) tag_counts[std::string(t)] = catalog.count_tagged(t);

  write_jsonl("gate_ledger/legal_tag.jsonl", ledger);
  std::vector<json> rows;
  for (const auto& ps : catalog.passages()) rows.push_back(legal::to_json(ps));
  write_jsonl("catalog.jsonl", rows);
  write_output("regulations.csv", legal::regulation_table_csv());
  for (const auto& [reg, file] : sources.items()) written_.push_back("legal_sources/" + file.get<std::string>());
  record("catalog", {},
         {{"counts", {{"segmented", items.size()}, {"retained", retained.size()}, {"dropped", dropped},
                      {"quarantined", quarantined}, {"passages_tagged", tag_counts}}},
          {"sources", sources},
          {"warnings", warnings},
          {"prompt_version", p.version},
          {"model", span.to_json()}});
  return {};
}

// ---- pairing -------------------------------------------------------------

json Pipeline::stage_pairs() {
  const std::vector<std::string> inputs = {"rdc_predictors.jsonl", "catalog.jsonl", "validated.jsonl"};
  require_inputs("pairs", inputs);
  const auto mentions = read_mentions(path("rdc_predictors.jsonl"));
  const auto catalog = legal::Catalog::load(path("catalog.jsonl"));
  std::map<std::string, SourceRecord> records;
  for (auto& r : read_records(path("validated.jsonl"))) records.emplace(r.doi, std::move(r));
  std::map<std::string, std::string> rationale;
  for (const auto& m : mentions) rationale[m.doi + "|" + m.name] = m.rationale;

  const auto note_for = [&rationale](const pairing::CandidatePair& pair) {
    const auto it = rationale.find(pair.doi + "|" + pair.predictor);
    return it == rationale.end() ? std::string() : it->second;
  };
  const auto pairs = pairing::build_candidate_pairs(mentions, catalog);
  auto& client = model();
  const auto& p = prompt("pair_status");
  std::vector<pairing::PairRecord> recs(pairs.size());
  std::vector<gates::ModelMeta> metas(pairs.size());
  parallel_for(pairs.size(), config_.concurrency, [&](std::size_t i) {
    const auto& pair = pairs[i];
    const auto context = pairing::assemble_context(pair.predictor, pair.rdc, pair.regulation, catalog);
    const auto reply = client.complete(
        pair.id(), p, p.render_system({{"predictor_name", pair.predictor}, {"attribute_class", pair.rdc}}),
        p.render_user({{"predictor_name", pair.predictor},
                       {"attribute_class", pair.rdc},
                       {"notes", note_for(pair)},
                       {"regulatory_context", pairing::render_context(context)}}));
    auto verdict = pairing::resolve_refs(pairing::parse_verdict(reply.text), pair, catalog);
    recs[i] = {pair, reply.text, std::move(verdict)};
    metas[i] = reply.meta;
  });

  const auto retention = pairing::retain_final(recs);
  std::vector<json> ledger, finals;
  MetaSpan span;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    ledger.push_back(pairing::to_json(recs[i]));
    span.add(metas[i]);
  }
  for (const auto& r : retention.final_set) {
    const auto it = records.find(r.pair.doi);
    if (it == records.end()) throw DataIntegrityError("final pair for DOI outside the validated set: " + r.pair.doi);
    finals.push_back({{"doi", r.pair.doi},
                      {"predictor", r.pair.predictor},
                      {"rdc", r.pair.rdc},
                      {"regulation", r.pair.regulation},
                      {"sector", it->second.searched_sector},
                      {"year", it->second.year ? json(*it->second.year) : json("unknown")},
                      {"refs", r.verdict.refs}});
  }
  const auto acct = pairing::dedup_accounting(mentions, pairs);
  std::size_t other_tagged = catalog.count_tagged("Other");
  std::size_t other_mentions = 0;
  for (const auto& m : mentions) other_mentions += (m.rdc && *m.rdc == "Other") ? 1 : 0;

  const auto& c = retention.counts;
  json by_conf = json::object();
  for (const auto& [k, v] : c.regulated_by_confidence) by_conf[k] = v;
  write_jsonl("pair_ledger.jsonl", ledger);
  write_jsonl("final_pairs.jsonl", finals);
  write_output("pair_summary.csv", pairing::summary_csv(c));
  write_output("pair_accounting.json",
               json{{"per_doi_predictors", acct.per_doi_predictors}, {"global_predictors", acct.global_predictors},
                    {"per_doi_pairs", acct.per_doi_pairs}, {"global_pairs", acct.global_pairs},
                    {"other_class_mentions", other_mentions}, {"passages_tagged_other", other_tagged}}
                       .dump(2) + "\n");
  record("pairs", inputs,
         {{"counts", {{"formed", c.formed}, {"regulated", c.regulated}, {"not_regulated", c.not_regulated},
                      {"downgraded", c.downgraded}, {"regulated_by_confidence", by_conf}, {"retained", c.retained}}},
          {"prompt_version", p.version},
          {"model", span.to_json()}});
  return {};
}

// ---- audit ---------------------------------------------------------------

json Pipeline::stage_audit_plan() {
  const std::vector<std::string> inputs = {"corpus.jsonl",         "strata.json",          "gate_ledger/relevance.jsonl",
                                           "gate_ledger/sector.jsonl", "included.jsonl",   "gate_ledger/predictor_validation.jsonl",
                                           "predictors.jsonl",     "rdc_predictors.jsonl", "pair_ledger.jsonl",
                                           "catalog.jsonl"};
  require_inputs("audit-plan", inputs);
  const auto corpus = read_records(path("corpus.jsonl"));
  const json strata_doc = json::parse(io::read_file(path("strata.json")));
  ingest::CorpusStrata strata;
  for (const auto& reg : strata_doc.at("order")) {
    const auto name = reg.get<std::string>();
    strata.per_registry.emplace_back(name, strata_doc.at("strata").value(name, std::size_t{0}));
  }
  strata.total = strata_doc.at("total").get<std::size_t>();
  const auto plan = audit::plan_sample(strata, config_.audit_sample_size);
  const auto sample = audit::draw_sample(corpus, plan, config_.seed);

  std::map<std::string, const SourceRecord*> by_doi;
  for (const auto& r : corpus) by_doi[r.doi] = &r;
  auto ledger_map = [&](const std::string& rel) {
    std::map<std::string, json> m;
    for (const auto& row : io::read_jsonl(path(rel))) m[row.at("doi").get<std::string>()] = row;
    return m;
  };
  const auto relevance = ledger_map("gate_ledger/relevance.jsonl");
  const auto sector = ledger_map("gate_ledger/sector.jsonl");
  const auto validation = ledger_map("gate_ledger/predictor_validation.jsonl");
  std::set<std::string> included;
  for (const auto& r : read_records(path("included.jsonl"))) included.insert(r.doi);
  std::map<std::string, std::vector<gates::PredictorMention>> extracted, mapped;
  for (const auto& m : read_mentions(path("predictors.jsonl"))) extracted[m.doi].push_back(m);
  for (const auto& m : read_mentions(path("rdc_predictors.jsonl"))) mapped[m.doi].push_back(m);
  std::map<std::string, std::vector<pairing::PairRecord>> pair_recs;
  for (const auto& row : io::read_jsonl(path("pair_ledger.jsonl"))) {
    auto r = pairing::pair_record_from_json(row);
    pair_recs[r.pair.doi].push_back(std::move(r));
  }
  const auto catalog = legal::Catalog::load(path("catalog.jsonl"));

  std::vector<audit::AuditItem> items;
  for (const auto& [doi, stratum] : sample) {
    const auto& rec = *by_doi.at(doi);
    const double w = plan.stratum(stratum).weight;
    const auto rel = relevance.find(doi);
    if (rel != relevance.end() && rel->second.at("status") == "ok") {
      items.push_back({"relevance:" + doi, audit::AuditStage::Relevance, stratum, w,
                       {{"title", rec.title}, {"abstract", rec.abstract}, {"venue", rec.venue}},
                       {{"label", rel->second.at("verdict")}}});
    }
    const auto sec = sector.find(doi);
    if (sec != sector.end() && sec->second.at("status") == "ok") {
      items.push_back({"sector:" + doi, audit::AuditStage::Sector, stratum, w,
                       {{"title", rec.title}, {"abstract", rec.abstract}, {"keywords", rec.keywords}, {"venue", rec.venue}},
                       {{"label", sec->second.at("verdict")}, {"gate_pass", sec->second.at("verdict") == rec.searched_sector}}});
    }
    if (included.count(doi)) {
      json names = json::array();
      for (const auto& m : extracted[doi]) names.push_back(m.name);
      const auto v = validation.find(doi);
      if (v != validation.end()) {
        items.push_back({"predictor:" + doi, audit::AuditStage::Predictor, stratum, w,
                         {{"title", rec.title}, {"abstract", rec.abstract}, {"predictors", names}},
                         {{"label", v->second.at("verdict")}}});
      }
    }
    for (const auto& m : mapped[doi]) {
      items.push_back({"rdc:" + doi + "|" + m.name, audit::AuditStage::Rdc, stratum, w,
                       {{"predictor", m.name}, {"evidence", m.evidence}}, {{"label", *m.rdc}, {"rationale", m.rationale}}});
    }
    for (const auto& r : pair_recs[doi]) {
      json fragments = json::array();
      for (const auto& ref : r.pair.context) {
        if (const auto* ps = catalog.find(r.pair.regulation, ref)) {
          fragments.push_back({{"article_ref", ps->article_ref}, {"text", ps->text}});
        }
      }
      const std::string label = std::string(pairing::to_string(r.verdict.status)) + "+" +
                                std::string(pairing::to_string(r.verdict.confidence));
      items.push_back({"pair-status:" + r.pair.id(), audit::AuditStage::PairStatus, stratum, w,
                       {{"predictor", r.pair.predictor}, {"rdc", r.pair.rdc}, {"regulation", r.pair.regulation},
                        {"fragments", fragments}},
                       {{"label", label}, {"rationale", r.verdict.rationale}}});
    }
  }

  std::vector<json> tasks, ai_labels;
  std::map<audit::AuditStage, std::vector<audit::AuditTask>> per_stage;
  for (const auto& it : items) {
    auto t = audit::blind_view(it, it.stage);
    tasks.push_back(audit::to_json(t));
    json row{{"task_id", it.id}, {"stage", audit::to_string(it.stage)}, {"ai_label", it.ai.at("label")},
             {"weight", it.weight}, {"stratum", it.stratum}};
    if (it.ai.contains("gate_pass")) row["gate_pass"] = it.ai.at("gate_pass");
    ai_labels.push_back(std::move(row));
    per_stage[it.stage].push_back(std::move(t));
  }
  json sampled = json::array();
  for (const auto& [doi, stratum] : sample) sampled.push_back({{"doi", doi}, {"stratum", stratum}});

  write_output("audit/plan.json", json{{"plan", audit::to_json(plan)},
                                       {"seed", config_.seed},
                                       {"moe_fpc_p05", audit::moe_fpc(0.5, plan.total, static_cast<std::int64_t>(strata.total))},
                                       {"sample", sampled}}
                                      .dump(2) + "\n");
  write_jsonl("audit/tasks.jsonl", tasks);
  write_jsonl("audit/ai_labels.jsonl", ai_labels);
  json counts = json::object();
  for (const auto& [stage, ts] : per_stage) {
    const std::string name(audit::to_string(stage));
    write_output("audit/tasks_" + name + ".csv", audit::export_tasks_csv(ts));
    counts[name] = ts.size();
  }
  record("audit-plan", inputs, {{"counts", {{"sampled", sample.size()}, {"tasks", counts}}}, {"seed", config_.seed}});
  return {};
}

void Pipeline::serve_audit(const std::function<void(int)>& on_ready, const std::function<bool()>& keep_running) {
  require_inputs("audit-serve", {"audit/tasks.jsonl"});
  std::vector<audit::AuditTask> tasks;
  for (const auto& row : io::read_jsonl(path("audit/tasks.jsonl"))) tasks.push_back(audit::task_from_json(row));
  audit::AuditQueue queue(std::move(tasks), path("audit/labels.jsonl"), config_.claim_timeout);
  audit::AuditServer server(queue);
  const int port = server.start(config_.audit_host, config_.audit_port);
  if (on_ready) on_ready(port);
  while (!keep_running || keep_running()) std::this_thread::sleep_for(std::chrono::milliseconds(200));
  server.stop();
}

json Pipeline::stage_audit_metrics() {
  const std::vector<std::string> inputs = {"audit/tasks.jsonl", "audit/ai_labels.jsonl"};
  require_inputs("audit-metrics", inputs);
  struct Ai {
    std::string stage, label, stratum;
    double weight;
    bool gate_pass;
  };
  std::map<std::string, Ai> ai;
  for (const auto& row : io::read_jsonl(path("audit/ai_labels.jsonl"))) {
    ai[row.at("task_id").get<std::string>()] = {row.at("stage").get<std::string>(), row.at("ai_label").get<std::string>(),
                                                row.at("stratum").get<std::string>(), row.at("weight").get<double>(),
                                                row.value("gate_pass", true)};
  }

  std::map<std::string, std::string> human;
  auto take = [&](const audit::LabelRecord& l) {
    if (!ai.count(l.task_id)) throw DataIntegrityError("label for unknown task " + l.task_id);
    if (!human.emplace(l.task_id, l.human_label).second) {
      throw DataIntegrityError("task " + l.task_id + " labeled more than once");
    }
  };
  std::vector<fs::path> sources = config_.label_files;
  if (fs::exists(path("audit/labels.jsonl"))) sources.insert(sources.begin(), path("audit/labels.jsonl"));
  for (const auto& src : sources) {
    if (!fs::exists(src)) throw ConfigError("label file not found: " + src.string());
    if (src.extension() == ".jsonl") {
      for (const auto& row : io::read_jsonl(src)) take(audit::label_from_json(row));
    } else {
      const auto csv = io::read_file(src);
      const auto rows = io::parse_csv(csv);
      if (rows.size() < 2) continue;
      std::size_t stage_col = rows[0].size();
      for (std::size_t i = 0; i < rows[0].size(); ++i) {
        if (rows[0][i] == "stage") stage_col = i;
      }
      if (stage_col == rows[0].size()) throw DataIntegrityError("label CSV lacks a stage column: " + src.string());
      const auto stage = audit::audit_stage_from_string(rows[1][stage_col]);
      for (const auto& l : audit::import_labels_csv(csv, stage)) take(l);
    }
  }

  json stages = json::object();
  std::map<std::string, std::optional<double>> precision;
  for (auto st : {audit::AuditStage::Relevance, audit::AuditStage::Sector, audit::AuditStage::Predictor,
                  audit::AuditStage::Rdc, audit::AuditStage::PairStatus}) {
    const std::string name(audit::to_string(st));
    std::vector<audit::CategoricalLabel> cats, gated;
    std::size_t total = 0;
    for (const auto& [id, a] : ai) {
      if (a.stage != name) continue;
      ++total;
      const auto h = human.find(id);
      if (h == human.end()) continue;
      cats.push_back({a.label, h->second, a.weight});
      if (a.gate_pass) gated.push_back(cats.back());
    }
    json s{{"tasks", total}, {"labeled", cats.size()}};
    const auto kappa_multi = audit::cohen_kappa(cats);
    if (st == audit::AuditStage::Sector || st == audit::AuditStage::Rdc) {
      // Sector precision is the agreement rate among records that passed the sector gate.
      const auto agree = audit::weighted_agreement(st == audit::AuditStage::Sector ? gated : cats);
      if (st == audit::AuditStage::Sector) {
        const auto kg = audit::cohen_kappa(gated);
        s["gate_pass"] = {{"labeled", gated.size()}, {"kappa", opt_json(kg.kappa)},
                          {"observed_agreement", kg.observed}, {"expected_agreement", kg.expected}};
      }
      s["agreement"] = opt_json(agree);
      s["kappa"] = opt_json(kappa_multi.kappa);
      s["observed_agreement"] = kappa_multi.observed;
      s["expected_agreement"] = kappa_multi.expected;
      s["kappa_flag"] = kappa_multi.flag;
      precision[name] = agree;
    } else {
      const std::string positive = st == audit::AuditStage::Relevance   ? "Relevant"
                                   : st == audit::AuditStage::Predictor ? "Valid"
                                                                        : "Regulated+High";
      std::vector<audit::WeightedLabel> bin;
      for (const auto& c : cats) bin.push_back({c.ai == positive, c.human == positive, c.weight});
      const auto m = audit::weighted_confusion(bin);
      const auto k = audit::cohen_kappa(m.confusion);
      s["positive"] = positive;
      s["confusion"] = {{"tp", m.confusion.tp}, {"fp", m.confusion.fp}, {"fn", m.confusion.fn}, {"tn", m.confusion.tn}};
      s["precision"] = opt_json(m.precision);
      s["recall"] = opt_json(m.recall);
      s["miss_rate"] = opt_json(m.miss_rate);
      s["kappa"] = opt_json(k.kappa);
      s["observed_agreement"] = k.observed;
      s["expected_agreement"] = k.expected;
      s["kappa_flag"] = k.flag;
      precision[name] = m.precision;
    }
    stages[name] = s;
  }
  json prec{{"relevance", opt_json(precision["relevance"])},
            {"domain", opt_json(precision["sector"])},
            {"predictor", opt_json(precision["predictor"])},
            {"rdc_match", opt_json(precision["rdc"])},
            {"status", opt_json(precision["pair-status"])}};
  write_output("audit/metrics.json", json{{"stages", stages}, {"precisions", prec}}.dump(2) + "\n");
  record("audit-metrics", inputs, {{"counts", {{"labels", human.size()}}}});
  return {};
}

json Pipeline::stage_correct() {
  audit::StagePrecisions p;
  std::vector<std::string> inputs;
  std::string source;
  if (config_.precisions) {
    p = *config_.precisions;
    source = "config";
  } else {
    inputs = {"audit/metrics.json"};
    require_inputs("correct", inputs);
    const auto m = json::parse(io::read_file(path("audit/metrics.json"))).at("precisions");
    std::vector<std::string> undefined;
    auto get = [&](const char* key) {
      const auto v = opt_number(m, key);
      if (!v) undefined.push_back(key);
      return v.value_or(0.0);
    };
    p = {get("relevance"), get("domain"), get("predictor"), get("rdc_match"), get("status")};
    if (!undefined.empty()) {
      throw DataIntegrityError("audit metrics leave stage precisions undefined: " + text::join(undefined, ", "));
    }
    source = "audit";
  }
  const auto ms = audit::compound_multiplier(p, config_.phi_r);
  json out = audit::to_json(ms);
  out["source"] = source;

  json adjusted = json::object();
  if (fs::exists(path("final_pairs.jsonl"))) {
    inputs.push_back("final_pairs.jsonl");
    require_inputs("correct", {"final_pairs.jsonl"});
    const auto finals = io::read_jsonl(path("final_pairs.jsonl"));
    std::set<std::string> dois;
    for (const auto& f : finals) dois.insert(f.at("doi").get<std::string>());
    const auto t = audit::adjust_counts(static_cast<double>(finals.size()), ms, audit::MetricKind::PairTally);
    const auto d = audit::adjust_counts(static_cast<double>(dois.size()), ms, audit::MetricKind::UniquePapers);
    adjusted = {{"regulated_high_pairs", {{"raw", finals.size()}, {"adjusted", t.value}, {"scaled", t.scaled}}},
                {"unique_dois", {{"raw", dois.size()}, {"adjusted", d.value}, {"scaled", d.scaled}, {"note", d.note}}}};
  }
  out["adjusted_counts"] = adjusted;
  write_output("multipliers.json", out.dump(2) + "\n");
  record("correct", inputs, {{"counts", {{"S", ms.compound}, {"m_other", ms.m_other}}}, {"source", source}});
  return {};
}

// ---- stats ---------------------------------------------------------------

namespace {

std::vector<stats::FinalPair> read_final_pairs(const fs::path& p) {
  std::vector<stats::FinalPair> out;
  for (const auto& row : io::read_jsonl(p)) {
    stats::FinalPair f{row.at("doi").get<std::string>(), row.at("predictor").get<std::string>(),
                       row.at("rdc").get<std::string>(), row.at("regulation").get<std::string>(),
                       row.at("sector").get<std::string>(), std::nullopt};
    if (row.at("year").is_number_integer()) f.year = row.at("year").get<int>();
    out.push_back(std::move(f));
  }
  return out;
}

json fit_or_error(const std::function<stats::FitResult()>& fit, std::vector<stats::Effect>* effects) {
  try {
    const auto f = fit();
    json j = stats::to_json(f);
    if (effects) {
      *effects = stats::derived_effects(f);
      json e = json::array();
      for (const auto& x : *effects) e.push_back(stats::to_json(x));
      j["effects"] = e;
    }
    return j;
  } catch (const ConvergenceError& e) {
    return json{{"error", e.what()}, {"trace", e.trace()}};
  } catch (const std::exception& e) {
    return json{{"error", e.what()}};
  }
}

}  // namespace

json Pipeline::stage_stats() {
  const std::string exposure_file = config_.exposure + ".jsonl";
  const std::vector<std::string> inputs = {"final_pairs.jsonl", "multipliers.json", exposure_file};
  require_inputs("stats", inputs);
  const auto finals = read_final_pairs(path("final_pairs.jsonl"));
  const auto ms = audit::multiplier_from_json(json::parse(io::read_file(path("multipliers.json"))));
  std::map<int, std::int64_t> exposure;
  for (const auto& r : read_records(path(exposure_file))) {
    if (r.year) ++exposure[*r.year];
  }
  const auto mult = [&](const std::string& reg) {
    return config_.per_regulation_multiplier ? ms.for_regulation(reg) : ms.compound;
  };
  const auto panel = stats::build_panel(finals, exposure, mult, {config_.first_year, config_.last_year});

  std::vector<io::CsvRow> rows;
  for (const auto& c : panel.cells) {
    rows.push_back({c.regulation, std::to_string(c.year), std::to_string(c.distinct), io::fmt_double(c.y),
                    std::to_string(c.exposure), std::to_string(c.rel), std::to_string(c.post), io::fmt_double(c.rate)});
  }
  write_output("stats/panel.csv", io::to_csv({"regulation", "year", "distinct", "y", "exposure", "rel", "post", "rate"}, rows));

  json fits = json::object();
  std::vector<stats::Effect> glm_effects, gee_effects;
  if (panel.cells.empty()) {
    fits["error"] = "empty panel";
  } else {
    const auto design = stats::build_its_design(panel.cells);
    fits["glm"] = fit_or_error([&] { return stats::fit_poisson_glm(design); }, &glm_effects);
    fits["gee_ar1"] = fit_or_error([&] { return stats::fit_poisson_gee(design); }, &gee_effects);
    stats::GeeOptions indep;
    indep.correlation = stats::WorkingCorrelation::Independence;
    fits["gee_independence"] = fit_or_error([&] { return stats::fit_poisson_gee(design, indep); }, nullptr);
  }
  fits["exposure_corpus"] = config_.exposure;
  fits["multiplier"] = config_.per_regulation_multiplier ? "S_r" : "S";
  fits["tolerances"] = {{"deviance", stats::FitOptions{}.deviance_tol}, {"coefficient", stats::FitOptions{}.coef_tol},
                        {"max_iter", stats::FitOptions{}.max_iter}};
  fits["panel_warnings"] = panel.warnings;
  write_output("stats/its_fits.json", fits.dump(2) + "\n");

  std::vector<io::CsvRow> eff;
  auto add_effects = [&](const char* model, const std::vector<stats::Effect>& es) {
    for (const auto& e : es) {
      eff.push_back({model, e.name, io::fmt_double(e.estimate), io::fmt_double(e.se), io::fmt_double(e.rr),
                     io::fmt_double(e.ci_low), io::fmt_double(e.ci_high), io::fmt_double(e.p)});
    }
  };
  add_effects("glm", glm_effects);
  add_effects("gee_ar1", gee_effects);
  write_output("stats/effects.csv",
               io::to_csv({"model", "effect", "log_estimate", "se_robust", "rate_ratio", "ci95_low", "ci95_high", "p"}, eff));

  stats::Chi2Options copt;
  copt.scale = ms.compound;
  copt.seed = config_.seed;
  copt.mc_tables = config_.mc_tables;
  json chi2;
  try {
    const auto res = stats::chi2_suite(stats::regulation_rdc_counts(finals), stats::regulation_names(), stats::rdc_names(), copt);
    chi2 = stats::to_json(res);
    write_output("stats/regulation_rdc_residuals.csv", stats::residual_table(res).csv());
  } catch (const std::exception& e) {
    chi2 = {{"error", e.what()}};
  }
  write_output("stats/chi2.json", chi2.dump(2) + "\n");
  record("stats", inputs, {{"counts", {{"panel_cells", panel.cells.size()}, {"final_pairs", finals.size()}}}});
  return {};
}

std::vector<std::string> Pipeline::report_selection_catalog() {
  auto names = stats::report_catalog();
  names.insert(names.end(), {"multipliers", "fits", "chi2"});
  return names;
}

std::vector<fs::path> Pipeline::emit_report(const std::vector<std::string>& selection) {
  std::vector<fs::path> written;
  if (selection.empty()) return written;
  const auto catalog = report_selection_catalog();
  for (const auto& s : selection) {
    if (std::find(catalog.begin(), catalog.end(), s) == catalog.end()) throw ConfigError("unknown report table: " + s);
  }
  auto want = [&](const std::string& n) { return std::find(selection.begin(), selection.end(), n) != selection.end(); };

  std::vector<std::string> deps;
  if (want("multipliers")) deps.push_back("multipliers.json");
  if (want("fits")) deps.push_back("stats/its_fits.json");
  if (want("chi2")) deps.push_back("stats/chi2.json");
  const auto tables = stats::report_catalog();
  const bool any_table = std::any_of(tables.begin(), tables.end(), want);
  if (any_table) deps.insert(deps.end(), {"final_pairs.jsonl", "multipliers.json", "stats/panel.csv"});
  std::sort(deps.begin(), deps.end());
  deps.erase(std::unique(deps.begin(), deps.end()), deps.end());
  require_inputs("report", deps);

  auto copy = [&](const std::string& from, const std::string& to) {
    write_output(to, io::read_file(path(from)));
    written.push_back(path(to));
  };
  if (want("multipliers")) copy("multipliers.json", "report/multipliers.json");
  if (want("fits")) copy("stats/its_fits.json", "report/its_fits.json");
  if (want("chi2")) copy("stats/chi2.json", "report/chi2.json");

  if (any_table) {
    const auto ms = audit::multiplier_from_json(json::parse(io::read_file(path("multipliers.json"))));
    stats::ReportInputs in;
    in.pairs = read_final_pairs(path("final_pairs.jsonl"));
    in.compound = ms.compound;
    if (config_.per_regulation_multiplier) in.per_reg = [ms](const std::string& r) { return ms.for_regulation(r); };
    const auto rows = io::parse_csv(io::read_file(path("stats/panel.csv")));
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const auto& r = rows[i];
      stats::PanelCell c;
      c.regulation = r[0];
      c.year = std::stoi(r[1]);
      c.distinct = std::stoll(r[2]);
      c.y = std::stod(r[3]);
      c.exposure = std::stoll(r[4]);
      c.rel = std::stoi(r[5]);
      c.post = std::stoi(r[6]);
      c.rate = std::stod(r[7]);
      in.panel.push_back(c);
    }
    for (const auto& t : stats::report_tables(in)) {
      if (!want(t.name)) continue;
      write_output("report/" + t.name + ".csv", t.csv());
      written.push_back(path("report/" + t.name + ".csv"));
    }
  }
  return written;
}

json Pipeline::stage_report() {
  const auto selection = config_.report_bundle.empty() ? report_selection_catalog() : config_.report_bundle;
  const auto files = emit_report(selection);
  std::vector<std::string> inputs;
  for (const auto& dep : {"final_pairs.jsonl", "multipliers.json", "stats/panel.csv", "stats/its_fits.json", "stats/chi2.json"}) {
    if (fs::exists(path(dep))) inputs.push_back(dep);
  }
  record("report", inputs, {{"counts", {{"files", files.size()}}}, {"selection", selection}});
  return {};
}

}  // namespace dtreg::pipeline
