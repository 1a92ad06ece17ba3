#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dtreg/audit.hpp"
#include "dtreg/cache.hpp"
#include "dtreg/ingest.hpp"
#include "dtreg/model_client.hpp"

namespace dtreg::pipeline {

using nlohmann::json;
namespace fs = std::filesystem;

// Raised when a stage's contract-violation rate exceeds the configured budget.
class ViolationBudgetExceeded : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct LegalDocument {
  std::string regulation;
  fs::path path;
};

struct PipelineConfig {
  fs::path base_dir;  // relative paths in the file resolve against this
  ingest::IngestConfig ingest;
  ModelConfig model;
  fs::path prompts_dir;
  std::vector<LegalDocument> legal_documents;

  std::size_t concurrency = 8;
  double max_violation_rate = 0.01;

  std::int64_t audit_sample_size = 1000;
  std::uint64_t seed = 20240601;
  std::chrono::seconds claim_timeout{1800};
  std::string audit_host = "127.0.0.1";
  int audit_port = 8787;
  std::vector<fs::path> label_files;  // offline label sheets (CSV) or ledgers (JSONL)

  std::optional<audit::StagePrecisions> precisions;  // overrides audit-derived precisions
  std::map<std::string, double> phi_r;

  std::string exposure = "validated";  // corpus | relevant | included | validated
  std::optional<int> first_year;
  std::optional<int> last_year;
  bool per_regulation_multiplier = false;
  int mc_tables = 10000;

  std::vector<std::string> report_bundle;  // empty selects everything
};

// Parses the JSON config. Secrets are never read from it.
PipelineConfig load_config(const fs::path& path);
PipelineConfig config_from_json(const json& j, const fs::path& base_dir);

// Stage names in DAG order.
const std::vector<std::string>& stage_names();
// Stages run by `run_all` (everything except the interactive audit server).
const std::vector<std::string>& batch_stages();

// Exclusive ownership of an output directory. A lock left behind by a dead
// process is taken over.
class DirectoryLock {
 public:
  explicit DirectoryLock(const fs::path& dir);
  ~DirectoryLock();
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  fs::path path_;
};

// Runs `fn(i)` for i in [0, n) on at most `workers` threads. The first
// exception is rethrown after all workers stop.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

class Pipeline {
 public:
  Pipeline(PipelineConfig config, RunMode mode, fs::path cache_dir, fs::path out_dir);

  // Runs one stage; returns its manifest entry.
  json run_stage(const std::string& name);
  void run_all();

  // emit_report with an explicit selection (names from the report catalog plus
  // "multipliers", "fits", "chi2"). Empty selection writes nothing.
  std::vector<fs::path> emit_report(const std::vector<std::string>& selection);

  const json& manifest() const noexcept { return manifest_; }
  const fs::path& out_dir() const noexcept { return out_; }

  // Serves the audit endpoints until interrupted; `on_ready` receives the bound port.
  void serve_audit(const std::function<void(int)>& on_ready = {}, const std::function<bool()>& keep_running = {});

  static std::vector<std::string> report_selection_catalog();

 private:
  json stage_ingest();
  json stage_screen();
  json stage_sectors();
  json stage_extract();
  json stage_validate();
  json stage_map_rdc();
  json stage_catalog();
  json stage_pairs();
  json stage_audit_plan();
  json stage_audit_metrics();
  json stage_correct();
  json stage_stats();
  json stage_report();

  fs::path path(const std::string& rel) const { return out_ / rel; }
  void require_inputs(const std::string& stage, const std::vector<std::string>& inputs);
  void write_output(const std::string& rel, std::string_view contents);
  void write_jsonl(const std::string& rel, const std::vector<json>& rows);
  void record(const std::string& stage, const std::vector<std::string>& inputs, json details);
  void save_manifest();
  const PromptTemplate& prompt(const std::string& stage) const;
  ModelClient& model();
  void check_budget(const std::string& stage, std::size_t violations, std::size_t evaluated) const;

  PipelineConfig config_;
  RunMode mode_;
  fs::path out_;
  ResponseCache cache_;
  std::optional<PromptRegistry> prompts_;
  std::optional<ModelClient> model_;
  json manifest_;
  std::vector<std::string> written_;  // outputs of the stage in progress
};

}  // namespace dtreg::pipeline
