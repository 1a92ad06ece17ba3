#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dtreg/cache.hpp"
#include "dtreg/http.hpp"

namespace dtreg::ingest {

using nlohmann::json;

enum class RegistryKind { Crossref, OpenAlex };

struct SourceRecord {
  std::string doi;
  std::string title;
  std::string abstract;
  std::string venue;
  std::vector<std::string> keywords;
  std::optional<int> year;  // nullopt serializes as "unknown"
  std::string registry;
  std::string searched_sector;

  bool abstract_missing() const noexcept { return abstract.empty(); }
  bool operator==(const SourceRecord&) const = default;
};

json to_json(const SourceRecord& r);
SourceRecord record_from_json(const json& j);

struct Quarantined {
  std::string registry;
  std::string sector;
  std::string reason;
  json raw;
};

struct CorpusStrata {
  std::vector<std::pair<std::string, std::size_t>> per_registry;  // config order
  std::size_t total = 0;

  std::size_t count(const std::string& registry) const;
};

// Strip resolver prefixes ("https://doi.org/", "doi:"), trim, lowercase.
std::string normalize_doi(std::string_view raw);
// Four-digit year or nullopt.
std::optional<int> normalize_year(const json& value);
// Crossref abstracts arrive as JATS XML; drop tags and collapse whitespace.
std::string strip_markup(std::string_view s);
// OpenAlex ships abstracts as {word: [positions]}.
std::string rebuild_inverted_abstract(const json& inverted_index);

struct RegistryConfig {
  std::string name;  // stratum tag, e.g. "crossref"
  RegistryKind kind = RegistryKind::Crossref;
  std::string base_url;
  std::size_t page_size = 100;
  double requests_per_second = 5.0;
  std::size_t max_pages = 100;
  std::string mailto;  // polite-pool contact, optional
  http::RetryPolicy retry;
};

struct Page {
  std::vector<SourceRecord> records;
  std::vector<Quarantined> quarantined;
  std::optional<std::string> next_cursor;
};

// Parse one registry response body. Records that fail normalization are
// quarantined individually; a body that is not a registry page throws.
Page parse_registry_page(const RegistryConfig& reg, const std::string& sector,
                         const std::string& body, const std::string& cursor);

std::string page_url(const RegistryConfig& reg, const std::string& query,
                     const std::string& cursor);

using Fetcher = std::function<http::Response(const std::string& url)>;

// Fetches pages through the raw-response cache (one file per request URL).
class RegistryClient {
 public:
  RegistryClient(RegistryConfig config, const ResponseCache& cache, Fetcher fetcher = {});

  Page fetch_page(const std::string& sector, const std::string& query, const std::string& cursor);
  // Follow cursors until exhausted (or max_pages).
  Page crawl(const std::string& sector, const std::string& query);

  const RegistryConfig& config() const noexcept { return config_; }

 private:
  RegistryConfig config_;
  const ResponseCache& cache_;
  Fetcher fetcher_;
  http::RateLimiter limiter_;
};

inline constexpr std::string_view kInitialCursor = "*";

struct MergeResult {
  std::vector<SourceRecord> corpus;  // sorted by DOI
  CorpusStrata strata;
  std::vector<Quarantined> quarantined;
};

// One record per DOI. Precedence: longer abstract, then earlier registry in
// `registry_order`, then earlier input position.
MergeResult merge_dedup(const std::vector<SourceRecord>& records,
                        const std::vector<std::string>& registry_order);

struct IngestConfig {
  std::vector<RegistryConfig> registries;
  std::map<std::string, std::string> sector_queries;  // sector token -> query text
};

IngestConfig ingest_config_from_json(const json& j);

}  // namespace dtreg::ingest
