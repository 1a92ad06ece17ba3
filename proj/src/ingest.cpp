#include "dtreg/ingest.hpp"

#include <algorithm>
#include <unordered_map>

#include "dtreg/error.hpp"
#include "dtreg/text.hpp"
#include "dtreg/vocab.hpp"

namespace dtreg::ingest {

json to_json(const SourceRecord& r) {
  return json{{"doi", r.doi},
              {"title", r.title},
              {"abstract", r.abstract},
              {"abstract_missing", r.abstract_missing()},
              {"venue", r.venue},
              {"keywords", r.keywords},
              {"year", r.year ? json(*r.year) : json("unknown")},
              {"registry", r.registry},
              {"searched_sector", r.searched_sector}};
}

SourceRecord record_from_json(const json& j) {
  SourceRecord r;
  r.doi = j.at("doi").get<std::string>();
  r.title = j.at("title").get<std::string>();
  r.abstract = j.at("abstract").get<std::string>();
  r.venue = j.at("venue").get<std::string>();
  r.keywords = j.at("keywords").get<std::vector<std::string>>();
  const auto& y = j.at("year");
  if (y.is_number_integer()) r.year = y.get<int>();
  r.registry = j.at("registry").get<std::string>();
  r.searched_sector = j.at("searched_sector").get<std::string>();
  return r;
}

std::size_t CorpusStrata::count(const std::string& registry) const {
  for (const auto& [name, n] : per_registry) {
    if (name == registry) return n;
  }
  return 0;
}

std::string normalize_doi(std::string_view raw) {
  std::string s = text::lower(text::trim(raw));
  for (std::string_view prefix : {"https://doi.org/", "http://doi.org/", "https://dx.doi.org/",
                                  "http://dx.doi.org/", "doi.org/", "doi:"}) {
    if (s.rfind(prefix, 0) == 0) {
      s.erase(0, prefix.size());
      break;
    }
  }
  return std::string(text::trim(s));
}

std::optional<int> normalize_year(const json& value) {
  int y = 0;
  if (value.is_number_integer()) {
    y = value.get<int>();
  } else if (value.is_string()) {
    const auto s = value.get<std::string>();
    if (s.size() != 4 || !std::all_of(s.begin(), s.end(), ::isdigit)) return std::nullopt;
    y = std::stoi(s);
  } else {
    return std::nullopt;
  }
  if (y < 1000 || y > 9999) return std::nullopt;
  return y;
}

std::string strip_markup(std::string_view s) {
  std::string out;
  bool in_tag = false;
  bool pending_space = false;
  for (char c : s) {
    if (c == '<') {
      in_tag = true;
      pending_space = !out.empty();
      continue;
    }
    if (in_tag) {
      if (c == '>') in_tag = false;
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

std::string rebuild_inverted_abstract(const json& inverted_index) {
  if (!inverted_index.is_object()) return {};
  std::vector<std::pair<long, std::string>> words;
  for (const auto& [word, positions] : inverted_index.items()) {
    if (!positions.is_array()) throw std::invalid_argument("inverted index positions not an array");
    for (const auto& p : positions) words.emplace_back(p.get<long>(), word);
  }
  std::sort(words.begin(), words.end());
  std::string out;
  for (const auto& [pos, w] : words) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

namespace {

std::string first_string(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return {};
  const auto& v = j.at(key);
  if (v.is_string()) return v.get<std::string>();
  if (v.is_array()) return v.empty() ? std::string() : v.at(0).get<std::string>();
  throw std::invalid_argument(std::string("unexpected type for ") + key);
}

SourceRecord parse_crossref_item(const json& item) {
  SourceRecord r;
  r.doi = normalize_doi(first_string(item, "DOI"));
  r.title = std::string(text::trim(first_string(item, "title")));
  r.abstract = strip_markup(first_string(item, "abstract"));
  r.venue = std::string(text::trim(first_string(item, "container-title")));
  if (item.contains("subject") && item["subject"].is_array()) {
    for (const auto& s : item["subject"]) r.keywords.push_back(s.get<std::string>());
  }
  for (const char* key : {"issued", "published", "published-print", "published-online"}) {
    if (!item.contains(key)) continue;
    const auto& parts = item[key].value("date-parts", json::array());
    if (parts.is_array() && !parts.empty() && parts[0].is_array() && !parts[0].empty()) {
      r.year = normalize_year(parts[0][0]);
      if (r.year) break;
    }
  }
  return r;
}

SourceRecord parse_openalex_item(const json& item) {
  SourceRecord r;
  r.doi = normalize_doi(first_string(item, "doi"));
  r.title = first_string(item, "title");
  if (r.title.empty()) r.title = first_string(item, "display_name");
  r.title = std::string(text::trim(r.title));
  if (item.contains("abstract_inverted_index")) {
    r.abstract = rebuild_inverted_abstract(item["abstract_inverted_index"]);
  }
  if (item.contains("primary_location") && item["primary_location"].is_object()) {
    const auto& loc = item["primary_location"];
    if (loc.contains("source") && loc["source"].is_object()) {
      r.venue = first_string(loc["source"], "display_name");
    }
  }
  if (item.contains("keywords") && item["keywords"].is_array()) {
    for (const auto& k : item["keywords"]) {
      r.keywords.push_back(k.is_string() ? k.get<std::string>()
                                         : k.at("display_name").get<std::string>());
    }
  }
  if (item.contains("publication_year")) r.year = normalize_year(item["publication_year"]);
  return r;
}

}  // namespace

Page parse_registry_page(const RegistryConfig& reg, const std::string& sector,
                         const std::string& body, const std::string& cursor) {
  if (!is_query_sector(sector)) throw ConfigError("sector not in query vocabulary: " + sector);
  json doc;
  try {
    doc = json::parse(body);
  } catch (const json::parse_error& e) {
    throw DataIntegrityError(reg.name + " page is not JSON: " + e.what());
  }

  const json* items = nullptr;
  std::optional<std::string> next;
  if (reg.kind == RegistryKind::Crossref) {
    if (!doc.contains("message") || !doc["message"].contains("items")) {
      throw DataIntegrityError("crossref page without message.items");
    }
    items = &doc["message"]["items"];
    const auto& m = doc["message"];
    if (m.contains("next-cursor") && m["next-cursor"].is_string()) {
      next = m["next-cursor"].get<std::string>();
    }
  } else {
    if (!doc.contains("results")) throw DataIntegrityError("openalex page without results");
    items = &doc["results"];
    if (doc.contains("meta") && doc["meta"].contains("next_cursor") &&
        doc["meta"]["next_cursor"].is_string()) {
      next = doc["meta"]["next_cursor"].get<std::string>();
    }
  }
  if (!items->is_array()) throw DataIntegrityError(reg.name + " items is not an array");

  Page page;
  for (const auto& item : *items) {
    try {
      if (!item.is_object()) throw std::invalid_argument("item is not an object");
      SourceRecord r = reg.kind == RegistryKind::Crossref ? parse_crossref_item(item)
                                                          : parse_openalex_item(item);
      r.registry = reg.name;
      r.searched_sector = sector;
      page.records.push_back(std::move(r));
    } catch (const std::exception& e) {
      page.quarantined.push_back({reg.name, sector, e.what(), item});
    }
  }

  const std::size_t seen = page.records.size() + page.quarantined.size();
  if (seen == 0 || seen < reg.page_size || (next && *next == cursor)) next.reset();
  page.next_cursor = std::move(next);
  return page;
}

std::string page_url(const RegistryConfig& reg, const std::string& query,
                     const std::string& cursor) {
  std::string url = reg.base_url;
  if (reg.kind == RegistryKind::Crossref) {
    url += "/works?query=" + http::url_encode(query) + "&rows=" + std::to_string(reg.page_size) +
           "&cursor=" + http::url_encode(cursor);
  } else {
    url += "/works?search=" + http::url_encode(query) +
           "&per-page=" + std::to_string(reg.page_size) + "&cursor=" + http::url_encode(cursor);
  }
  if (!reg.mailto.empty()) url += "&mailto=" + http::url_encode(reg.mailto);
  return url;
}

RegistryClient::RegistryClient(RegistryConfig config, const ResponseCache& cache, Fetcher fetcher)
    : config_(std::move(config)),
      cache_(cache),
      fetcher_(fetcher ? std::move(fetcher) : Fetcher([](const std::string& url) {
        return http::get(url, {{"Accept", "application/json"}});
      })),
      limiter_(config_.requests_per_second) {}

Page RegistryClient::fetch_page(const std::string& sector, const std::string& query,
                                const std::string& cursor) {
  if (!is_query_sector(sector)) throw ConfigError("sector not in query vocabulary: " + sector);
  const std::string url = page_url(config_, query, cursor);
  const std::string body = cache_.get_or_fetch("GET " + url, [&] {
    const auto res = http::with_retry(config_.retry, [&] {
      limiter_.acquire();
      return fetcher_(url);
    });
    if (res.status != 200) {
      throw DataIntegrityError(config_.name + " returned HTTP " + std::to_string(res.status) +
                               " for " + url);
    }
    return res.body;
  });
  return parse_registry_page(config_, sector, body, cursor);
}

Page RegistryClient::crawl(const std::string& sector, const std::string& query) {
  Page all;
  std::string cursor(kInitialCursor);
  for (std::size_t i = 0; i < config_.max_pages; ++i) {
    Page p = fetch_page(sector, query, cursor);
    std::move(p.records.begin(), p.records.end(), std::back_inserter(all.records));
    std::move(p.quarantined.begin(), p.quarantined.end(), std::back_inserter(all.quarantined));
    if (!p.next_cursor) return all;
    cursor = *p.next_cursor;
  }
  all.next_cursor = cursor;  // page budget hit before exhaustion
  return all;
}

MergeResult merge_dedup(const std::vector<SourceRecord>& records,
                        const std::vector<std::string>& registry_order) {
  auto rank = [&](const std::string& registry) {
    const auto it = std::find(registry_order.begin(), registry_order.end(), registry);
    return static_cast<std::size_t>(it - registry_order.begin());
  };

  MergeResult out;
  std::unordered_map<std::string, std::size_t> best;  // doi -> index in records
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.doi.empty()) {
      out.quarantined.push_back({r.registry, r.searched_sector, "missing DOI", to_json(r)});
      continue;
    }
    auto [it, inserted] = best.try_emplace(r.doi, i);
    if (inserted) continue;
    const auto& cur = records[it->second];
    const bool longer = r.abstract.size() > cur.abstract.size();
    const bool tie_earlier_registry =
        r.abstract.size() == cur.abstract.size() && rank(r.registry) < rank(cur.registry);
    if (longer || tie_earlier_registry) it->second = i;
  }

  out.corpus.reserve(best.size());
  for (const auto& [doi, idx] : best) out.corpus.push_back(records[idx]);
  std::sort(out.corpus.begin(), out.corpus.end(),
            [](const SourceRecord& a, const SourceRecord& b) { return a.doi < b.doi; });

  std::map<std::string, std::size_t> counts;
  for (const auto& r : out.corpus) ++counts[r.registry];
  for (const auto& name : registry_order) {
    out.strata.per_registry.emplace_back(name, counts[name]);
    counts.erase(name);
  }
  for (const auto& [name, n] : counts) out.strata.per_registry.emplace_back(name, n);
  out.strata.total = out.corpus.size();
  return out;
}

IngestConfig ingest_config_from_json(const json& j) {
  IngestConfig cfg;
  for (const auto& r : j.at("registries")) {
    RegistryConfig rc;
    rc.name = r.at("name").get<std::string>();
    const auto kind = r.value("kind", rc.name);
    if (kind == "crossref") {
      rc.kind = RegistryKind::Crossref;
    } else if (kind == "openalex") {
      rc.kind = RegistryKind::OpenAlex;
    } else {
      throw ConfigError("unknown registry kind: " + kind);
    }
    rc.base_url = r.at("base_url").get<std::string>();
    rc.page_size = r.value("page_size", rc.page_size);
    rc.requests_per_second = r.value("requests_per_second", rc.requests_per_second);
    rc.max_pages = r.value("max_pages", rc.max_pages);
    rc.mailto = r.value("mailto", std::string());
    rc.retry.max_attempts = r.value("max_attempts", rc.retry.max_attempts);
    rc.retry.initial_backoff =
        std::chrono::milliseconds(r.value("initial_backoff_ms", rc.retry.initial_backoff.count()));
    cfg.registries.push_back(std::move(rc));
  }
  for (const auto& [sector, q] : j.at("sector_queries").items()) {
    if (!is_query_sector(sector)) throw ConfigError("unknown sector in sector_queries: " + sector);
    cfg.sector_queries[sector] = q.get<std::string>();
  }
  return cfg;
}

}  // namespace dtreg::ingest
