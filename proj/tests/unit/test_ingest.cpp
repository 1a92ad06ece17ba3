#include <doctest.h>

#include <httplib.h>

#include <atomic>
#include <filesystem>
#include <thread>

#include "dtreg/error.hpp"
#include "dtreg/ingest.hpp"

namespace fs = std::filesystem;
using namespace dtreg;
using namespace dtreg::ingest;
using nlohmann::json;

namespace {

RegistryConfig crossref(std::size_t page_size = 2) {
  RegistryConfig c;
  c.name = "crossref";
  c.kind = RegistryKind::Crossref;
  c.base_url = "https://api.crossref.org";
  c.page_size = page_size;
  c.requests_per_second = 0;
  return c;
}

RegistryConfig openalex(std::size_t page_size = 2) {
  RegistryConfig c;
  c.name = "openalex";
  c.kind = RegistryKind::OpenAlex;
  c.base_url = "https://api.openalex.org";
  c.page_size = page_size;
  c.requests_per_second = 0;
  return c;
}

SourceRecord rec(std::string doi, std::string abstract, std::string registry, std::string sector = "insurance") {
  SourceRecord r;
  r.doi = std::move(doi);
  r.abstract = std::move(abstract);
  r.registry = std::move(registry);
  r.searched_sector = std::move(sector);
  return r;
}

fs::path temp_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  return d;
}

}  // namespace

TEST_CASE("doi and year normalization") {
  CHECK(normalize_doi("https://doi.org/10.1000/ABC") == "10.1000/abc");
  CHECK(normalize_doi(" doi:10.1/X ") == "10.1/x");
  CHECK(normalize_doi("http://dx.doi.org/10.5/y") == "10.5/y");
  CHECK(normalize_year(json(2019)) == 2019);
  CHECK(normalize_year(json("2021")) == 2021);
  CHECK_FALSE(normalize_year(json("21")).has_value());
  CHECK_FALSE(normalize_year(json(nullptr)).has_value());
  CHECK_FALSE(normalize_year(json(99)).has_value());
}

TEST_CASE("abstract reconstruction") {
  CHECK(strip_markup("<jats:p>Trees <i>grow</i>\n  tall.</jats:p>") == "Trees grow tall.");
  const json inv = {{"tall.", {2}}, {"Trees", {0}}, {"grow", {1}}};
  CHECK(rebuild_inverted_abstract(inv) == "Trees grow tall.");
  CHECK(rebuild_inverted_abstract(json(nullptr)).empty());
}

TEST_CASE("crossref page parsing") {
  const json body = {{"message",
                      {{"next-cursor", "c2"},
                       {"items",
                        {{{"DOI", "10.1/A"},
                          {"title", {"Trees"}},
                          {"abstract", "<p>An abstract.</p>"},
                          {"container-title", {"J"}},
                          {"subject", {"ml"}},
                          {"issued", {{"date-parts", {{2020, 3}}}}}},
                         {{"DOI", 5}}}}}}};
  const auto page = parse_registry_page(crossref(), "insurance", body.dump(), "*");
  REQUIRE(page.records.size() == 1);
  CHECK(page.records[0].doi == "10.1/a");
  CHECK(page.records[0].abstract == "An abstract.");
  CHECK(page.records[0].year == 2020);
  CHECK(page.records[0].registry == "crossref");
  CHECK(page.records[0].searched_sector == "insurance");
  CHECK(page.quarantined.size() == 1);
  CHECK(page.next_cursor == "c2");
}

TEST_CASE("openalex page parsing") {
  const json body = {{"meta", {{"next_cursor", "n"}}},
                     {"results",
                      {{{"doi", "https://doi.org/10.2/B"},
                        {"title", "Forest"},
                        {"abstract_inverted_index", {{"Hello", {0}}, {"world", {1}}}},
                        {"primary_location", {{"source", {{"display_name", "Venue"}}}}},
                        {"keywords", {{{"display_name", "trees"}}}},
                        {"publication_year", 2018}},
                       {{"doi", "https://doi.org/10.2/c"}, {"title", "Short"}}}}};
  const auto page = parse_registry_page(openalex(), "social_media", body.dump(), "*");
  REQUIRE(page.records.size() == 2);
  CHECK(page.records[0].doi == "10.2/b");
  CHECK(page.records[0].abstract == "Hello world");
  CHECK(page.records[0].venue == "Venue");
  CHECK(page.records[0].keywords == std::vector<std::string>{"trees"});
  CHECK(page.records[1].abstract_missing());
  CHECK(page.next_cursor == "n");
}

TEST_CASE("paging stops on short pages and repeated cursors") {
  const json short_page = {{"message", {{"next-cursor", "x"}, {"items", {{{"DOI", "10.1/a"}}}}}}};
  CHECK_FALSE(parse_registry_page(crossref(2), "insurance", short_page.dump(), "*").next_cursor);
  const json repeat = {{"message", {{"next-cursor", "same"}, {"items", {{{"DOI", "10.1/a"}}, {{"DOI", "10.1/b"}}}}}}};
  CHECK_FALSE(parse_registry_page(crossref(2), "insurance", repeat.dump(), "same").next_cursor);
  CHECK(parse_registry_page(crossref(2), "insurance", repeat.dump(), "other").next_cursor == "same");
}

TEST_CASE("malformed pages and unknown sectors are rejected") {
  CHECK_THROWS_AS(parse_registry_page(crossref(), "insurance", "not json", "*"), DataIntegrityError);
  CHECK_THROWS_AS(parse_registry_page(crossref(), "insurance", R"({"results":[]})", "*"), DataIntegrityError);
  CHECK_THROWS_AS(parse_registry_page(crossref(), "marine", R"({"message":{"items":[]}})", "*"), ConfigError);
}

TEST_CASE("merge precedence: longer abstract, then registry order, then position") {
  const std::vector<std::string> order{"crossref", "openalex"};
  SUBCASE("longer abstract wins across registries") {
    const auto m = merge_dedup({rec("10.1/a", "short", "crossref"), rec("10.1/a", "much longer text", "openalex")}, order);
    REQUIRE(m.corpus.size() == 1);
    CHECK(m.corpus[0].registry == "openalex");
  }
  SUBCASE("tie goes to the earlier registry") {
    const auto m = merge_dedup({rec("10.1/a", "same", "openalex"), rec("10.1/a", "same", "crossref")}, order);
    CHECK(m.corpus[0].registry == "crossref");
  }
  SUBCASE("tie within a registry keeps the first occurrence") {
    const auto m = merge_dedup({rec("10.1/a", "same", "crossref", "insurance"),
                                rec("10.1/a", "same", "crossref", "social_media")},
                               order);
    CHECK(m.corpus[0].searched_sector == "insurance");
  }
  SUBCASE("strata count the surviving record's registry") {
    const auto m = merge_dedup({rec("10.1/b", "x", "openalex"), rec("10.1/a", "y", "crossref"),
                                rec("10.1/c", "", "openalex"), rec("", "z", "crossref")},
                               order);
    CHECK(m.corpus.size() == 3);
    CHECK(m.corpus[0].doi == "10.1/a");
    CHECK(m.strata.total == 3);
    CHECK(m.strata.count("crossref") == 1);
    CHECK(m.strata.count("openalex") == 2);
    CHECK(m.quarantined.size() == 1);
  }
}

TEST_CASE("registry client crawls a live HTTP registry through the cache") {
  httplib::Server srv;
  std::atomic<int> hits{0};
  srv.Get("/works", [&](const httplib::Request& req, httplib::Response& res) {
    ++hits;
    const auto cursor = req.get_param_value("cursor");
    json items = json::array();
    std::string next;
    auto add = [&](int i) { items.push_back({{"DOI", "10.9/" + std::to_string(i)}, {"title", {"T"}}}); };
    if (cursor == "*") {
      add(1), add(2), next = "p2";
    } else if (cursor == "p2") {
      add(3), add(4), next = "p3";
    } else {
      add(5);
    }
    json body = {{"message", {{"items", items}}}};
    if (!next.empty()) body["message"]["next-cursor"] = next;
    res.set_content(body.dump(), "application/json");
  });
  const int port = srv.bind_to_any_port("127.0.0.1");
  std::thread t([&] { srv.listen_after_bind(); });
  srv.wait_until_ready();

  auto cfg = crossref(2);
  cfg.base_url = "http://127.0.0.1:" + std::to_string(port);
  const auto dir = temp_dir("dtreg_ingest_http");
  {
    const ResponseCache live(dir, RunMode::Live);
    RegistryClient client(cfg, live);
    const auto page = client.crawl("insurance", "decision tree insurance");
    CHECK(page.records.size() == 5);
    CHECK(hits == 3);
  }
  srv.stop();
  t.join();
  {
    const ResponseCache replay(dir, RunMode::Replay);
    RegistryClient client(cfg, replay);
    const auto page = client.crawl("insurance", "decision tree insurance");
    CHECK(page.records.size() == 5);
    CHECK(hits == 3);
    CHECK_THROWS_AS(client.crawl("insurance", "another query"), CacheMiss);
  }
  fs::remove_all(dir);
}

TEST_CASE("page budget leaves the cursor for resumption") {
  const auto dir = temp_dir("dtreg_ingest_budget");
  auto cfg = crossref(1);
  cfg.max_pages = 2;
  int calls = 0;
  const ResponseCache cache(dir, RunMode::Live);
  RegistryClient client(cfg, cache, [&](const std::string&) {
    ++calls;
    return http::Response{200, json{{"message", {{"items", {{{"DOI", "10.1/" + std::to_string(calls)}}}}, {"next-cursor", "c" + std::to_string(calls)}}}}.dump()};
  });
  const auto page = client.crawl("insurance", "q");
  CHECK(page.records.size() == 2);
  CHECK(page.next_cursor == "c2");
  fs::remove_all(dir);
}
