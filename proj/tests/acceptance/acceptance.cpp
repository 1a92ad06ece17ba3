#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <unistd.h>

#include <json.hpp>

#include "dtreg/audit.hpp"
#include "dtreg/io.hpp"
#include "dtreg/pipeline.hpp"
#include "dtreg/stats/contingency.hpp"
#include "dtreg/stats/glm.hpp"
#include "dtreg/stats/panel.hpp"
#include "oracles.hpp"
#include "replay_fixture.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dtreg;

namespace {

using Clock = std::chrono::steady_clock;

int g_failed = 0;

void report(int id, const std::string& name, bool ok, const std::string& detail) {
  if (!ok) ++g_failed;
  std::printf("%s [%2d] %-28s %s\n", ok ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
}

bool near(double a, double b, double tol) { return std::abs(a - b) <= tol; }

std::string fmt(double v, int digits = 6) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

// Runs `fn`, turning an escaped exception into a FAIL line.
void criterion(int id, const std::string& name, const std::function<std::pair<bool, std::string>()>& fn) {
  try {
    const auto [ok, detail] = fn();
    report(id, name, ok, detail);
  } catch (const std::exception& e) {
    report(id, name, false, std::string("exception: ") + e.what());
  }
}

std::pair<bool, std::string> sample_size() {
  const double moe = audit::moe_fpc(0.5, 1000, 19405);
  const double n0 = audit::srs_target(0.03, 0.5);
  const double n = audit::fpc_adjusted_target(n0, 19405);
  constexpr int reps = 10000;
  volatile double sink = 0;
  const auto t0 = Clock::now();
  for (int i = 0; i < reps; ++i) {
    const double a = audit::srs_target(0.03, 0.5);
    sink = sink + audit::fpc_adjusted_target(a, 19405) + audit::moe_fpc(0.5, 1000 + i % 7, 19405);
  }
  const double per_call_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count() / reps;
  const bool ok = near(moe, 0.03018, 1e-4) && near(n0, 1067.11, 0.01) && near(n, 1011.54, 0.01) && per_call_ms < 1.0;
  return {ok, "moe=" + fmt(moe) + " n0=" + fmt(n0, 2) + " n_fpc=" + fmt(n, 2) + " per_call=" + fmt(per_call_ms, 6) + "ms"};
}

std::pair<bool, std::string> relevance_kappa() {
  const audit::WeightedConfusion c{7639.846, 480.093, 96.158, 11166.809};
  const auto k = audit::cohen_kappa(c);
  const auto m = audit::binary_metrics(c);
  const bool ok = k.kappa && near(*k.kappa, 0.938529, 1e-5) && near(k.observed, 0.970270, 1e-5) &&
                  near(k.expected, 0.516359, 1e-5) && m.precision && near(*m.precision, 0.940875, 1e-5) &&
                  m.miss_rate && near(*m.miss_rate, 0.008538, 1e-5);
  return {ok, "kappa=" + fmt(k.kappa.value_or(NAN)) + " P_o=" + fmt(k.observed) + " P_e=" + fmt(k.expected) +
                  " precision=" + fmt(m.precision.value_or(NAN)) + " miss=" + fmt(m.miss_rate.value_or(NAN))};
}

std::pair<bool, std::string> predictor_kappa() {
  const audit::WeightedConfusion c{375.675, 118.631, 139.771, 4027.922};
  const auto k = audit::cohen_kappa(c);
  const auto m = audit::binary_metrics(c);
  const bool ok = k.kappa && near(*k.kappa, 0.713029, 1e-5) && m.precision && near(*m.precision, 0.760005, 1e-5) &&
                  m.recall && near(*m.recall, 0.728834, 1e-5);
  return {ok, "kappa=" + fmt(k.kappa.value_or(NAN)) + " precision=" + fmt(m.precision.value_or(NAN)) +
                  " recall=" + fmt(m.recall.value_or(NAN))};
}

std::pair<bool, std::string> multiplier_chain() {
  const auto m = audit::compound_multiplier({0.940875, 0.923450, 0.760005, 0.800000, 0.785714});
  const auto t = audit::adjust_counts(2329, m, audit::MetricKind::PairTally);
  const auto d = audit::adjust_counts(2329, m, audit::MetricKind::UniquePapers);
  const bool ok = near(m.m_other, 0.528265, 1e-5) && near(m.compound, 0.415065, 1e-5) && near(t.value, 966.687, 0.01) &&
                  t.scaled && !d.scaled;
  return {ok, "m_other=" + fmt(m.m_other) + " S=" + fmt(m.compound) + " T_corr=" + fmt(t.value, 3) +
                  " unique_dois_scaled=" + (d.scaled ? "yes" : "no")};
}

std::pair<bool, std::string> its_invariances() {
  using namespace stats;
  // Constant rates per regulation: every slope term vanishes.
  auto flat = testing::synthetic_cells(3);
  for (auto& c : flat) {
    const double rate = c.regulation == "GDPR" ? 0.02 : c.regulation == "HIPAA" ? 0.05 : 0.011;
    c.y = rate * static_cast<double>(c.exposure);
  }
  const auto f0 = fit_poisson_glm(build_its_design(flat));
  double slope = 0;
  for (const char* n : {"rel", "post", "rel_x_post"}) slope = std::max(slope, std::abs(f0.coef(f0.index(n))));

  // Scaling Y by S moves the intercepts by ln S and nothing else.
  const double S = 0.415065;
  double scale_err = 0;
  for (std::uint64_t seed : {5u, 6u, 7u}) {
    auto cells = testing::synthetic_cells(seed);
    const auto base = fit_poisson_glm(build_its_design(cells));
    for (auto& c : cells) c.y *= S;
    const auto scaled = fit_poisson_glm(build_its_design(cells));
    for (std::size_t i = 0; i < base.names.size(); ++i) {
      const auto k = static_cast<Eigen::Index>(i);
      const double shift = base.names[i].rfind("alpha_", 0) == 0 ? std::log(S) : 0.0;
      scale_err = std::max(scale_err, std::abs(scaled.coef(k) - base.coef(k) - shift));
    }
  }

  // IRLS against an independent maximizer.
  double mle_err = 0;
  bool converged = f0.converged;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto d = build_its_design(testing::synthetic_cells(seed, seed % 2 == 0));
    const auto fit = fit_poisson_glm(d);
    converged = converged && fit.converged;
    mle_err = std::max(mle_err, (fit.coef - testing::direct_mle(d)).cwiseAbs().maxCoeff());
  }

  const double five = std::exp(5 * std::log(0.958));
  const bool ok = converged && slope < 1e-8 && scale_err < 1e-8 && mle_err < 1e-6 && std::abs(five - 0.808) <= 0.002;
  std::ostringstream s;
  s << "flat_slopes=" << slope << " scale_dev=" << scale_err << " irls_vs_direct=" << mle_err
    << " exp(5ln0.958)=" << fmt(five, 4);
  return {ok, s.str()};
}

std::pair<bool, std::string> gee() {
  using namespace stats;
  double indep_err = 0;
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    const auto d = build_its_design(testing::synthetic_cells(seed));
    const auto glm = fit_poisson_glm(d);
    GeeOptions o;
    o.correlation = WorkingCorrelation::Independence;
    o.warm_start = false;
    const auto g = fit_poisson_gee(d, o);
    if (!g.converged) return {false, "independence GEE did not converge"};
    indep_err = std::max(indep_err, (glm.coef - g.coef).cwiseAbs().maxCoeff());
  }
  double worst_z = 0;
  for (std::uint64_t seed : {101u, 202u, 303u}) {
    const auto fit = fit_poisson_gee(testing::ar1_design(seed));
    if (!fit.converged || !fit.rho) return {false, "AR(1) GEE did not converge"};
    worst_z = std::max({worst_z, std::abs(fit.coef(0) + 1.0) / fit.robust_se("intercept"),
                        std::abs(fit.coef(1) - 0.3) / fit.robust_se("x")});
  }
  std::ostringstream s;
  s << "independence_vs_glm=" << indep_err << " ar1_worst_|err|/se=" << fmt(worst_z, 3);
  return {indep_err <= 1e-6 && worst_z < 3.0, s.str()};
}

std::pair<bool, std::string> contingency() {
  using namespace stats;
  Chi2Options opt;
  opt.monte_carlo = MonteCarlo::Never;
  Eigen::MatrixXd t(2, 2);
  t << 10, 0, 0, 10;
  const auto r = chi2_suite(t, {"a", "b"}, {"x", "y"}, opt);
  double zdev = 0;
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) zdev = std::max(zdev, std::abs(std::abs(r.z(i, j)) - 2.2360));
  }
  const bool perfect = near(r.chi2, 20.0, 1e-9) && near(r.cramers_v, 1.0, 1e-12) && zdev < 1e-4;

  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(0.5, 20.0);
  double outer_max = 0;
  for (int rep = 0; rep < 50; ++rep) {
    const int nr = 2 + static_cast<int>(rng() % 12), nc = 2 + static_cast<int>(rng() % 12);
    Eigen::VectorXd a(nr), b(nc);
    for (auto& v : a) v = u(rng);
    for (auto& v : b) v = u(rng);
    const Eigen::MatrixXd o = a * b.transpose();
    std::vector<std::string> rows(static_cast<std::size_t>(nr)), cols(static_cast<std::size_t>(nc));
    outer_max = std::max(outer_max, chi2_suite(o, rows, cols, opt).chi2);
  }

  int bh_mismatch = 0;
  std::mt19937_64 prng(2024);
  std::uniform_real_distribution<double> pu(0.0, 1.0);
  for (int rep = 0; rep < 1000; ++rep) {
    std::vector<double> p(1 + prng() % 60);
    for (auto& x : p) x = rep % 3 == 0 ? std::pow(pu(prng), 4) : pu(prng);
    const double alpha = rep % 2 ? 0.05 : 0.1;
    const auto bh = bh_fdr(p, alpha);
    const auto bf = testing::brute_force_bh(p, alpha);
    if (bh.significant != bf.significant) ++bh_mismatch;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (!bh.adjusted[i] || std::abs(*bh.adjusted[i] - bf.adjusted[i]) > 1e-12) ++bh_mismatch;
    }
  }

  // Cells with E < 5 stay out of the BH family and are never flagged.
  Eigen::MatrixXd sparse(3, 3);
  sparse << 40, 2, 30, 35, 1, 45, 50, 3, 20;
  const auto sr = chi2_suite(sparse, {"r1", "r2", "r3"}, {"c1", "c2", "c3"}, opt);
  bool exclusion = sr.tested_cells < 9;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      const bool small = sr.expected(i, j) < 5.0;
      if (small == sr.tested[i][j]) exclusion = false;
      if (small && (sr.significant[i][j] || !std::isnan(sr.bh_adjusted(i, j)))) exclusion = false;
    }
  }

  std::ostringstream s;
  s << "chi2=" << fmt(r.chi2, 4) << " V=" << fmt(r.cramers_v, 4) << " |z|dev=" << zdev << " outer_max_chi2=" << outer_max
    << " bh_mismatches=" << bh_mismatch << "/1000 small_E_tested=" << (exclusion ? "none" : "some");
  return {perfect && outer_max < 1e-9 && bh_mismatch == 0 && exclusion, s.str()};
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir).generic_string();
    auto body = io::read_file(e.path());
    if (rel == "manifest.json") {
      auto m = json::parse(body);
      for (auto& [_, st] : m["stages"].items()) st.erase("completed_at");
      body = m.dump();
    }
    files[rel] = body;
  }
  return files;
}

struct ReplayRun {
  double seconds = 0;
  json manifest;
  fs::path out;
};

ReplayRun replay(const fixture::Fixture& fx, const fs::path& out) {
  fs::remove_all(out);
  const auto t0 = Clock::now();
  {
    pipeline::DirectoryLock lock(out);
    pipeline::Pipeline p(pipeline::load_config(fx.config), RunMode::Replay, fx.cache, out);
    p.run_all();
  }
  ReplayRun r;
  r.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  r.manifest = json::parse(io::read_file(out / "manifest.json"));
  r.out = out;
  return r;
}

std::size_t other_predictors(const fs::path& out) {
  const auto rows = io::parse_csv(io::read_file(out / "rdc_assignment.csv"));
  for (const auto& row : rows) {
    if (row.size() == 2 && row[0] == "Other") return std::stoul(row[1]);
  }
  return 0;
}

std::pair<bool, std::string> determinism(const fs::path& work, fs::path& audited_out) {
  // The fixture is the replay cache: every registry page and model reply the
  // pipeline asks for, generated to the published corpus shape.
  const auto fx = fixture::build_fixture(work / "fixture", fixture::full_scale_shape());
  const auto a = replay(fx, work / "run_a");
  const auto b = replay(fx, work / "run_b");
  const auto& st = a.manifest.at("stages");
  const std::vector<std::pair<std::string, std::pair<json, std::size_t>>> want = {
      {"corpus", {st["ingest"]["counts"]["corpus"], 19405}},
      {"crossref", {st["ingest"]["counts"]["strata"]["crossref"], 10023}},
      {"openalex", {st["ingest"]["counts"]["strata"]["openalex"], 9382}},
      {"relevant", {st["screen"]["counts"]["relevant"], 8386}},
      {"not_relevant", {st["screen"]["counts"]["not_relevant"], 11016}},
      {"relevance_violations", {st["screen"]["counts"]["contract_violations"], 3}},
      {"included", {st["sectors"]["counts"]["included"], 4686}},
      {"valid", {st["validate-predictors"]["counts"]["valid"], 596}},
      {"unique_predictors", {st["map-rdc"]["counts"]["unique_predictors"], 1749}},
      {"other_predictors", {json(other_predictors(a.out)), 598}},
      {"pairs", {st["pairs"]["counts"]["formed"], 9256}},
      {"regulated", {st["pairs"]["counts"]["regulated"], 2713}},
      {"regulated_high", {st["pairs"]["counts"]["regulated_by_confidence"]["High"], 2329}},
      {"regulated_medium", {st["pairs"]["counts"]["regulated_by_confidence"]["Medium"], 384}},
      {"not_regulated", {st["pairs"]["counts"]["not_regulated"], 6543}},
  };
  std::string mismatched;
  for (const auto& [name, pair] : want) {
    if (!pair.first.is_number() || pair.first.get<std::size_t>() != pair.second) {
      mismatched += " " + name + "=" + pair.first.dump();
    }
  }
  const auto sa = snapshot(a.out), sb = snapshot(b.out);
  std::size_t differing = sa.size() == sb.size() ? 0 : 1;
  for (const auto& [rel, body] : sa) {
    const auto it = sb.find(rel);
    if (it == sb.end() || it->second != body) ++differing;
  }
  const double slowest = std::max(a.seconds, b.seconds);
  audited_out = a.out;
  std::ostringstream s;
  for (const char* key : {"corpus", "relevant", "included", "valid", "unique_predictors", "pairs", "regulated_high"}) {
    for (const auto& [name, pair] : want) {
      if (name == key) s << name << "=" << pair.first.dump() << " ";
    }
  }
  s << (mismatched.empty() ? "all counts match;" : "MISMATCH:" + mismatched + ";") << " " << sa.size() << " files, " << differing
    << " differ; runtime " << fmt(slowest, 2) << "s";
  return {mismatched.empty() && differing == 0 && slowest < 300.0, s.str()};
}

std::pair<bool, std::string> parser_strictness() {
  std::ostringstream s;
  bool ok = true;
  std::uint64_t seed = 9001;
  for (const auto& c : testing::fuzzed_contracts()) {
    const auto t = testing::fuzz_contract(c, 10000, seed++);
    ok = ok && t.coerced == 0 && t.wrong_exception == 0 && t.total() >= 10000;
    s << c << "=" << t.coerced << "/" << t.total() << " ";
  }
  return {ok, "silent coercions per contract: " + s.str()};
}

std::pair<bool, std::string> blinding(const fs::path& audited_out) {
  std::mt19937_64 rng(7);
  const std::vector<audit::AuditStage> stages = {audit::AuditStage::Relevance, audit::AuditStage::Sector,
                                                 audit::AuditStage::Predictor, audit::AuditStage::Rdc,
                                                 audit::AuditStage::PairStatus};
  std::size_t leaks = 0, serialized = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto stage = stages[static_cast<std::size_t>(i) % stages.size()];
    audit::AuditItem item;
    item.id = "t" + std::to_string(i);
    item.stage = stage;
    item.stratum = rng() % 2 ? "crossref" : "openalex";
    item.weight = 19.4;
    item.evidence = {{"title", "T"}, {"abstract", "A"}, {"venue", "V"}, {"keywords", {"k"}},
                     {"predictors", {"age", "income"}}, {"predictor", "age"}, {"evidence", "Age was used."},
                     {"rdc", "Demographic"}, {"regulation", "GDPR"},
                     {"fragments", {{{"ref", "Article 9"}, {"text", "..."}}}},
                     {"verdict", "Relevant"}, {"ai_label", "x"}, {"model_meta", {{"name", "m"}}}};
    item.ai = {{"verdict", "Regulated"}, {"confidence", "High"}, {"rationale", "r"}, {"refs", {"Article 9"}}};
    const auto line = audit::to_json(audit::blind_view(item, stage)).dump();
    leaks += audit::find_ai_fields(json::parse(line)).size();
    ++serialized;
  }

  // Tasks written by the audit-plan stage on the full replay.
  pipeline::Pipeline p(pipeline::load_config(audited_out.parent_path() / "fixture" / "config.json"), RunMode::Replay,
                       audited_out.parent_path() / "fixture" / "cache", audited_out);
  p.run_stage("audit-plan");
  std::size_t planned = 0;
  for (const auto& row : io::read_jsonl(audited_out / "audit" / "tasks.jsonl")) {
    leaks += audit::find_ai_fields(row).size();
    ++planned;
  }
  return {leaks == 0 && serialized >= 10000 && planned > 0,
          std::to_string(leaks) + " automated fields in " + std::to_string(serialized) + " synthetic and " +
              std::to_string(planned) + " planned tasks"};
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1])
                                 : fs::temp_directory_path() / ("dtreg_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(work);

  criterion(1, "sample size and MOE", sample_size);
  criterion(2, "relevance agreement", relevance_kappa);
  criterion(3, "predictor agreement", predictor_kappa);
  criterion(4, "multiplier chain", multiplier_chain);
  criterion(5, "ITS invariances", its_invariances);
  criterion(6, "GEE", gee);
  criterion(7, "contingency suite", contingency);
  fs::path audited;
  criterion(8, "replay determinism", [&] { return determinism(work, audited); });
  criterion(9, "parser strictness", parser_strictness);
  criterion(10, "audit blinding", [&]() -> std::pair<bool, std::string> {
    if (audited.empty()) return {false, "no replay output to plan an audit from"};
    return blinding(audited);
  });

  if (argc <= 1) fs::remove_all(work);
  std::printf("%d of 10 criteria failed\n", g_failed);
  return g_failed == 0 ? 0 : 1;
}
