#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>

#include <json.hpp>

#include "dtreg/error.hpp"
#include "dtreg/gates.hpp"
#include "dtreg/legal.hpp"
#include "dtreg/pairing.hpp"
#include "dtreg/text.hpp"
#include "dtreg/vocab.hpp"
#include "mutate.hpp"

namespace dtreg::testing {

using nlohmann::json;

namespace {

const char* kAbstract =
    "We train a decision tree on patient records. The tree splits on age and blood pressure. "
    "Heart rate was also used as a feature.";

std::vector<std::string> sector_vocab() {
  std::vector<std::string> v(kQuerySectors.begin(), kQuerySectors.end());
  v.emplace_back(kNoneOfTheAbove);
  return v;
}

std::vector<std::string> rdc_vocab() { return {kRdcTokens.begin(), kRdcTokens.end()}; }

// `accept` returns true when the parsed value is exactly what the reply says.
FuzzTally run(const std::vector<std::string>& seeds, std::vector<std::string> vocab, std::uint64_t seed, int n,
              const std::function<bool(const std::string&)>& accept) {
  Mutator mutate(seed, std::move(vocab));
  FuzzTally t;
  for (int i = 0; i < n; ++i) {
    const auto m = mutate(seeds[mutate.below(seeds.size())]);
    try {
      if (accept(m)) ++t.accepted;
      else ++t.coerced;
    } catch (const ContractViolation&) {
      ++t.rejected;
    } catch (...) {
      ++t.wrong_exception;
    }
  }
  return t;
}

FuzzTally fuzz_verdict(int n, std::uint64_t seed) {
  using namespace pairing;
  const std::vector<std::string> seeds = {
      "STATUS: Regulated\nCONFIDENCE: High\nRATIONALE: Health data under Article 9. refs: Article 9",
      "STATUS: Regulated\nCONFIDENCE: Medium\nRATIONALE: Identifier.\nrefs: Article 4, Article 9",
      "STATUS: Not Regulated\nCONFIDENCE: Low\nRATIONALE: Not personal data. refs: none"};
  Mutator mutate(seed, {"STATUS: ", "CONFIDENCE: ", "RATIONALE: ", "refs: ", "Regulated", "High", "\n"});
  FuzzTally t;
  for (int i = 0; i < n; ++i) {
    const auto m = mutate(seeds[mutate.below(seeds.size())]);
    PairVerdict v;
    try {
      v = parse_verdict(m);
    } catch (...) {
      ++t.wrong_exception;
      continue;
    }
    if (v.downgraded()) {
      if (v.status != Status::NotRegulated || v.confidence != Confidence::Low || !v.refs.empty()) ++t.coerced;
      else ++t.rejected;
      continue;
    }
    std::vector<std::string> lines;
    for (auto& l : text::split(text::trim(m), '\n')) lines.emplace_back(text::trim(l));
    auto field = [&](std::size_t i, std::string_view key) -> std::string {
      if (lines.size() <= i || lines[i].rfind(key, 0) != 0) return "<missing>";
      return std::string(text::trim(std::string_view(lines[i]).substr(key.size())));
    };
    if (field(0, "STATUS:") != to_string(v.status) || field(1, "CONFIDENCE:") != to_string(v.confidence) ||
        field(2, "RATIONALE:") == "<missing>") {
      ++t.coerced;
    } else {
      ++t.accepted;
    }
  }
  return t;
}

}  // namespace

const std::vector<std::string>& fuzzed_contracts() {
  static const std::vector<std::string> names = {"relevance", "sector",       "predictor-validation", "predictors",
                                                 "rdc",       "passage-tag",  "pair-verdict"};
  return names;
}

FuzzTally fuzz_contract(const std::string& contract, int n, std::uint64_t seed) {
  using namespace gates;
  if (contract == "relevance") {
    return run({"Relevant", "Not relevant"}, {"Relevant", "Not relevant", "relevant"}, seed, n,
               [](const std::string& m) { return text::trim(m) == to_string(parse_relevance(m)); });
  }
  if (contract == "sector") {
    return run(sector_vocab(), sector_vocab(), seed, n, [](const std::string& m) {
      const auto s = parse_sector(m);
      return text::trim(m) == s && is_sector_token(s);
    });
  }
  if (contract == "predictor-validation") {
    return run({"Valid", "Not valid"}, {"Valid", "Not valid", "valid"}, seed, n,
               [](const std::string& m) { return text::trim(m) == to_string(parse_predictor_validation(m)); });
  }
  if (contract == "predictors") {
    const std::vector<std::string> seeds = {
        R"({"predictors": [{"name": "age", "evidence": "The tree splits on age and blood pressure."}]})",
        R"({"predictors": [{"name": "heart rate", "evidence": "Heart rate was also used as a feature."}, {"name": "blood pressure", "evidence": "The tree splits on age and blood pressure."}]})",
        R"({"predictors": []})"};
    return run(seeds, {"\"name\"", "\"evidence\"", "age", "{", "}"}, seed, n, [](const std::string& m) {
      const auto p = parse_predictors(m, kAbstract);
      const json doc = json::parse(text::trim(m));
      if (!doc.is_object() || doc.size() != 1 || !doc["predictors"].is_array()) return false;
      if (p.mentions.size() + p.dropped.size() != doc["predictors"].size()) return false;
      for (const auto& mention : p.mentions) {
        if (!text::icontains(kAbstract, mention.evidence) || !text::icontains(mention.evidence, mention.name)) {
          return false;
        }
      }
      return true;
    });
  }
  if (contract == "rdc") {
    std::vector<std::string> seeds;
    for (const auto& t : rdc_vocab()) seeds.push_back(json{{"class", t}, {"rationale", "Maps to " + t + "."}}.dump());
    return run(seeds, rdc_vocab(), seed, n, [](const std::string& m) {
      const auto a = parse_rdc(m);
      return json::parse(text::trim(m)) == json{{"class", a.rdc}, {"rationale", a.rationale}} && is_rdc_token(a.rdc);
    });
  }
  if (contract == "passage-tag") {
    const std::vector<std::string> seeds = {
        R"({"regulated": true, "classes": ["Health_Clinical"], "rationale": "Health data."})",
        R"({"regulated": false, "classes": [], "rationale": "Definitions only."})",
        R"({"regulated": true, "classes": ["Biometric", "Identifier_PII"], "rationale": "Biometric identifiers."})"};
    return run(seeds, {"true", "false", "\"Other\"", "\"classes\"", ","}, seed, n, [](const std::string& m) {
      const auto t = legal::parse_passage_tag(m);
      return json::parse(text::trim(m)) == json{{"regulated", t.regulated}, {"classes", t.classes}, {"rationale", t.rationale}};
    });
  }
  if (contract == "pair-verdict") return fuzz_verdict(n, seed);
  throw std::invalid_argument("unknown contract " + contract);
}

Eigen::VectorXd direct_mle(const stats::Design& d) {
  const auto p = d.x.cols();
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  const double ybar = d.y.mean();
  const double obar = d.offset.mean();
  for (Eigen::Index j = 0; j < p; ++j) {
    if (d.x.col(j).minCoeff() == 0.0 && d.x.col(j).maxCoeff() == 1.0) beta(j) = std::log(std::max(ybar, 1e-3)) - obar;
  }
  auto loglik = [&](const Eigen::VectorXd& b) {
    const Eigen::VectorXd eta = d.x * b + d.offset;
    return (d.y.array() * eta.array() - eta.array().exp()).sum();
  };
  double ll = loglik(beta);
  for (int it = 0; it < 500; ++it) {
    const Eigen::VectorXd mu = (d.x * beta + d.offset).array().exp();
    const Eigen::VectorXd score = d.x.transpose() * (d.y - mu);
    const Eigen::MatrixXd info = d.x.transpose() * mu.asDiagonal() * d.x;
    Eigen::VectorXd step = info.ldlt().solve(score);
    double t = 1.0;
    Eigen::VectorXd next = beta + step;
    double ll_next = loglik(next);
    while (ll_next < ll && t > 1e-10) {
      t /= 2;
      next = beta + t * step;
      ll_next = loglik(next);
    }
    beta = next;
    const double gain = ll_next - ll;
    ll = ll_next;
    if (step.cwiseAbs().maxCoeff() * t < 1e-13 || (gain >= 0 && gain < 1e-15 && step.norm() < 1e-9)) break;
  }
  return beta;
}

std::vector<stats::PanelCell> synthetic_cells(std::uint64_t seed, bool integer_counts) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.15);
  const std::vector<std::pair<std::string, int>> regs = {{"GDPR", 2018}, {"HIPAA", 1996}, {"CCPA", 2018}, {"NIS2", 2023}};
  const double b_rel = 0.04 + 0.02 * noise(rng), b_post = 0.2 * noise(rng), b_rp = -0.05 + 0.02 * noise(rng);
  std::vector<stats::PanelCell> cells;
  int r = 0;
  for (const auto& [reg, er] : regs) {
    const double alpha = -3.0 + 0.5 * r++ + noise(rng);
    for (int year = 2000; year <= 2024; ++year) {
      stats::PanelCell c;
      c.regulation = reg;
      c.year = year;
      c.exposure = 50 + 10 * (year - 2000) + static_cast<std::int64_t>(rng() % 40);
      c.rel = year - er;
      c.post = year >= er;
      const double eta = alpha + b_rel * c.rel + b_post * c.post + b_rp * c.rel * c.post;
      const double mu = std::exp(eta) * static_cast<double>(c.exposure);
      c.y = integer_counts ? static_cast<double>(std::poisson_distribution<int>(mu)(rng)) : mu * std::exp(noise(rng));
      c.distinct = static_cast<std::int64_t>(c.y);
      c.rate = c.y / static_cast<double>(c.exposure);
      cells.push_back(c);
    }
  }
  return cells;
}

stats::Design ar1_design(std::uint64_t seed, int clusters, int periods, double rho) {
  const double b0 = -1.0, b1 = 0.3, sigma = 0.4;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  stats::Design d;
  d.x.resize(clusters * periods, 2);
  d.y.resize(clusters * periods);
  d.offset = Eigen::VectorXd::Constant(clusters * periods, std::log(20.0));
  d.columns = {"intercept", "x"};
  int row = 0;
  for (int g = 0; g < clusters; ++g) {
    d.cluster_names.push_back("c" + std::to_string(g));
    double u = sigma * z(rng);
    for (int t = 0; t < periods; ++t) {
      if (t > 0) u = rho * u + sigma * std::sqrt(1 - rho * rho) * z(rng);
      const double x = z(rng);
      const double mu = 20.0 * std::exp(b0 + b1 * x + u - sigma * sigma / 2);
      d.x(row, 0) = 1.0;
      d.x(row, 1) = x;
      d.y(row) = std::poisson_distribution<int>(mu)(rng);
      d.cluster.push_back(g);
      d.time.push_back(t);
      ++row;
    }
  }
  return d;
}

BruteBh brute_force_bh(const std::vector<double>& p, double alpha) {
  std::vector<double> sorted = p;
  std::sort(sorted.begin(), sorted.end());
  const double m = static_cast<double>(p.size());
  double threshold = -1.0;
  for (std::size_t k = 1; k <= sorted.size(); ++k) {
    if (sorted[k - 1] <= static_cast<double>(k) * alpha / m) threshold = sorted[k - 1];
  }
  BruteBh out;
  for (std::size_t i = 0; i < p.size(); ++i) {
    out.significant.push_back(p[i] <= threshold);
    double adj = 1.0;
    for (std::size_t k = 0; k < sorted.size(); ++k) {
      if (sorted[k] >= p[i]) adj = std::min(adj, sorted[k] * m / static_cast<double>(k + 1));
    }
    out.adjusted.push_back(adj);
  }
  return out;
}

}  // namespace dtreg::testing
