#include "dtreg/stats/report.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include "dtreg/text.hpp"
#include "dtreg/vocab.hpp"

namespace dtreg::stats {

namespace {

using io::fmt_double;

std::string num(double v) { return std::isnan(v) ? "n/a" : fmt_double(v); }
std::string num(std::int64_t v) { return std::to_string(v); }
std::string num(std::size_t v) { return std::to_string(v); }

// Keys ordered by decreasing value; ties keep the key order of `keys`.
std::vector<std::string> by_decreasing(const std::vector<std::string>& keys, const std::map<std::string, double>& v) {
  std::vector<std::string> out = keys;
  std::stable_sort(out.begin(), out.end(), [&](const auto& a, const auto& b) {
    const auto va = v.count(a) ? v.at(a) : 0.0;
    const auto vb = v.count(b) ? v.at(b) : 0.0;
    return va > vb;
  });
  return out;
}

std::vector<std::string> sector_names() {
  std::vector<std::string> s;
  for (auto t : kQuerySectors) s.emplace_back(t);
  return s;
}

std::vector<std::string> present(const std::vector<std::string>& universe, const std::set<std::string>& seen) {
  std::vector<std::string> out;
  for (const auto& u : universe) {
    if (seen.count(u)) out.push_back(u);
  }
  for (const auto& s : seen) {
    if (std::find(universe.begin(), universe.end(), s) == universe.end()) out.push_back(s);
  }
  return out;
}

using Distinct = std::map<std::pair<std::string, std::string>, std::set<std::string>>;

}  // namespace

std::vector<std::string> regulation_names() {
  std::vector<std::string> r;
  for (const auto& m : kRegulations) r.emplace_back(m.id);
  return r;
}

std::vector<std::string> rdc_names() {
  std::vector<std::string> r;
  for (auto t : kRdcTokens) r.emplace_back(t);
  return r;
}

Eigen::MatrixXd regulation_rdc_counts(const std::vector<FinalPair>& pairs) {
  const auto regs = regulation_names();
  const auto rdcs = rdc_names();
  Distinct d;
  for (const auto& p : pairs) d[{p.regulation, p.rdc}].insert(text::normalize_name(p.predictor));
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(regs.size()), static_cast<Eigen::Index>(rdcs.size()));
  for (std::size_t i = 0; i < regs.size(); ++i) {
    for (std::size_t j = 0; j < rdcs.size(); ++j) {
      const auto it = d.find({regs[i], rdcs[j]});
      if (it != d.end()) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = static_cast<double>(it->second.size());
    }
  }
  return m;
}

Eigen::MatrixXd row_correlation(const Eigen::MatrixXd& m) {
  const auto n = m.rows();
  Eigen::MatrixXd centered = m.colwise() - m.rowwise().mean();
  Eigen::VectorXd norms = centered.rowwise().norm();
  Eigen::MatrixXd r(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (norms(i) == 0 || norms(j) == 0) {
        r(i, j) = std::numeric_limits<double>::quiet_NaN();
      } else {
        r(i, j) = std::clamp(centered.row(i).dot(centered.row(j)) / (norms(i) * norms(j)), -1.0, 1.0);
      }
    }
  }
  return r;
}

std::vector<std::size_t> average_linkage_order(const Eigen::MatrixXd& corr) {
  const auto n = static_cast<std::size_t>(corr.rows());
  if (n == 0) return {};
  struct Cluster {
    std::vector<std::size_t> leaves;
  };
  std::vector<Cluster> live;
  for (std::size_t i = 0; i < n; ++i) live.push_back({{i}});
  auto dist = [&](std::size_t a, std::size_t b) {
    const double r = corr(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
    return 1.0 - (std::isnan(r) ? 0.0 : r);
  };
  while (live.size() > 1) {
    std::size_t best_a = 0, best_b = 1;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < live.size(); ++a) {
      for (std::size_t b = a + 1; b < live.size(); ++b) {
        double sum = 0.0;
        for (auto i : live[a].leaves) {
          for (auto j : live[b].leaves) sum += dist(i, j);
        }
        const double avg = sum / static_cast<double>(live[a].leaves.size() * live[b].leaves.size());
        if (avg < best - 1e-15) {
          best = avg;
          best_a = a;
          best_b = b;
        }
      }
    }
    live[best_a].leaves.insert(live[best_a].leaves.end(), live[best_b].leaves.begin(), live[best_b].leaves.end());
    live.erase(live.begin() + static_cast<std::ptrdiff_t>(best_b));
  }
  return live.front().leaves;
}

Table residual_table(const ContingencyResult& r) {
  Table t{"regulation_rdc_residuals",
          {"regulation", "rdc", "observed", "expected", "z", "p", "tested", "bh_adjusted_p", "significant"},
          {}};
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    for (std::size_t j = 0; j < r.cols.size(); ++j) {
      const auto a = static_cast<Eigen::Index>(i);
      const auto b = static_cast<Eigen::Index>(j);
      t.rows.push_back({r.rows[i], r.cols[j], num(r.observed(a, b)), num(r.expected(a, b)), num(r.z(a, b)),
                        num(r.cell_p(a, b)), r.tested[i][j] ? "1" : "0", num(r.bh_adjusted(a, b)),
                        r.significant[i][j] ? "1" : "0"});
    }
  }
  return t;
}

std::vector<std::string> report_catalog() {
  return {"regulation_pairs",        "regulation_distinct_predictors", "sector_share",
          "rdc_distribution",        "sector_by_regulation",           "regulation_rdc_flows",
          "rate_series",             "sector_share_time",              "predictors_vs_dois",
          "regulation_rdc_composition", "regulation_correlation",      "regulation_cluster_order",
          "sector_by_rdc",           "sector_rdc_cluster_order"};
}

std::vector<Table> report_tables(const ReportInputs& in) {
  const double S = in.compound;
  const auto mult = [&](const std::string& reg) { return in.per_reg ? in.per_reg(reg) : S; };

  std::set<std::string> seen_regs, seen_sectors, seen_rdcs;
  std::map<std::string, double> reg_pairs, sector_adj, rdc_adj;
  std::map<std::string, std::int64_t> reg_pairs_raw, sector_raw, rdc_raw;
  Distinct reg_names, reg_dois, reg_rdc_set, sector_reg, reg_rdc, sector_rdc;
  std::map<std::pair<std::string, std::string>, std::int64_t> reg_rdc_pairs;
  for (const auto& p : in.pairs) {
    const auto name = text::normalize_name(p.predictor);
    const double m = mult(p.regulation);
    seen_regs.insert(p.regulation);
    seen_sectors.insert(p.sector);
    seen_rdcs.insert(p.rdc);
    reg_pairs[p.regulation] += m;
    ++reg_pairs_raw[p.regulation];
    sector_adj[p.sector] += m;
    ++sector_raw[p.sector];
    rdc_adj[p.rdc] += m;
    ++rdc_raw[p.rdc];
    reg_names[{p.regulation, ""}].insert(name);
    reg_dois[{p.regulation, ""}].insert(p.doi);
    reg_rdc_set[{p.regulation, ""}].insert(p.rdc);
    sector_reg[{p.sector, p.regulation}].insert(name);
    reg_rdc[{p.regulation, p.rdc}].insert(name);
    sector_rdc[{p.sector, p.rdc}].insert(name);
    ++reg_rdc_pairs[{p.regulation, p.rdc}];
  }
  const auto regs = present(regulation_names(), seen_regs);
  const auto sectors = present(sector_names(), seen_sectors);
  const auto rdcs = present(rdc_names(), seen_rdcs);
  auto distinct = [](const Distinct& d, const std::string& a, const std::string& b) -> std::int64_t {
    const auto it = d.find({a, b});
    return it == d.end() ? 0 : static_cast<std::int64_t>(it->second.size());
  };

  std::vector<Table> out;

  {
    Table t{"regulation_pairs", {"regulation", "pairs", "multiplier", "adjusted_pairs"}, {}};
    for (const auto& r : by_decreasing(regs, reg_pairs)) {
      t.rows.push_back({r, num(reg_pairs_raw[r]), num(mult(r)), num(reg_pairs[r])});
    }
    out.push_back(std::move(t));
  }
  {
    Table t{"regulation_distinct_predictors", {"regulation", "distinct_predictors", "multiplier", "adjusted_distinct_predictors"}, {}};
    std::map<std::string, double> adj;
    for (const auto& r : regs) adj[r] = mult(r) * static_cast<double>(distinct(reg_names, r, ""));
    for (const auto& r : by_decreasing(regs, adj)) {
      t.rows.push_back({r, num(distinct(reg_names, r, "")), num(mult(r)), num(adj[r])});
    }
    out.push_back(std::move(t));
  }
  {
    Table t{"sector_share", {"sector", "pairs", "adjusted_pairs", "share"}, {}};
    double total = 0.0;
    for (const auto& [_, v] : sector_adj) total += v;
    const auto order = by_decreasing(sectors, sector_adj);
    double other_adj = 0.0;
    std::int64_t other_raw = 0;
    for (std::size_t i = 0; i < order.size(); ++i) {
      const auto& s = order[i];
      if (i < in.top_sectors_share) {
        t.rows.push_back({s, num(sector_raw[s]), num(sector_adj[s]), num(sector_adj[s] / total)});
      } else {
        other_adj += sector_adj[s];
        other_raw += sector_raw[s];
      }
    }
    if (order.size() > in.top_sectors_share) {
      t.rows.push_back({"Others", num(other_raw), num(other_adj), num(other_adj / total)});
    }
    out.push_back(std::move(t));
  }
  {
    Table t{"rdc_distribution", {"rdc", "pairs", "adjusted_pairs"}, {}};
    for (const auto& c : by_decreasing(rdcs, rdc_adj)) t.rows.push_back({c, num(rdc_raw[c]), num(rdc_adj[c])});
    out.push_back(std::move(t));
  }
  {
    Table t{"sector_by_regulation",
            {"sector", "regulation", "distinct_predictors", "adjusted_distinct_predictors", "sector_rank", "regulation_rank"},
            {}};
    std::map<std::string, double> row_tot, col_tot;
    for (const auto& s : sectors) {
      for (const auto& r : regs) {
        const double v = mult(r) * static_cast<double>(distinct(sector_reg, s, r));
        row_tot[s] += v;
        col_tot[r] += v;
      }
    }
    const auto srows = by_decreasing(sectors, row_tot);
    const auto rcols = by_decreasing(regs, col_tot);
    for (std::size_t i = 0; i < srows.size(); ++i) {
      for (std::size_t j = 0; j < rcols.size(); ++j) {
        const auto d = distinct(sector_reg, srows[i], rcols[j]);
        t.rows.push_back({srows[i], rcols[j], num(d), num(mult(rcols[j]) * static_cast<double>(d)), num(i + 1), num(j + 1)});
      }
    }
    out.push_back(std::move(t));
  }
  {
    Table t{"regulation_rdc_flows", {"regulation", "rdc", "adjusted_distinct_predictors", "proportion"}, {}};
    for (const auto& r : regs) {
      double tot = 0.0;
      for (const auto& c : rdcs) tot += mult(r) * static_cast<double>(distinct(reg_rdc, r, c));
      for (const auto& c : rdcs) {
        const double v = mult(r) * static_cast<double>(distinct(reg_rdc, r, c));
        if (v > 0) t.rows.push_back({r, c, num(v), num(v / tot)});
      }
    }
    out.push_back(std::move(t));
  }
  {
    Table t{"rate_series", {"regulation", "year", "distinct", "adjusted", "exposure", "rate", "rate_rolling3", "reference_year"}, {}};
    std::map<std::string, std::vector<const PanelCell*>> by_reg;
    for (const auto& c : in.panel) by_reg[c.regulation].push_back(&c);
    for (const auto& r : regulation_names()) {
      const auto it = by_reg.find(r);
      if (it == by_reg.end()) continue;
      auto cells = it->second;
      std::stable_sort(cells.begin(), cells.end(), [](auto a, auto b) { return a->year < b->year; });
      std::vector<double> rates;
      for (auto* c : cells) rates.push_back(c->rate);
      const auto smooth = rolling_mean(rates);
      for (std::size_t i = 0; i < cells.size(); ++i) {
        const auto* c = cells[i];
        t.rows.push_back({r, num(static_cast<std::int64_t>(c->year)), num(c->distinct), num(c->y), num(c->exposure),
                          num(c->rate), num(smooth[i]), num(static_cast<std::int64_t>(c->year - c->rel))});
      }
    }
    out.push_back(std::move(t));
  }
  {
    Table t{"sector_share_time", {"year", "sector", "distinct_features", "share", "share_rolling3"}, {}};
    std::map<std::string, std::set<std::string>> sector_features;
    for (const auto& p : in.pairs) sector_features[p.sector].insert(text::normalize_name(p.predictor));
    std::map<std::string, double> size;
    for (const auto& [s, f] : sector_features) size[s] = static_cast<double>(f.size());
    const auto order = by_decreasing(sectors, size);
    const std::set<std::string> top(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), in.top_sectors_time)));
    std::vector<ShareItem> items;
    for (const auto& p : in.pairs) {
      if (!p.year) continue;
      items.push_back({*p.year, top.count(p.sector) ? p.sector : "Others", text::normalize_name(p.predictor)});
    }
    const auto raw = share_over_time(items, in.share_min_items);
    const auto smooth = smooth_shares(raw);
    std::map<std::pair<int, std::string>, double> raw_share;
    for (const auto& r : raw.rows) raw_share[{r.year, r.category}] = r.share;
    for (const auto& r : smooth.rows) {
      const auto it = raw_share.find({r.year, r.category});
      t.rows.push_back({num(static_cast<std::int64_t>(r.year)), r.category, num(r.count),
                        num(it == raw_share.end() ? 0.0 : it->second), num(r.share)});
    }
    out.push_back(std::move(t));
  }
  {
    Table t{"predictors_vs_dois",
            {"regulation", "unique_predictors", "adjusted_unique_predictors", "unique_dois", "rdc_diversity", "reference_year"},
            {}};
    for (const auto& r : regs) {
      const auto np = distinct(reg_names, r, "");
      const auto meta = find_regulation(r);
      t.rows.push_back({r, num(np), num(mult(r) * static_cast<double>(np)), num(distinct(reg_dois, r, "")),
                        num(distinct(reg_rdc_set, r, "")), meta ? num(static_cast<std::int64_t>(meta->reference_year)) : "n/a"});
    }
    out.push_back(std::move(t));
  }
  {
    Table t{"regulation_rdc_composition", {"regulation", "rdc", "pairs", "adjusted_pairs", "regulation_total"}, {}};
    for (const auto& r : by_decreasing(regs, reg_pairs)) {
      const double total = reg_pairs[r];
      const double raw_total = static_cast<double>(reg_pairs_raw[r]);
      for (const auto& c : rdcs) {
        const auto it = reg_rdc_pairs.find({r, c});
        if (it == reg_rdc_pairs.end()) continue;
        t.rows.push_back({r, c, num(it->second), num(total * static_cast<double>(it->second) / raw_total), num(total)});
      }
    }
    out.push_back(std::move(t));
  }
  {
    Eigen::MatrixXd profile = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(regs.size()), static_cast<Eigen::Index>(sectors.size()));
    for (std::size_t i = 0; i < regs.size(); ++i) {
      for (std::size_t j = 0; j < sectors.size(); ++j) {
        profile(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
            mult(regs[i]) * static_cast<double>(distinct(sector_reg, sectors[j], regs[i]));
      }
    }
    const auto corr = row_correlation(profile);
    Table t{"regulation_correlation", {"regulation_a", "regulation_b", "r"}, {}};
    for (std::size_t i = 0; i < regs.size(); ++i) {
      for (std::size_t j = 0; j < regs.size(); ++j) {
        t.rows.push_back({regs[i], regs[j], num(corr(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)))});
      }
    }
    out.push_back(std::move(t));
    Table o{"regulation_cluster_order", {"position", "regulation"}, {}};
    const auto order = average_linkage_order(corr);
    for (std::size_t k = 0; k < order.size(); ++k) o.rows.push_back({num(k + 1), regs[order[k]]});
    out.push_back(std::move(o));
  }
  {
    Table t{"sector_by_rdc", {"sector", "rdc", "distinct_predictors", "adjusted_distinct_predictors"}, {}};
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(sectors.size()), static_cast<Eigen::Index>(rdcs.size()));
    for (std::size_t i = 0; i < sectors.size(); ++i) {
      for (std::size_t j = 0; j < rdcs.size(); ++j) {
        const auto d = distinct(sector_rdc, sectors[i], rdcs[j]);
        m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = S * static_cast<double>(d);
        t.rows.push_back({sectors[i], rdcs[j], num(d), num(S * static_cast<double>(d))});
      }
    }
    out.push_back(std::move(t));
    Table o{"sector_rdc_cluster_order", {"axis", "position", "label"}, {}};
    const auto row_order = average_linkage_order(row_correlation(m));
    const auto col_order = average_linkage_order(row_correlation(m.transpose()));
    for (std::size_t k = 0; k < row_order.size(); ++k) o.rows.push_back({"sector", num(k + 1), sectors[row_order[k]]});
    for (std::size_t k = 0; k < col_order.size(); ++k) o.rows.push_back({"rdc", num(k + 1), rdcs[col_order[k]]});
    out.push_back(std::move(o));
  }
  return out;
}

}  // namespace dtreg::stats
