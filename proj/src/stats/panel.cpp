#include "dtreg/stats/panel.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "dtreg/error.hpp"
#include "dtreg/legal.hpp"
#include "dtreg/text.hpp"
#include "dtreg/vocab.hpp"

namespace dtreg::stats {

json to_json(const PanelCell& c) {
  return json{{"regulation", c.regulation}, {"year", c.year},   {"distinct", c.distinct}, {"y", c.y},
              {"exposure", c.exposure},     {"rel", c.rel},     {"post", c.post},         {"rate", c.rate}};
}

Panel build_panel(const std::vector<FinalPair>& pairs, const std::map<int, std::int64_t>& exposure,
                  const std::function<double(const std::string&)>& multiplier, const PanelOptions& opt) {
  Panel panel;
  std::map<std::string, std::map<int, std::set<std::string>>> distinct;
  std::size_t undated = 0;
  for (const auto& p : pairs) {
    if (!p.year) {
      ++undated;
      continue;
    }
    if (opt.first_year && *p.year < *opt.first_year) continue;
    if (opt.last_year && *p.year > *opt.last_year) continue;
    const auto it = exposure.find(*p.year);
    if (it == exposure.end() || it->second <= 0) {
      throw DataIntegrityError("pairs present in year " + std::to_string(*p.year) + " but N_y = 0");
    }
    legal::reference_year(p.regulation);  // rejects unknown regulations
    distinct[p.regulation][*p.year].insert(text::normalize_name(p.predictor));
  }
  if (undated) panel.warnings.push_back(std::to_string(undated) + " pairs without a publication year left out of the panel");

  for (const auto& meta : kRegulations) {
    const std::string reg(meta.id);
    const auto found = distinct.find(reg);
    if (found == distinct.end()) continue;
    const double s = multiplier(reg);
    for (const auto& [year, n] : exposure) {
      if (n <= 0) continue;
      if (opt.first_year && year < *opt.first_year) continue;
      if (opt.last_year && year > *opt.last_year) continue;
      PanelCell c;
      c.regulation = reg;
      c.year = year;
      const auto dy = found->second.find(year);
      c.distinct = dy == found->second.end() ? 0 : static_cast<std::int64_t>(dy->second.size());
      c.y = s * static_cast<double>(c.distinct);
      c.exposure = n;
      c.rel = year - meta.reference_year;
      c.post = year >= meta.reference_year ? 1 : 0;
      c.rate = c.y / static_cast<double>(n);
      panel.cells.push_back(c);
    }
  }
  return panel;
}

Design build_its_design(const std::vector<PanelCell>& cells) {
  std::vector<std::string> regs;
  for (const auto& c : cells) {
    if (std::find(regs.begin(), regs.end(), c.regulation) == regs.end()) regs.push_back(c.regulation);
  }
  const auto n = static_cast<Eigen::Index>(cells.size());
  const auto k = static_cast<Eigen::Index>(regs.size());
  Design d;
  d.x = Eigen::MatrixXd::Zero(n, k + 3);
  d.y.resize(n);
  d.offset.resize(n);
  for (const auto& r : regs) d.columns.push_back("alpha_" + r);
  d.columns.insert(d.columns.end(), {"rel", "post", "rel_x_post"});
  d.cluster_names = regs;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& c = cells[static_cast<std::size_t>(i)];
    const auto g = std::find(regs.begin(), regs.end(), c.regulation) - regs.begin();
    d.x(i, g) = 1.0;
    d.x(i, k) = c.rel;
    d.x(i, k + 1) = c.post;
    d.x(i, k + 2) = static_cast<double>(c.rel) * c.post;
    d.y(i) = c.y;
    d.offset(i) = std::log(static_cast<double>(c.exposure));
    d.cluster.push_back(static_cast<int>(g));
    d.time.push_back(c.year);
  }
  return d;
}

std::vector<double> rolling_mean(const std::vector<double>& series) {
  std::vector<double> out(series.size());
  for (std::size_t i = 0; i < series.size(); ++i) {
    const std::size_t lo = i == 0 ? 0 : i - 1;
    const std::size_t hi = std::min(series.size() - 1, i + 1);
    double sum = 0.0;
    for (std::size_t j = lo; j <= hi; ++j) sum += series[j];
    out[i] = sum / static_cast<double>(hi - lo + 1);
  }
  return out;
}

ShareSeries share_over_time(const std::vector<ShareItem>& items, std::int64_t min_items) {
  std::map<int, std::set<std::string>> per_year;
  std::map<int, std::map<std::string, std::set<std::string>>> per_cell;
  for (const auto& it : items) {
    per_year[it.year].insert(it.key);
    per_cell[it.year][it.category].insert(it.key);
  }
  ShareSeries out;
  for (const auto& [year, keys] : per_year) {
    if (static_cast<std::int64_t>(keys.size()) < min_items) {
      out.excluded_years.push_back(year);
      continue;
    }
    // An item may sit in several categories; shares use the category tallies.
    std::int64_t total = 0;
    for (const auto& [_, ks] : per_cell[year]) total += static_cast<std::int64_t>(ks.size());
    for (const auto& [cat, ks] : per_cell[year]) {
      const auto count = static_cast<std::int64_t>(ks.size());
      out.rows.push_back({year, cat, count, static_cast<double>(count) / static_cast<double>(total)});
    }
  }
  return out;
}

ShareSeries smooth_shares(const ShareSeries& series) {
  std::vector<int> years;
  std::set<std::string> cats;
  std::map<std::pair<int, std::string>, const ShareRow*> at;
  for (const auto& r : series.rows) {
    if (years.empty() || years.back() != r.year) years.push_back(r.year);
    cats.insert(r.category);
    at[{r.year, r.category}] = &r;
  }
  ShareSeries out;
  out.excluded_years = series.excluded_years;
  std::map<std::string, std::vector<double>> smoothed;
  for (const auto& c : cats) {
    std::vector<double> s;
    for (int y : years) {
      const auto it = at.find({y, c});
      s.push_back(it == at.end() ? 0.0 : it->second->share);
    }
    smoothed[c] = rolling_mean(s);
  }
  for (std::size_t i = 0; i < years.size(); ++i) {
    for (const auto& c : cats) {
      const auto it = at.find({years[i], c});
      out.rows.push_back({years[i], c, it == at.end() ? 0 : it->second->count, smoothed[c][i]});
    }
  }
  return out;
}

}  // namespace dtreg::stats
