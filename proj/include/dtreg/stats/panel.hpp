#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dtreg/stats/glm.hpp"

namespace dtreg::stats {

// One retained predictor-regulation pair, flattened with the paper metadata
// the analyses need.
struct FinalPair {
  std::string doi;
  std::string predictor;
  std::string rdc;
  std::string regulation;
  std::string sector;
  std::optional<int> year;
};

struct PanelCell {
  std::string regulation;
  int year = 0;
  std::int64_t distinct = 0;  // |D_{y,r}|
  double y = 0.0;             // multiplier * |D_{y,r}|
  std::int64_t exposure = 0;  // N_y
  int rel = 0;                // year - E_r
  int post = 0;               // year >= E_r
  double rate = 0.0;          // y / N_y
};

json to_json(const PanelCell& c);

struct PanelOptions {
  std::optional<int> first_year;
  std::optional<int> last_year;
};

struct Panel {
  std::vector<PanelCell> cells;  // regulation-major (catalog order), then year
  std::vector<std::string> warnings;
};

// Cells for every regulation with at least one pair and every year with
// N_y > 0. `multiplier` maps a regulation to S (or S_r).
Panel build_panel(const std::vector<FinalPair>& pairs, const std::map<int, std::int64_t>& exposure,
                  const std::function<double(const std::string&)>& multiplier, const PanelOptions& opt = {});

// Regulation fixed effects alpha_<reg> (no global intercept), rel, post,
// rel_x_post; offset log N_y; clustered by regulation, time = year.
Design build_its_design(const std::vector<PanelCell>& cells);

// Centered three-point mean; the window shrinks at the ends.
std::vector<double> rolling_mean(const std::vector<double>& series);

struct ShareRow {
  int year = 0;
  std::string category;
  std::int64_t count = 0;  // distinct items
  double share = 0.0;
};

struct ShareSeries {
  std::vector<ShareRow> rows;  // year-major; shares sum to 1 per year
  std::vector<int> excluded_years;
};

struct ShareItem {
  int year = 0;
  std::string category;
  std::string key;  // item identity for distinct counting
};

// Per-year composition over distinct items; years with fewer than
// `min_items` distinct items are left out.
ShareSeries share_over_time(const std::vector<ShareItem>& items, std::int64_t min_items = 15);

// Rolling mean of each category's share across the retained years. Shares
// still sum to 1 per year.
ShareSeries smooth_shares(const ShareSeries& series);

}  // namespace dtreg::stats
