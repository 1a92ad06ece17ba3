#pragma once

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dtreg/io.hpp"
#include "dtreg/stats/contingency.hpp"
#include "dtreg/stats/panel.hpp"

namespace dtreg::stats {

struct Table {
  std::string name;  // file stem
  io::CsvRow header;
  std::vector<io::CsvRow> rows;

  std::string csv() const { return io::to_csv(header, rows); }
};

struct ReportInputs {
  std::vector<FinalPair> pairs;
  double compound = 1.0;                                // S
  std::function<double(const std::string&)> per_reg;    // S_r (falls back to S); unset => S
  std::vector<PanelCell> panel;
  std::int64_t share_min_items = 15;
  std::size_t top_sectors_share = 10;
  std::size_t top_sectors_time = 8;
};

// The table bundle behind every figure. Pair tallies and distinct-predictor
// counts are scaled; unique-DOI counts are not.
std::vector<Table> report_tables(const ReportInputs& in);

// Names of the tables report_tables emits, in order.
std::vector<std::string> report_catalog();

// Distinct normalized predictor names per (regulation, RDC), over the full
// catalog vocabularies (zero rows/columns included).
Eigen::MatrixXd regulation_rdc_counts(const std::vector<FinalPair>& pairs);

std::vector<std::string> regulation_names();
std::vector<std::string> rdc_names();

// Pearson correlation between rows; nullopt-like NaN where a row is constant.
Eigen::MatrixXd row_correlation(const Eigen::MatrixXd& m);

// Leaf order of average-linkage agglomerative clustering on distance 1 - r.
// NaN correlations are treated as r = 0.
std::vector<std::size_t> average_linkage_order(const Eigen::MatrixXd& corr);

Table residual_table(const ContingencyResult& r);

}  // namespace dtreg::stats
