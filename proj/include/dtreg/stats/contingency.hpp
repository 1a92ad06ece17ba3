#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace dtreg::stats {

using nlohmann::json;

enum class MonteCarlo { Auto, Always, Never };

struct Chi2Options {
  double scale = 1.0;           // observed = scale * counts (e.g. the purity multiplier)
  double alpha = 0.05;
  double min_expected = 5.0;    // BH family and adequacy threshold
  MonteCarlo monte_carlo = MonteCarlo::Auto;
  int mc_tables = 10000;
  std::uint64_t seed = 20240601;
};

struct ContingencyResult {
  std::vector<std::string> rows;
  std::vector<std::string> cols;
  Eigen::MatrixXd observed;
  Eigen::MatrixXd expected;
  Eigen::MatrixXd z;             // (O - E) / sqrt(E)
  Eigen::MatrixXd cell_p;        // two-sided normal p of z
  Eigen::MatrixXd bh_adjusted;   // NaN outside the tested family
  std::vector<std::vector<bool>> tested;
  std::vector<std::vector<bool>> significant;
  std::size_t tested_cells = 0;
  double chi2 = 0.0;
  int df = 0;
  double p = 1.0;
  double cramers_v = 0.0;
  std::optional<double> mc_p;
  int mc_tables = 0;
  std::uint64_t mc_seed = 0;
  std::vector<std::string> dropped_rows;
  std::vector<std::string> dropped_cols;
  std::vector<std::string> warnings;
};

// Pearson association suite on a table of nonnegative counts. Rows or
// columns with a zero margin are dropped with a warning first. The Monte-Carlo
// p resamples tables with the observed margins; it needs integer counts.
ContingencyResult chi2_suite(const Eigen::MatrixXd& counts, std::vector<std::string> rows,
                             std::vector<std::string> cols, const Chi2Options& opt = {});

json to_json(const ContingencyResult& r);

double chi2_upper_tail(double stat, int df);

struct BhResult {
  std::vector<std::optional<double>> adjusted;  // nullopt outside the family
  std::vector<bool> significant;
  std::size_t family_size = 0;
  std::string note;
};

// Benjamini-Hochberg step-up adjustment over the masked family (all when
// the mask is empty).
BhResult bh_fdr(const std::vector<double>& pvalues, double alpha, const std::vector<bool>& mask = {});

}  // namespace dtreg::stats
