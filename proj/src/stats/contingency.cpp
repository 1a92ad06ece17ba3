#include "dtreg/stats/contingency.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include <boost/math/special_functions/gamma.hpp>

#include "dtreg/error.hpp"
#include "dtreg/stats/glm.hpp"

namespace dtreg::stats {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double pearson_stat(const Eigen::MatrixXd& o) {
  const Eigen::VectorXd r = o.rowwise().sum();
  const Eigen::RowVectorXd c = o.colwise().sum();
  const double n = o.sum();
  double stat = 0.0;
  for (Eigen::Index i = 0; i < o.rows(); ++i) {
    for (Eigen::Index j = 0; j < o.cols(); ++j) {
      const double e = r(i) * c(j) / n;
      stat += (o(i, j) - e) * (o(i, j) - e) / e;
    }
  }
  return stat;
}

json matrix_json(const Eigen::MatrixXd& m) {
  json out = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(std::isnan(m(i, j)) ? json(nullptr) : json(m(i, j)));
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace

double chi2_upper_tail(double stat, int df) {
  if (df <= 0) throw DomainError("chi-square needs df >= 1");
  if (stat <= 0) return 1.0;
  return boost::math::gamma_q(df / 2.0, stat / 2.0);
}

ContingencyResult chi2_suite(const Eigen::MatrixXd& counts, std::vector<std::string> rows,
                             std::vector<std::string> cols, const Chi2Options& opt) {
  if (static_cast<Eigen::Index>(rows.size()) != counts.rows() || static_cast<Eigen::Index>(cols.size()) != counts.cols()) {
    throw std::invalid_argument("label count does not match table shape");
  }
  if (!(opt.scale > 0)) throw DomainError("scale must be positive");
  if ((counts.array() < 0).any() || !counts.allFinite()) throw DomainError("counts must be finite and nonnegative");

  ContingencyResult res;
  std::vector<Eigen::Index> keep_r, keep_c;
  for (Eigen::Index i = 0; i < counts.rows(); ++i) {
    if (counts.row(i).sum() > 0) keep_r.push_back(i);
    else res.dropped_rows.push_back(rows[static_cast<std::size_t>(i)]);
  }
  for (Eigen::Index j = 0; j < counts.cols(); ++j) {
    if (counts.col(j).sum() > 0) keep_c.push_back(j);
    else res.dropped_cols.push_back(cols[static_cast<std::size_t>(j)]);
  }
  for (const auto& r : res.dropped_rows) res.warnings.push_back("row '" + r + "' has a zero margin and was excluded");
  for (const auto& c : res.dropped_cols) res.warnings.push_back("column '" + c + "' has a zero margin and was excluded");
  if (keep_r.size() < 2 || keep_c.size() < 2) {
    throw DomainError("chi-square needs at least two rows and two columns with positive margins");
  }

  const auto R = static_cast<Eigen::Index>(keep_r.size());
  const auto C = static_cast<Eigen::Index>(keep_c.size());
  Eigen::MatrixXd raw(R, C);
  for (Eigen::Index i = 0; i < R; ++i) {
    res.rows.push_back(rows[static_cast<std::size_t>(keep_r[static_cast<std::size_t>(i)])]);
    for (Eigen::Index j = 0; j < C; ++j) raw(i, j) = counts(keep_r[static_cast<std::size_t>(i)], keep_c[static_cast<std::size_t>(j)]);
  }
  for (auto j : keep_c) res.cols.push_back(cols[static_cast<std::size_t>(j)]);

  res.observed = opt.scale * raw;
  const Eigen::VectorXd rs = res.observed.rowwise().sum();
  const Eigen::RowVectorXd cs = res.observed.colwise().sum();
  const double n = res.observed.sum();
  res.expected = rs * cs / n;
  res.z = (res.observed - res.expected).array() / res.expected.array().sqrt();
  res.chi2 = res.z.array().square().sum();
  res.df = static_cast<int>((R - 1) * (C - 1));
  res.p = chi2_upper_tail(res.chi2, res.df);
  res.cramers_v = std::sqrt(res.chi2 / (n * static_cast<double>(std::min(R, C) - 1)));

  res.cell_p.resize(R, C);
  std::vector<double> pv;
  std::vector<bool> mask;
  res.tested.assign(static_cast<std::size_t>(R), std::vector<bool>(static_cast<std::size_t>(C), false));
  for (Eigen::Index i = 0; i < R; ++i) {
    for (Eigen::Index j = 0; j < C; ++j) {
      res.cell_p(i, j) = normal_two_sided_p(res.z(i, j));
      const bool t = res.expected(i, j) >= opt.min_expected;
      res.tested[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = t;
      pv.push_back(res.cell_p(i, j));
      mask.push_back(t);
    }
  }
  const auto bh = bh_fdr(pv, opt.alpha, mask);
  res.tested_cells = bh.family_size;
  if (!bh.note.empty()) res.warnings.push_back(bh.note);
  res.bh_adjusted.resize(R, C);
  res.significant.assign(static_cast<std::size_t>(R), std::vector<bool>(static_cast<std::size_t>(C), false));
  for (Eigen::Index i = 0; i < R; ++i) {
    for (Eigen::Index j = 0; j < C; ++j) {
      const auto k = static_cast<std::size_t>(i * C + j);
      res.bh_adjusted(i, j) = bh.adjusted[k] ? *bh.adjusted[k] : kNaN;
      res.significant[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = bh.significant[k];
    }
  }

  const bool inadequate = (res.expected.array() < opt.min_expected).any();
  const bool want_mc = opt.monte_carlo == MonteCarlo::Always || (opt.monte_carlo == MonteCarlo::Auto && inadequate);
  if (inadequate) {
    res.warnings.push_back("some expected counts are below " + std::to_string(opt.min_expected) +
                           "; asymptotic p may be unreliable");
  }
  const bool integral = (raw.array() == raw.array().round()).all();
  if (want_mc && !integral) {
    res.warnings.push_back("Monte-Carlo p skipped: counts are not integers");
  } else if (want_mc && opt.mc_tables > 0) {
    // Permuting column labels over the unit-level expansion keeps both margins.
    std::vector<int> row_of, col_of;
    for (Eigen::Index i = 0; i < R; ++i) {
      for (Eigen::Index j = 0; j < C; ++j) {
        for (long k = 0; k < static_cast<long>(raw(i, j)); ++k) {
          row_of.push_back(static_cast<int>(i));
          col_of.push_back(static_cast<int>(j));
        }
      }
    }
    const double observed_stat = pearson_stat(raw);
    std::mt19937_64 rng(opt.seed);
    int extreme = 0;
    Eigen::MatrixXd sim(R, C);
    for (int b = 0; b < opt.mc_tables; ++b) {
      for (std::size_t k = col_of.size(); k > 1; --k) {
        std::uniform_int_distribution<std::size_t> pick(0, k - 1);
        std::swap(col_of[k - 1], col_of[pick(rng)]);
      }
      sim.setZero();
      for (std::size_t k = 0; k < row_of.size(); ++k) sim(row_of[k], col_of[k]) += 1.0;
      if (pearson_stat(sim) >= observed_stat * (1 - 1e-12)) ++extreme;
    }
    res.mc_p = (1.0 + extreme) / (1.0 + opt.mc_tables);
    res.mc_tables = opt.mc_tables;
    res.mc_seed = opt.seed;
  }
  return res;
}

BhResult bh_fdr(const std::vector<double>& pvalues, double alpha, const std::vector<bool>& mask) {
  if (!mask.empty() && mask.size() != pvalues.size()) throw std::invalid_argument("mask size mismatch");
  BhResult out;
  out.adjusted.assign(pvalues.size(), std::nullopt);
  out.significant.assign(pvalues.size(), false);
  std::vector<std::size_t> family;
  for (std::size_t i = 0; i < pvalues.size(); ++i) {
    if (!(pvalues[i] >= 0.0 && pvalues[i] <= 1.0)) throw DomainError("p-value outside [0,1]");
    if (mask.empty() || mask[i]) family.push_back(i);
  }
  out.family_size = family.size();
  if (family.empty()) {
    out.note = "empty BH family: no cells tested";
    return out;
  }
  std::stable_sort(family.begin(), family.end(), [&](auto a, auto b) { return pvalues[a] < pvalues[b]; });
  const double m = static_cast<double>(family.size());
  double running = 1.0;
  for (std::size_t k = family.size(); k-- > 0;) {
    running = std::min(running, pvalues[family[k]] * m / static_cast<double>(k + 1));
    out.adjusted[family[k]] = running;
    out.significant[family[k]] = running <= alpha;
  }
  return out;
}

json to_json(const ContingencyResult& r) {
  json tested = json::array(), sig = json::array();
  for (std::size_t i = 0; i < r.tested.size(); ++i) {
    tested.push_back(r.tested[i]);
    sig.push_back(r.significant[i]);
  }
  return json{{"rows", r.rows},
              {"cols", r.cols},
              {"observed", matrix_json(r.observed)},
              {"expected", matrix_json(r.expected)},
              {"z", matrix_json(r.z)},
              {"cell_p", matrix_json(r.cell_p)},
              {"bh_adjusted", matrix_json(r.bh_adjusted)},
              {"tested", tested},
              {"significant", sig},
              {"tested_cells", r.tested_cells},
              {"chi2", r.chi2},
              {"df", r.df},
              {"p", r.p},
              {"cramers_v", r.cramers_v},
              {"mc_p", r.mc_p ? json(*r.mc_p) : json(nullptr)},
              {"mc_tables", r.mc_tables},
              {"mc_seed", r.mc_seed},
              {"dropped_rows", r.dropped_rows},
              {"dropped_cols", r.dropped_cols},
              {"warnings", r.warnings}};
}

}  // namespace dtreg::stats
