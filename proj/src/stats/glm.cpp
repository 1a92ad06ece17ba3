#include "dtreg/stats/glm.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "dtreg/error.hpp"

namespace dtreg::stats {

using Eigen::MatrixXd;
using Eigen::VectorXd;

std::size_t FitResult::index(const std::string& name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw std::out_of_range("no coefficient named " + name);
  return static_cast<std::size_t>(it - names.begin());
}

double FitResult::robust_se(const std::string& name) const {
  const auto i = static_cast<Eigen::Index>(index(name));
  return std::sqrt(cov_robust(i, i));
}

double FitResult::model_se(const std::string& name) const {
  const auto i = static_cast<Eigen::Index>(index(name));
  return std::sqrt(cov_model(i, i));
}

namespace {

json matrix_json(const MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

void validate(const Design& d) {
  const auto n = d.x.rows();
  if (d.y.size() != n || d.offset.size() != n || static_cast<Eigen::Index>(d.cluster.size()) != n) {
    throw std::invalid_argument("design dimensions disagree");
  }
  if (static_cast<Eigen::Index>(d.columns.size()) != d.x.cols()) throw std::invalid_argument("column names disagree");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!std::isfinite(d.y(i)) || d.y(i) < 0) throw DomainError("Poisson outcome must be finite and >= 0");
    if (!std::isfinite(d.offset(i))) throw DomainError("offset must be finite");
  }
  if (n <= d.x.cols()) throw DomainError("need more observations than coefficients");
  if (const auto bad = collinear_columns(d.x, d.columns); !bad.empty()) {
    std::string names;
    for (const auto& b : bad) names += (names.empty() ? "" : ", ") + b;
    throw RankDeficiency("design matrix is rank deficient; collinear columns: " + names);
  }
}

std::size_t count_clusters(const Design& d) {
  return d.cluster.empty() ? 0 : static_cast<std::size_t>(*std::max_element(d.cluster.begin(), d.cluster.end()) + 1);
}

MatrixXd cluster_meat(const Design& d, const VectorXd& mu) {
  const auto p = d.x.cols();
  std::vector<VectorXd> scores(count_clusters(d), VectorXd::Zero(p));
  for (Eigen::Index i = 0; i < d.x.rows(); ++i) {
    scores[static_cast<std::size_t>(d.cluster[static_cast<std::size_t>(i)])] += d.x.row(i).transpose() * (d.y(i) - mu(i));
  }
  MatrixXd meat = MatrixXd::Zero(p, p);
  for (const auto& s : scores) meat += s * s.transpose();
  return meat;
}

}  // namespace

double poisson_deviance(const VectorXd& y, const VectorXd& mu) {
  double dev = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double term = y(i) > 0 ? y(i) * std::log(y(i) / mu(i)) : 0.0;
    dev += 2.0 * (term - (y(i) - mu(i)));
  }
  return dev;
}

std::vector<std::string> collinear_columns(const MatrixXd& x, const std::vector<std::string>& names) {
  Eigen::ColPivHouseholderQR<MatrixXd> qr(x);
  qr.setThreshold(1e-10);
  const auto rank = qr.rank();
  std::vector<std::string> out;
  const auto perm = qr.colsPermutation().indices();
  for (Eigen::Index k = rank; k < x.cols(); ++k) out.push_back(names[static_cast<std::size_t>(perm(k))]);
  return out;
}

FitResult fit_poisson_glm(const Design& d, const FitOptions& opt) {
  validate(d);
  const auto n = d.x.rows();
  const auto p = d.x.cols();

  VectorXd mu = d.y.array() + 0.1;
  VectorXd eta = mu.array().log();
  VectorXd beta = VectorXd::Zero(p);
  double dev = poisson_deviance(d.y, mu);

  FitResult f;
  f.method = "glm-irls";
  f.names = d.columns;
  std::ostringstream trace;
  bool first = true;
  for (int it = 1; it <= opt.max_iter; ++it) {
    const VectorXd w = mu;
    const VectorXd z = (eta - d.offset).array() + (d.y - mu).array() / mu.array();
    const VectorXd sw = w.array().sqrt();
    VectorXd next = (sw.asDiagonal() * d.x).colPivHouseholderQr().solve(sw.cwiseProduct(z));

    VectorXd next_eta = d.x * next + d.offset;
    VectorXd next_mu = next_eta.array().exp();
    double next_dev = poisson_deviance(d.y, next_mu);
    // Step halving when the deviance is non-finite or increases.
    for (int h = 0; h < 30 && !first && (!std::isfinite(next_dev) || next_dev > dev * (1 + 1e-12) + 1e-12); ++h) {
      next = 0.5 * (next + beta);
      next_eta = d.x * next + d.offset;
      next_mu = next_eta.array().exp();
      next_dev = poisson_deviance(d.y, next_mu);
    }
    if (!std::isfinite(next_dev)) {
      throw ConvergenceError("IRLS produced a non-finite deviance", trace.str());
    }

    const double rel_dev = std::abs(next_dev - dev) / (std::abs(next_dev) + 0.1);
    const double step = first ? 1.0 : ((next - beta).array().abs() / (1.0 + next.array().abs())).maxCoeff();
    beta = next;
    eta = next_eta;
    mu = next_mu;
    dev = next_dev;
    f.trace.push_back(dev);
    trace << "iter " << it << ": deviance=" << dev << " step=" << step << "\n";
    f.iterations = it;
    if (!first && rel_dev < opt.deviance_tol && step < opt.coef_tol) {
      f.converged = true;
      break;
    }
    first = false;
  }
  if (!f.converged) {
    throw ConvergenceError("IRLS did not converge within " + std::to_string(opt.max_iter) + " iterations",
                           trace.str());
  }

  const MatrixXd xtwx = d.x.transpose() * mu.asDiagonal() * d.x;
  const MatrixXd bread = xtwx.ldlt().solve(MatrixXd::Identity(p, p));
  f.coef = beta;
  f.cov_model = bread;
  f.cov_robust = bread * cluster_meat(d, mu) * bread;
  f.deviance = dev;
  f.pearson_chi2 = ((d.y - mu).array().square() / mu.array()).sum();
  f.df_resid = static_cast<int>(n - p);
  f.dispersion = f.pearson_chi2 / f.df_resid;
  f.n_clusters = count_clusters(d);
  if (f.n_clusters < 30) {
    f.warnings.push_back("cluster-robust covariance (CR0) with only " + std::to_string(f.n_clusters) +
                         " clusters; standard errors may be optimistic");
  }
  return f;
}

FitResult fit_poisson_gee(const Design& d, const GeeOptions& opt) {
  validate(d);
  const auto n = d.x.rows();
  const auto p = d.x.cols();
  const bool ar1 = opt.correlation == WorkingCorrelation::Ar1;

  // Rows of each cluster, ordered by time.
  std::map<int, std::vector<Eigen::Index>> groups;
  for (Eigen::Index i = 0; i < n; ++i) groups[d.cluster[static_cast<std::size_t>(i)]].push_back(i);
  for (auto& [_, rows] : groups) {
    std::stable_sort(rows.begin(), rows.end(), [&](auto a, auto b) {
      return d.time[static_cast<std::size_t>(a)] < d.time[static_cast<std::size_t>(b)];
    });
  }

  FitResult f;
  f.method = ar1 ? "gee-ar1" : "gee-independence";
  f.names = d.columns;
  VectorXd beta = VectorXd::Zero(p);
  if (opt.warm_start) beta = fit_poisson_glm(d).coef;

  double rho = 0.0;
  double phi = 1.0;
  std::ostringstream trace;

  auto working_inverse = [&](const std::vector<Eigen::Index>& rows, const VectorXd& mu) {
    const auto m = static_cast<Eigen::Index>(rows.size());
    MatrixXd r = MatrixXd::Identity(m, m);
    if (ar1) {
      for (Eigen::Index j = 0; j < m; ++j) {
        for (Eigen::Index k = 0; k < m; ++k) {
          const int lag = std::abs(d.time[static_cast<std::size_t>(rows[static_cast<std::size_t>(j)])] -
                                   d.time[static_cast<std::size_t>(rows[static_cast<std::size_t>(k)])]);
          r(j, k) = j == k ? 1.0 : std::pow(rho, lag);
        }
      }
    }
    VectorXd a_half(m);
    for (Eigen::Index j = 0; j < m; ++j) a_half(j) = std::sqrt(mu(rows[static_cast<std::size_t>(j)]));
    const MatrixXd v = a_half.asDiagonal() * r * a_half.asDiagonal();
    return MatrixXd(v.ldlt().solve(MatrixXd::Identity(m, m)));
  };

  auto update_association = [&](const VectorXd& mu) {
    const VectorXd resid = (d.y - mu).array() / mu.array().sqrt();
    phi = resid.squaredNorm() / static_cast<double>(n - p);
    if (!ar1) return;
    double num = 0.0;
    long pairs = 0;
    for (const auto& [_, rows] : groups) {
      for (std::size_t j = 0; j + 1 < rows.size(); ++j) {
        if (d.time[static_cast<std::size_t>(rows[j + 1])] - d.time[static_cast<std::size_t>(rows[j])] != 1) continue;
        num += resid(rows[j]) * resid(rows[j + 1]);
        ++pairs;
      }
    }
    const double denom_pairs = pairs > p ? static_cast<double>(pairs - p) : static_cast<double>(std::max<long>(pairs, 1));
    rho = num / (phi * denom_pairs);
    if (std::abs(rho) >= opt.rho_bound) {
      f.warnings.push_back("estimated |rho| = " + std::to_string(std::abs(rho)) + " clamped to " +
                           std::to_string(opt.rho_bound));
      rho = std::copysign(opt.rho_bound, rho);
    }
  };

  auto accumulate = [&](const VectorXd& mu, MatrixXd& h, VectorXd& u, MatrixXd* meat) {
    h.setZero(p, p);
    u.setZero(p);
    if (meat) meat->setZero(p, p);
    for (const auto& [_, rows] : groups) {
      const auto m = static_cast<Eigen::Index>(rows.size());
      MatrixXd dmat(m, p);
      VectorXd e(m);
      for (Eigen::Index j = 0; j < m; ++j) {
        const auto i = rows[static_cast<std::size_t>(j)];
        dmat.row(j) = mu(i) * d.x.row(i);
        e(j) = d.y(i) - mu(i);
      }
      const MatrixXd vinv = working_inverse(rows, mu);
      const MatrixXd dtv = dmat.transpose() * vinv;
      h += dtv * dmat;
      const VectorXd s = dtv * e;
      u += s;
      if (meat) *meat += s * s.transpose();
    }
  };

  VectorXd mu = (d.x * beta + d.offset).array().exp();
  MatrixXd h(p, p);
  VectorXd u(p);
  for (int it = 1; it <= opt.max_iter; ++it) {
    update_association(mu);
    accumulate(mu, h, u, nullptr);
    VectorXd step = h.ldlt().solve(u);
    const double largest = step.cwiseAbs().maxCoeff();
    if (largest > 5.0) step *= 5.0 / largest;  // damp early scoring steps from a cold start
    beta += step;
    mu = (d.x * beta + d.offset).array().exp();
    if (!mu.allFinite()) throw ConvergenceError("GEE produced non-finite means", trace.str());
    const double rel = (step.array().abs() / (1.0 + beta.array().abs())).maxCoeff();
    f.trace.push_back(rel);
    trace << "iter " << it << ": step=" << rel << " rho=" << rho << " phi=" << phi << "\n";
    f.iterations = it;
    if (rel < opt.coef_tol) {
      f.converged = true;
      break;
    }
  }
  if (!f.converged) {
    throw ConvergenceError("GEE did not converge within " + std::to_string(opt.max_iter) + " iterations",
                           trace.str());
  }

  update_association(mu);
  MatrixXd meat(p, p);
  accumulate(mu, h, u, &meat);
  const MatrixXd bread = h.ldlt().solve(MatrixXd::Identity(p, p));
  f.coef = beta;
  f.cov_model = phi * bread;
  f.cov_robust = bread * meat * bread;
  f.deviance = poisson_deviance(d.y, mu);
  f.pearson_chi2 = ((d.y - mu).array().square() / mu.array()).sum();
  f.df_resid = static_cast<int>(n - p);
  f.dispersion = f.pearson_chi2 / f.df_resid;
  f.n_clusters = groups.size();
  if (ar1) f.rho = rho;
  return f;
}

double normal_two_sided_p(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

Effect linear_effect(const FitResult& fit, const std::string& name,
                     const std::vector<std::pair<std::string, double>>& weights) {
  VectorXd w = VectorXd::Zero(fit.coef.size());
  for (const auto& [coef, weight] : weights) w(static_cast<Eigen::Index>(fit.index(coef))) += weight;
  Effect e;
  e.name = name;
  e.estimate = w.dot(fit.coef);
  e.se = std::sqrt(w.dot(fit.cov_robust * w));
  e.rr = std::exp(e.estimate);
  e.ci_low = std::exp(e.estimate - 1.96 * e.se);
  e.ci_high = std::exp(e.estimate + 1.96 * e.se);
  e.p = e.se > 0 ? normal_two_sided_p(e.estimate / e.se) : (e.estimate == 0 ? 1.0 : 0.0);
  return e;
}

std::vector<Effect> derived_effects(const FitResult& fit, const std::string& rel, const std::string& post,
                                    const std::string& rel_post) {
  if (!fit.converged) throw std::invalid_argument("effects requested from an unconverged fit");
  return {
      linear_effect(fit, "level_change", {{post, 1.0}}),
      linear_effect(fit, "pre_slope", {{rel, 1.0}}),
      linear_effect(fit, "post_slope", {{rel, 1.0}, {rel_post, 1.0}}),
      linear_effect(fit, "slope_change", {{rel_post, 1.0}}),
      linear_effect(fit, "five_year_post", {{rel, 5.0}, {rel_post, 5.0}}),
  };
}

json to_json(const Effect& e) {
  return json{{"effect", e.name}, {"log_estimate", e.estimate}, {"se_robust", e.se}, {"rate_ratio", e.rr},
              {"ci95_low", e.ci_low}, {"ci95_high", e.ci_high}, {"p", e.p}};
}

json to_json(const FitResult& f) {
  json coefs = json::array();
  for (std::size_t i = 0; i < f.names.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    const double se_r = std::sqrt(f.cov_robust(k, k));
    coefs.push_back({{"name", f.names[i]},
                     {"estimate", f.coef(k)},
                     {"se_model", std::sqrt(f.cov_model(k, k))},
                     {"se_robust", se_r},
                     {"rate_ratio", std::exp(f.coef(k))},
                     {"ci95_low", std::exp(f.coef(k) - 1.96 * se_r)},
                     {"ci95_high", std::exp(f.coef(k) + 1.96 * se_r)},
                     {"p_robust", normal_two_sided_p(f.coef(k) / se_r)}});
  }
  json j{{"method", f.method},
         {"coefficients", coefs},
         {"cov_model", matrix_json(f.cov_model)},
         {"cov_robust", matrix_json(f.cov_robust)},
         {"covariance_estimator", "CR0 sandwich clustered by regulation"},
         {"deviance", f.deviance},
         {"pearson_chi2", f.pearson_chi2},
         {"dispersion", f.dispersion},
         {"df_resid", f.df_resid},
         {"iterations", f.iterations},
         {"converged", f.converged},
         {"n_clusters", f.n_clusters},
         {"warnings", f.warnings}};
  j["rho"] = f.rho ? json(*f.rho) : json(nullptr);
  return j;
}

}  // namespace dtreg::stats
