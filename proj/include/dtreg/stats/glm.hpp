#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace dtreg::stats {

using nlohmann::json;

// Poisson design with log link and an additive offset on the linear predictor.
struct Design {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
  Eigen::VectorXd offset;
  std::vector<std::string> columns;
  std::vector<int> cluster;  // cluster index per row
  std::vector<std::string> cluster_names;
  std::vector<int> time;     // ordering / lag distance within cluster (GEE)
};

struct FitOptions {
  double deviance_tol = 1e-10;  // relative deviance change
  double coef_tol = 1e-10;      // max |delta beta| / (1 + |beta|)
  int max_iter = 100;
};

enum class WorkingCorrelation { Independence, Ar1 };

struct FitResult {
  std::vector<std::string> names;
  Eigen::VectorXd coef;
  Eigen::MatrixXd cov_model;   // inverse Fisher information (phi = 1); GEE: phi * bread
  Eigen::MatrixXd cov_robust;  // CR0 sandwich clustered on Design::cluster
  double deviance = 0.0;
  double pearson_chi2 = 0.0;
  double dispersion = 0.0;     // pearson_chi2 / df_resid
  int df_resid = 0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> trace;   // deviance (GLM) or max step (GEE) per iteration
  std::string method;          // "glm-irls" | "gee-independence" | "gee-ar1"
  std::optional<double> rho;   // AR(1) parameter
  std::vector<std::string> warnings;
  std::size_t n_clusters = 0;

  std::size_t index(const std::string& name) const;
  double robust_se(const std::string& name) const;
  double model_se(const std::string& name) const;
};

json to_json(const FitResult& f);

double poisson_deviance(const Eigen::VectorXd& y, const Eigen::VectorXd& mu);

// Maximum likelihood via iteratively reweighted least squares. Non-integer
// outcomes are accepted (quasi-Poisson estimating equations).
FitResult fit_poisson_glm(const Design& d, const FitOptions& opt = {});

struct GeeOptions {
  WorkingCorrelation correlation = WorkingCorrelation::Ar1;
  double coef_tol = 1e-10;
  int max_iter = 100;
  double rho_bound = 0.99;  // |rho| is clamped below this
  bool warm_start = true;   // start from the GLM estimates
};

// Population-average Poisson GEE (Liang-Zeger) with AR(1)
// working correlation rho^|t_j - t_k| within clusters.
FitResult fit_poisson_gee(const Design& d, const GeeOptions& opt = {});

// Column names that make the design rank deficient (empty when full rank).
std::vector<std::string> collinear_columns(const Eigen::MatrixXd& x, const std::vector<std::string>& names);

double normal_two_sided_p(double z);

struct Effect {
  std::string name;
  double estimate = 0.0;  // log scale
  double se = 0.0;        // robust
  double rr = 1.0;
  double ci_low = 1.0;
  double ci_high = 1.0;
  double p = 1.0;
};

// Level change exp(b2), pre-slope exp(b1), post-slope exp(b1+b3), slope change
// exp(b3), five-year post-slope implication exp(5(b1+b3)); robust SEs.
std::vector<Effect> derived_effects(const FitResult& fit, const std::string& rel = "rel",
                                    const std::string& post = "post", const std::string& rel_post = "rel_x_post");

Effect linear_effect(const FitResult& fit, const std::string& name,
                     const std::vector<std::pair<std::string, double>>& weights);

json to_json(const Effect& e);

}  // namespace dtreg::stats
