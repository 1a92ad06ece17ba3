#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dtreg/stats/glm.hpp"
#include "dtreg/stats/panel.hpp"

namespace dtreg::testing {

// ---- parser contracts ------------------------------------------------------

struct FuzzTally {
  int accepted = 0;
  int rejected = 0;         // ContractViolation, or a verdict downgraded to the default
  int coerced = 0;          // accepted, but the result is not the literal reply content
  int wrong_exception = 0;  // anything other than ContractViolation escaped
  int total() const noexcept { return accepted + rejected + coerced + wrong_exception; }
};

const std::vector<std::string>& fuzzed_contracts();

// Feeds `mutations` randomized replies to the parser for `contract`.
FuzzTally fuzz_contract(const std::string& contract, int mutations, std::uint64_t seed);

// ---- statistics ------------------------------------------------------------

// Poisson likelihood maximized by damped Newton steps, independent of IRLS.
Eigen::VectorXd direct_mle(const stats::Design& d);

// Four-regulation ITS panel over 2000-2024 with random effects sizes.
std::vector<stats::PanelCell> synthetic_cells(std::uint64_t seed, bool integer_counts = true);

// Clustered Poisson counts with an AR(1) latent log-rate (b0 = -1, b1 = 0.3).
stats::Design ar1_design(std::uint64_t seed, int clusters = 60, int periods = 12, double rho = 0.6);

struct BruteBh {
  std::vector<bool> significant;
  std::vector<double> adjusted;
};

// Benjamini-Hochberg straight from the definition, O(m^2).
BruteBh brute_force_bh(const std::vector<double>& p, double alpha);

}  // namespace dtreg::testing
