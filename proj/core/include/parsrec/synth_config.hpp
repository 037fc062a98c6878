// Configuration of the synthetic market-basket generator, including the
// per-group covariance block plans.

#pragma once

#include <cstdint>
#include <vector>

namespace parsrec {

// One block of related categories: `members` lists the category ids and
// `corr` holds the full symmetric block matrix (row-major, unit diagonal,
// off-diagonals in (-1, 1)).
struct CovBlock {
  std::vector<int> members;
  std::vector<double> corr;

  bool operator==(const CovBlock&) const = default;
};

struct GroupPlan {
  std::vector<CovBlock> blocks;

  bool operator==(const GroupPlan&) const = default;
};

struct SynthConfig {
  int n_users = 1024;
  int n_groups = 2;
  int sessions_per_user = 80;
  int n_categories = 20;
  int products_per_category = 100;

  double alpha = -0.5;        // category base utility
  double beta = 0.1;          // price sensitivity
  double sigma = 1.0;         // product choice noise std
  double tau = 2.0;           // product base-utility std

  double weibull_shape = 0.80;
  double weibull_scale = 1.47;
  int basket_min = 2;
  int basket_max = 10;

  double price_mu = 0.5;      // lognormal parameters of the category base price
  double price_sigma = 0.1;

  double vine_beta_a = 0.2;   // Beta parameters of the vine partial correlations
  double vine_beta_b = 1.0;

  std::uint64_t seed = 1;

  std::vector<GroupPlan> plans;  // one per group; empty selects the defaults

  int n_items() const { return n_categories * products_per_category; }

  bool operator==(const SynthConfig&) const = default;
};

// Shipped default plans: block sizes 2-3-4 over categories 0..8 with
// off-diagonal correlations from {+0.6, 0, -0.4}. Group A couples
// categories 0 and 1 at +0.6; group B leaves them independent.
std::vector<GroupPlan> default_plans(int n_groups);

}  // namespace parsrec
