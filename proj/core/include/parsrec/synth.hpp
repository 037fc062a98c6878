// Synthetic market-basket generator: block-diagonal category covariance per
// user group, vine-method within-category correlations, Weibull basket
// sizes, lognormal/uniform prices, and probit product choice.

#pragma once

#include <vector>

#include "parsrec/dataset.hpp"
#include "parsrec/rng.hpp"
#include "parsrec/synth_config.hpp"

namespace parsrec {

// Assembles the C x C block-diagonal covariance for one group plan and
// verifies positive definiteness (throws when Cholesky fails).
std::vector<double> build_group_sigma(const GroupPlan& plan, int n_categories);

// Basket size: ceil of a Weibull draw, redrawn until it lands in
// [basket_min, basket_max].
int sample_basket_size(const SynthConfig& cfg, Rng& rng);

PriceTable draw_prices(const SynthConfig& cfg, Rng& rng);

// Per-user product base utilities, one vector per category.
struct UserProfile {
  int user = 0;
  int group = 0;
  std::vector<std::vector<double>> omega;  // [category][product]
};

// omega0_chol holds, per category, the Cholesky factor of the shared
// within-category correlation matrix; draws are scaled by tau.
UserProfile draw_user_profile(const SynthConfig& cfg, int user,
                              const std::vector<std::vector<double>>& omega0_chol,
                              Rng& rng);

// Top-n categories by alpha + eps with eps ~ N(0, Sigma); ties break toward
// the lower category index. Returned in descending-utility feed order.
std::vector<int> choose_categories(const std::vector<double>& alpha,
                                   const std::vector<double>& sigma_chol,
                                   int n_categories, int n, Rng& rng);

// Probit product choice within a category; returns the item id.
int choose_product(const UserProfile& profile, int category,
                   const SynthConfig& cfg, const PriceTable& prices, Rng& rng);

// Full generation pass; deterministic per (config.seed, config).
Dataset synthesize(const SynthConfig& cfg);

}  // namespace parsrec
