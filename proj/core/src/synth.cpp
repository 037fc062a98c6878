#include "parsrec/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "parsrec/linalg.hpp"

namespace parsrec {

namespace {

CovBlock make_block(std::vector<int> members,
                    std::vector<std::pair<std::pair<int, int>, double>> offdiag) {
  const int n = static_cast<int>(members.size());
  std::vector<double> corr(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) corr[static_cast<std::size_t>(i) * n + i] = 1.0;
  for (const auto& [ij, v] : offdiag) {
    corr[static_cast<std::size_t>(ij.first) * n + ij.second] = v;
    corr[static_cast<std::size_t>(ij.second) * n + ij.first] = v;
  }
  return CovBlock{std::move(members), std::move(corr)};
}

}  // namespace

std::vector<GroupPlan> default_plans(int n_groups) {
  // Block sizes 2-3-4 over a prefix of categories; values from the
  // {+0.6, 0, -0.4} palette. Categories 0/1 are coupled only in group A,
  // which is what the spillover experiment leans on (C0=0, C2=1, C1=9).
  GroupPlan a;
  a.blocks.push_back(make_block({0, 1}, {{{0, 1}, 0.6}}));
  a.blocks.push_back(make_block({2, 3, 4}, {{{0, 1}, 0.6}, {{1, 2}, -0.4}}));
  a.blocks.push_back(make_block({5, 6, 7, 8}, {{{0, 1}, 0.6}, {{2, 3}, -0.4}}));
  GroupPlan b;
  b.blocks.push_back(make_block({0, 1}, {{{0, 1}, 0.0}}));
  b.blocks.push_back(make_block({2, 3, 4}, {{{0, 2}, 0.6}, {{0, 1}, -0.4}}));
  b.blocks.push_back(make_block({5, 6, 7, 8}, {{{0, 1}, -0.4}, {{2, 3}, 0.6}}));

  std::vector<GroupPlan> plans;
  for (int g = 0; g < n_groups; ++g) plans.push_back(g % 2 == 0 ? a : b);
  return plans;
}

std::vector<double> build_group_sigma(const GroupPlan& plan, int n_categories) {
  std::vector<double> sigma(
      static_cast<std::size_t>(n_categories) * n_categories, 0.0);
  for (int i = 0; i < n_categories; ++i) {
    sigma[static_cast<std::size_t>(i) * n_categories + i] = 1.0;
  }
  std::vector<bool> used(static_cast<std::size_t>(n_categories), false);
  for (const auto& block : plan.blocks) {
    const int n = static_cast<int>(block.members.size());
    if (block.corr.size() != static_cast<std::size_t>(n) * n) {
      throw std::invalid_argument("build_group_sigma: block matrix size mismatch");
    }
    for (int i = 0; i < n; ++i) {
      const int ci = block.members[static_cast<std::size_t>(i)];
      if (ci < 0 || ci >= n_categories) {
        throw std::invalid_argument("build_group_sigma: category out of range");
      }
      if (used[static_cast<std::size_t>(ci)]) {
        throw std::invalid_argument("build_group_sigma: blocks overlap");
      }
      used[static_cast<std::size_t>(ci)] = true;
      for (int j = 0; j < n; ++j) {
        const int cj = block.members[static_cast<std::size_t>(j)];
        sigma[static_cast<std::size_t>(ci) * n_categories + cj] =
            block.corr[static_cast<std::size_t>(i) * n + j];
      }
    }
  }
  cholesky(sigma, n_categories);  // reject non-PD plans
  return sigma;
}

int sample_basket_size(const SynthConfig& cfg, Rng& rng) {
  for (;;) {
    const double w = rng.weibull(cfg.weibull_shape, cfg.weibull_scale);
    const int n = static_cast<int>(std::ceil(w));
    if (n >= cfg.basket_min && n <= cfg.basket_max) return n;
  }
}

PriceTable draw_prices(const SynthConfig& cfg, Rng& rng) {
  PriceTable table;
  table.category_base.resize(static_cast<std::size_t>(cfg.n_categories));
  table.item_price.resize(static_cast<std::size_t>(cfg.n_items()));
  for (int c = 0; c < cfg.n_categories; ++c) {
    const double base = rng.lognormal(cfg.price_mu, cfg.price_sigma);
    table.category_base[static_cast<std::size_t>(c)] = base;
    for (int j = 0; j < cfg.products_per_category; ++j) {
      table.item_price[static_cast<std::size_t>(c) * cfg.products_per_category + j] =
          rng.uniform(base / 2.0, 2.0 * base);
    }
  }
  return table;
}

UserProfile draw_user_profile(
    const SynthConfig& cfg, int user,
    const std::vector<std::vector<double>>& omega0_chol, Rng& rng) {
  UserProfile profile;
  profile.user = user;
  profile.group = user % cfg.n_groups;
  profile.omega.resize(static_cast<std::size_t>(cfg.n_categories));
  for (int c = 0; c < cfg.n_categories; ++c) {
    auto omega = sample_mvn(omega0_chol[static_cast<std::size_t>(c)],
                            cfg.products_per_category, rng);
    for (double& v : omega) v *= cfg.tau;
    profile.omega[static_cast<std::size_t>(c)] = std::move(omega);
  }
  return profile;
}

std::vector<int> choose_categories(const std::vector<double>& alpha,
                                   const std::vector<double>& sigma_chol,
                                   int n_categories, int n, Rng& rng) {
  if (n > n_categories) {
    throw std::invalid_argument("choose_categories: n exceeds category count");
  }
  const auto eps = sample_mvn(sigma_chol, n_categories, rng);
  std::vector<int> order(static_cast<std::size_t>(n_categories));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int i, int j) {
    const double pi = alpha[static_cast<std::size_t>(i)] + eps[static_cast<std::size_t>(i)];
    const double pj = alpha[static_cast<std::size_t>(j)] + eps[static_cast<std::size_t>(j)];
    if (pi != pj) return pi > pj;
    return i < j;  // exact ties break toward the lower category index
  });
  order.resize(static_cast<std::size_t>(n));
  return order;
}

int choose_product(const UserProfile& profile, int category,
                   const SynthConfig& cfg, const PriceTable& prices, Rng& rng) {
  const auto& omega = profile.omega[static_cast<std::size_t>(category)];
  int best = 0;
  double best_eta = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < cfg.products_per_category; ++j) {
    const std::size_t item =
        static_cast<std::size_t>(category) * cfg.products_per_category + j;
    const double eta = omega[static_cast<std::size_t>(j)] -
                       cfg.beta * prices.item_price[item] +
                       cfg.sigma * rng.normal();
    if (eta > best_eta) {  // strict: the lower index wins exact ties
      best_eta = eta;
      best = j;
    }
  }
  return category * cfg.products_per_category + best;
}

Dataset synthesize(const SynthConfig& cfg_in) {
  SynthConfig cfg = cfg_in;
  if (cfg.n_users <= 0 || cfg.n_groups <= 0 || cfg.n_categories <= 0 ||
      cfg.products_per_category <= 0) {
    throw std::invalid_argument("synthesize: non-positive dimension");
  }
  if (cfg.n_users % cfg.n_groups != 0) {
    throw std::invalid_argument("synthesize: n_groups must divide n_users");
  }
  if (cfg.plans.empty()) cfg.plans = default_plans(cfg.n_groups);
  if (static_cast<int>(cfg.plans.size()) != cfg.n_groups) {
    throw std::invalid_argument("synthesize: one plan per group required");
  }

  Dataset ds;
  ds.config = cfg;

  ds.item_category.resize(static_cast<std::size_t>(cfg.n_items()));
  for (int v = 0; v < cfg.n_items(); ++v) {
    ds.item_category[static_cast<std::size_t>(v)] = v / cfg.products_per_category;
  }

  for (int g = 0; g < cfg.n_groups; ++g) {
    ds.group_sigma.push_back(
        build_group_sigma(cfg.plans[static_cast<std::size_t>(g)], cfg.n_categories));
  }
  std::vector<std::vector<double>> group_chol;
  for (const auto& sigma : ds.group_sigma) {
    group_chol.push_back(cholesky(sigma, cfg.n_categories));
  }

  {
    Rng price_rng = Rng::stream(cfg.seed, StreamPurpose::kSynthPrices);
    ds.prices = draw_prices(cfg, price_rng);
  }

  // Shared within-category correlation, one vine draw per category.
  std::vector<std::vector<double>> omega0_chol;
  for (int c = 0; c < cfg.n_categories; ++c) {
    Rng vine_rng = Rng::stream(cfg.seed, StreamPurpose::kSynthVine,
                               static_cast<std::uint64_t>(c));
    auto corr = vine_correlation(cfg.products_per_category, cfg.vine_beta_a,
                                 cfg.vine_beta_b, vine_rng);
    // Guard against marginal PSD from the vine composition.
    for (int i = 0; i < cfg.products_per_category; ++i) {
      corr[static_cast<std::size_t>(i) * cfg.products_per_category + i] += 1e-9;
    }
    omega0_chol.push_back(cholesky(corr, cfg.products_per_category));
  }

  const std::vector<double> alpha(static_cast<std::size_t>(cfg.n_categories),
                                  cfg.alpha);
  ds.user_group.resize(static_cast<std::size_t>(cfg.n_users));

  for (int u = 0; u < cfg.n_users; ++u) {
    Rng rng = Rng::stream(cfg.seed, StreamPurpose::kSynthUser,
                          static_cast<std::uint64_t>(u));
    const UserProfile profile = draw_user_profile(cfg, u, omega0_chol, rng);
    ds.user_group[static_cast<std::size_t>(u)] = profile.group;
    const auto& chol = group_chol[static_cast<std::size_t>(profile.group)];
    for (int t = 1; t <= cfg.sessions_per_user; ++t) {
      const int n = sample_basket_size(cfg, rng);
      const auto categories =
          choose_categories(alpha, chol, cfg.n_categories, n, rng);
      Session s;
      s.user = u;
      s.t = t;
      s.items.reserve(categories.size());
      for (const int c : categories) {
        s.items.push_back(choose_product(profile, c, cfg, ds.prices, rng));
      }
      ds.sessions.push_back(std::move(s));
    }
  }
  return ds;
}

}  // namespace parsrec
