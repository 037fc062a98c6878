#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

#include "parsrec/linalg.hpp"
#include "parsrec/synth.hpp"

using namespace parsrec;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

// Small config used by the statistical tests.
SynthConfig tiny_config() {
  SynthConfig cfg;
  cfg.n_users = 128;
  cfg.n_groups = 2;
  cfg.sessions_per_user = 40;
  cfg.n_categories = 10;
  cfg.products_per_category = 4;
  cfg.seed = 9;
  return cfg;
}

}  // namespace

TEST_CASE("build_group_sigma places one block and keeps unit diagonal") {
  GroupPlan plan;
  plan.blocks.push_back(CovBlock{{0, 1}, {1.0, 0.6, 0.6, 1.0}});
  const auto sigma = build_group_sigma(plan, 3);
  CHECK(sigma == std::vector<double>{1, 0.6, 0, 0.6, 1, 0, 0, 0, 1});
  const auto l = cholesky(sigma, 3);
  CHECK(l[0] == doctest::Approx(1.0));
  CHECK(l[3] == doctest::Approx(0.6));
  CHECK(l[4] == doctest::Approx(0.8));
}

TEST_CASE("build_group_sigma with no blocks is the identity") {
  const auto sigma = build_group_sigma(GroupPlan{}, 2);
  CHECK(sigma == std::vector<double>{1, 0, 0, 1});
}

TEST_CASE("build_group_sigma rejects bad plans") {
  GroupPlan overlap;
  overlap.blocks.push_back(CovBlock{{0, 1}, {1, 0, 0, 1}});
  overlap.blocks.push_back(CovBlock{{1, 2}, {1, 0, 0, 1}});
  CHECK_THROWS(build_group_sigma(overlap, 3));

  GroupPlan out_of_range;
  out_of_range.blocks.push_back(CovBlock{{0, 5}, {1, 0, 0, 1}});
  CHECK_THROWS(build_group_sigma(out_of_range, 3));

  GroupPlan non_pd;
  non_pd.blocks.push_back(CovBlock{{0, 1}, {1, 1.2, 1.2, 1}});
  CHECK_THROWS(build_group_sigma(non_pd, 2));
}

TEST_CASE("default plans differ between groups on the first block") {
  const auto plans = default_plans(2);
  REQUIRE(plans.size() == 2);
  CHECK(plans[0].blocks[0].corr[1] == doctest::Approx(0.6));
  CHECK(plans[1].blocks[0].corr[1] == doctest::Approx(0.0));
  for (const auto& p : plans) CHECK_NOTHROW(build_group_sigma(p, 20));
}

TEST_CASE("basket sizes stay in range and match the truncated ceil-Weibull mean") {
  SynthConfig cfg;
  // Independent oracle: pmf of ceil(Weibull(k, lambda)) truncated to [2, 10].
  const double k = cfg.weibull_shape, lambda = cfg.weibull_scale;
  auto cdf = [&](double x) { return 1.0 - std::exp(-std::pow(x / lambda, k)); };
  double z = 0.0, mean = 0.0;
  for (int n = cfg.basket_min; n <= cfg.basket_max; ++n) {
    const double p = cdf(n) - cdf(n - 1);
    z += p;
    mean += n * p;
  }
  mean /= z;

  Rng rng(17);
  double sum = 0.0;
  const int trials = 200000;
  for (int i = 0; i < trials; ++i) {
    const int n = sample_basket_size(cfg, rng);
    REQUIRE(n >= cfg.basket_min);
    REQUIRE(n <= cfg.basket_max);
    sum += n;
  }
  CHECK(sum / trials == doctest::Approx(mean).epsilon(0.01));
}

TEST_CASE("prices: items bracket the category base, base mean matches lognormal") {
  SynthConfig cfg;
  cfg.n_categories = 2000;
  cfg.products_per_category = 3;
  Rng rng(3);
  const auto prices = draw_prices(cfg, rng);
  REQUIRE(static_cast<int>(prices.category_base.size()) == cfg.n_categories);
  REQUIRE(static_cast<int>(prices.item_price.size()) == cfg.n_items());
  double base_sum = 0.0;
  for (int c = 0; c < cfg.n_categories; ++c) {
    const double base = prices.category_base[c];
    REQUIRE(base > 0.0);
    base_sum += base;
    for (int j = 0; j < cfg.products_per_category; ++j) {
      const double p = prices.item_price[c * cfg.products_per_category + j];
      REQUIRE(p >= base / 2.0);
      REQUIRE(p <= 2.0 * base);
    }
  }
  // E[LogNormal(0.5, 0.1)] = exp(0.5 + 0.01/2).
  CHECK(base_sum / cfg.n_categories ==
        doctest::Approx(std::exp(0.5 + 0.01 / 2)).epsilon(0.01));
}

TEST_CASE("user profile variance is tau^2 under an identity correlation") {
  SynthConfig cfg = tiny_config();
  cfg.products_per_category = 200;
  std::vector<double> eye(200 * 200, 0.0);
  for (int i = 0; i < 200; ++i) eye[i * 200 + i] = 1.0;
  std::vector<std::vector<double>> chol(cfg.n_categories, eye);

  Rng rng(21);
  double sq = 0.0, sum = 0.0;
  int count = 0;
  for (int u = 0; u < 20; ++u) {
    const auto profile = draw_user_profile(cfg, u, chol, rng);
    CHECK(profile.group == u % cfg.n_groups);
    for (const auto& omega : profile.omega) {
      for (const double v : omega) {
        sum += v;
        sq += v * v;
        ++count;
      }
    }
  }
  const double mean = sum / count;
  CHECK(std::abs(mean) < 0.05);
  CHECK(sq / count - mean * mean ==
        doctest::Approx(cfg.tau * cfg.tau).epsilon(0.05));
}

TEST_CASE("choose_categories ranks by utility with low-index tie break") {
  // Zero Cholesky factor makes eps identically zero.
  const std::vector<double> zero_chol(16, 0.0);
  Rng rng(1);
  const std::vector<double> alpha{0.1, 0.9, 0.5, 0.9};
  const auto top = choose_categories(alpha, zero_chol, 4, 3, rng);
  CHECK(top == std::vector<int>{1, 3, 2});

  Rng rng2(1);
  const std::vector<double> flat(4, -0.5);
  CHECK(choose_categories(flat, zero_chol, 4, 2, rng2) ==
        std::vector<int>{0, 1});

  Rng rng3(1);
  CHECK_THROWS(choose_categories(flat, zero_chol, 4, 5, rng3));
}

TEST_CASE("choose_product follows utility and price when noise is off") {
  SynthConfig cfg = tiny_config();
  cfg.sigma = 0.0;
  PriceTable prices;
  prices.category_base.assign(cfg.n_categories, 1.0);
  prices.item_price.assign(cfg.n_items(), 1.0);

  UserProfile profile;
  profile.omega.assign(cfg.n_categories,
                       std::vector<double>(cfg.products_per_category, 0.0));
  profile.omega[2][3] = 5.0;
  Rng rng(1);
  CHECK(choose_product(profile, 2, cfg, prices, rng) ==
        2 * cfg.products_per_category + 3);

  // Equal base utilities: a large price gap decides through -beta * price.
  cfg.beta = 10.0;
  prices.item_price[1 * cfg.products_per_category + 0] = 100.0;
  prices.item_price[1 * cfg.products_per_category + 2] = 0.5;
  Rng rng2(1);
  CHECK(choose_product(profile, 1, cfg, prices, rng2) ==
        1 * cfg.products_per_category + 2);
}

TEST_CASE("synthesize is deterministic in the seed") {
  const SynthConfig cfg = tiny_config();
  const Dataset a = synthesize(cfg);
  const Dataset b = synthesize(cfg);
  CHECK(a == b);

  SynthConfig other = cfg;
  other.seed = cfg.seed + 1;
  CHECK_FALSE(a == synthesize(other));
}

TEST_CASE("synthesized data passes the validator and basic shape checks") {
  const SynthConfig cfg = tiny_config();
  const Dataset ds = synthesize(cfg);
  CHECK_NOTHROW(validate_dataset(ds));
  CHECK(static_cast<int>(ds.sessions.size()) ==
        cfg.n_users * cfg.sessions_per_user);
  CHECK(ds.n_items() == cfg.n_items());
  const auto ranges = ds.user_session_ranges();
  REQUIRE(static_cast<int>(ranges.size()) == cfg.n_users);
  for (const auto& [b, e] : ranges) CHECK(e - b == cfg.sessions_per_user);
}

TEST_CASE("correlated categories co-occur more in the group that couples them") {
  // Group A couples categories 0 and 1 at +0.6; group B leaves them
  // independent. Compare the co-occurrence lift between the two groups.
  SynthConfig cfg = tiny_config();
  cfg.n_users = 256;
  const Dataset ds = synthesize(cfg);

  double lift[2];
  for (int g = 0; g < 2; ++g) {
    int total = 0, has0 = 0, has1 = 0, both = 0;
    for (const auto& s : ds.sessions) {
      if (ds.user_group[s.user] != g) continue;
      ++total;
      bool c0 = false, c1 = false;
      for (const int item : s.items) {
        const int c = ds.item_category[item];
        if (c == 0) c0 = true;
        if (c == 1) c1 = true;
      }
      has0 += c0;
      has1 += c1;
      both += c0 && c1;
    }
    REQUIRE(total > 0);
    const double p0 = static_cast<double>(has0) / total;
    const double p1 = static_cast<double>(has1) / total;
    lift[g] = (static_cast<double>(both) / total) / (p0 * p1);
  }
  CHECK(lift[0] > 1.2);
  CHECK(lift[0] > lift[1] + 0.15);
  CHECK(lift[1] == doctest::Approx(1.0).epsilon(0.15));
}

TEST_CASE("dataset IO round trip and byte determinism") {
  SynthConfig cfg = tiny_config();
  cfg.n_users = 16;
  cfg.sessions_per_user = 5;
  const Dataset ds = synthesize(cfg);

  const std::string p1 = "synth_io_a.jsonl";
  const std::string p2 = "synth_io_b.jsonl";
  write_dataset(ds, p1);
  write_dataset(ds, p2);
  CHECK(slurp(p1) == slurp(p2));
  CHECK(slurp(p1 + ".meta") == slurp(p2 + ".meta"));

  const Dataset back = read_dataset(p1);
  CHECK(back == ds);

  std::remove(p1.c_str());
  std::remove((p1 + ".meta").c_str());
  std::remove(p2.c_str());
  std::remove((p2 + ".meta").c_str());
}

TEST_CASE("validator flags corrupt datasets") {
  SynthConfig cfg = tiny_config();
  cfg.n_users = 8;
  cfg.sessions_per_user = 3;
  Dataset ds = synthesize(cfg);

  Dataset dup = ds;
  // Two items from the same category in one basket.
  dup.sessions[0].items = {0, 1};
  CHECK_THROWS(validate_dataset(dup));

  Dataset bad_order = ds;
  std::swap(bad_order.sessions[0], bad_order.sessions[1]);
  CHECK_THROWS(validate_dataset(bad_order));

  Dataset bad_group = ds;
  bad_group.user_group[0] = 99;
  CHECK_THROWS(validate_dataset(bad_group));

  Dataset tiny_basket = ds;
  tiny_basket.sessions[0].items = {0};
  CHECK_THROWS(validate_dataset(tiny_basket));
}
