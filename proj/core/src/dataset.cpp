#include "parsrec/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "parsrec/linalg.hpp"

namespace parsrec {

using json = nlohmann::ordered_json;

std::vector<std::pair<int, int>> Dataset::user_session_ranges() const {
  std::vector<std::pair<int, int>> ranges(
      static_cast<std::size_t>(n_users()), {0, 0});
  int i = 0;
  const int n = static_cast<int>(sessions.size());
  while (i < n) {
    const int u = sessions[static_cast<std::size_t>(i)].user;
    int j = i;
    while (j < n && sessions[static_cast<std::size_t>(j)].user == u) ++j;
    ranges[static_cast<std::size_t>(u)] = {i, j};
    i = j;
  }
  return ranges;
}

namespace {

json plan_to_json(const GroupPlan& plan) {
  json blocks = json::array();
  for (const auto& b : plan.blocks) {
    blocks.push_back({{"members", b.members}, {"corr", b.corr}});
  }
  return blocks;
}

GroupPlan plan_from_json(const json& j) {
  GroupPlan plan;
  for (const auto& b : j) {
    CovBlock block;
    block.members = b.at("members").get<std::vector<int>>();
    block.corr = b.at("corr").get<std::vector<double>>();
    plan.blocks.push_back(std::move(block));
  }
  return plan;
}

json config_to_json(const SynthConfig& c) {
  json j;
  j["n_users"] = c.n_users;
  j["n_groups"] = c.n_groups;
  j["sessions_per_user"] = c.sessions_per_user;
  j["n_categories"] = c.n_categories;
  j["products_per_category"] = c.products_per_category;
  j["alpha"] = c.alpha;
  j["beta"] = c.beta;
  j["sigma"] = c.sigma;
  j["tau"] = c.tau;
  j["weibull_shape"] = c.weibull_shape;
  j["weibull_scale"] = c.weibull_scale;
  j["basket_min"] = c.basket_min;
  j["basket_max"] = c.basket_max;
  j["price_mu"] = c.price_mu;
  j["price_sigma"] = c.price_sigma;
  j["vine_beta_a"] = c.vine_beta_a;
  j["vine_beta_b"] = c.vine_beta_b;
  j["seed"] = c.seed;
  json plans = json::array();
  for (const auto& p : c.plans) plans.push_back(plan_to_json(p));
  j["plans"] = plans;
  return j;
}

SynthConfig config_from_json(const json& j) {
  SynthConfig c;
  c.n_users = j.at("n_users").get<int>();
  c.n_groups = j.at("n_groups").get<int>();
  c.sessions_per_user = j.at("sessions_per_user").get<int>();
  c.n_categories = j.at("n_categories").get<int>();
  c.products_per_category = j.at("products_per_category").get<int>();
  c.alpha = j.at("alpha").get<double>();
  c.beta = j.at("beta").get<double>();
  c.sigma = j.at("sigma").get<double>();
  c.tau = j.at("tau").get<double>();
  c.weibull_shape = j.at("weibull_shape").get<double>();
  c.weibull_scale = j.at("weibull_scale").get<double>();
  c.basket_min = j.at("basket_min").get<int>();
  c.basket_max = j.at("basket_max").get<int>();
  c.price_mu = j.at("price_mu").get<double>();
  c.price_sigma = j.at("price_sigma").get<double>();
  c.vine_beta_a = j.at("vine_beta_a").get<double>();
  c.vine_beta_b = j.at("vine_beta_b").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& p : j.at("plans")) c.plans.push_back(plan_from_json(p));
  return c;
}

}  // namespace

void write_dataset(const Dataset& ds, const std::string& path) {
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_dataset: cannot open " + path);
    std::string line;
    for (const auto& s : ds.sessions) {
      line.clear();
      line += "{\"user\":" + std::to_string(s.user) +
              ",\"t\":" + std::to_string(s.t) + ",\"items\":[";
      for (std::size_t i = 0; i < s.items.size(); ++i) {
        if (i) line += ',';
        line += std::to_string(s.items[i]);
      }
      line += "]}\n";
      out << line;
    }
  }
  json meta;
  meta["format_version"] = kDatasetFormatVersion;
  meta["config"] = config_to_json(ds.config);
  meta["item_category"] = ds.item_category;
  meta["user_group"] = ds.user_group;
  meta["group_sigma"] = ds.group_sigma;
  meta["prices"] = {{"category_base", ds.prices.category_base},
                    {"item_price", ds.prices.item_price}};
  std::ofstream out(path + ".meta", std::ios::binary);
  if (!out) throw std::runtime_error("write_dataset: cannot open " + path + ".meta");
  out << meta.dump(2) << "\n";
}

Dataset read_dataset(const std::string& path) {
  Dataset ds;
  {
    std::ifstream in(path + ".meta", std::ios::binary);
    if (!in) throw std::runtime_error("read_dataset: missing " + path + ".meta");
    json meta;
    try {
      in >> meta;
    } catch (const json::exception& e) {
      throw std::runtime_error(std::string("read_dataset: malformed meta: ") +
                               e.what());
    }
    const int version = meta.at("format_version").get<int>();
    if (version != kDatasetFormatVersion) {
      throw std::runtime_error("read_dataset: unsupported format version " +
                               std::to_string(version));
    }
    ds.config = config_from_json(meta.at("config"));
    ds.item_category = meta.at("item_category").get<std::vector<int>>();
    ds.user_group = meta.at("user_group").get<std::vector<int>>();
    ds.group_sigma =
        meta.at("group_sigma").get<std::vector<std::vector<double>>>();
    ds.prices.category_base =
        meta.at("prices").at("category_base").get<std::vector<double>>();
    ds.prices.item_price =
        meta.at("prices").at("item_price").get<std::vector<double>>();
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_dataset: missing " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error("read_dataset: malformed record at line " +
                               std::to_string(lineno) + ": " + e.what());
    }
    Session s;
    s.user = rec.at("user").get<int>();
    s.t = rec.at("t").get<int>();
    s.items = rec.at("items").get<std::vector<int>>();
    ds.sessions.push_back(std::move(s));
  }
  return ds;
}

void validate_dataset(const Dataset& ds) {
  const auto& cfg = ds.config;
  if (ds.n_items() != cfg.n_items()) {
    throw std::runtime_error("dataset: item_category size != C * |V^c|");
  }
  for (int v = 0; v < ds.n_items(); ++v) {
    if (ds.item_category[static_cast<std::size_t>(v)] !=
        v / cfg.products_per_category) {
      throw std::runtime_error("dataset: item->category map inconsistent");
    }
  }
  if (ds.n_users() != cfg.n_users) {
    throw std::runtime_error("dataset: user_group size != n_users");
  }
  for (const int g : ds.user_group) {
    if (g < 0 || g >= cfg.n_groups) {
      throw std::runtime_error("dataset: group id out of range");
    }
  }
  if (static_cast<int>(ds.group_sigma.size()) != cfg.n_groups) {
    throw std::runtime_error("dataset: one sigma per group required");
  }
  for (const auto& sigma : ds.group_sigma) {
    cholesky(sigma, cfg.n_categories);  // throws when not PD
  }
  int prev_user = -1, prev_t = 0;
  std::vector<char> seen_cat(static_cast<std::size_t>(cfg.n_categories), 0);
  for (const auto& s : ds.sessions) {
    if (s.user < 0 || s.user >= cfg.n_users) {
      throw std::runtime_error("dataset: session user out of range");
    }
    if (s.user < prev_user || (s.user == prev_user && s.t <= prev_t)) {
      throw std::runtime_error("dataset: sessions not ascending in (user, t)");
    }
    prev_user = s.user;
    prev_t = s.t;
    const int n = static_cast<int>(s.items.size());
    if (n < cfg.basket_min || n > cfg.basket_max) {
      throw std::runtime_error("dataset: basket size out of bounds");
    }
    std::fill(seen_cat.begin(), seen_cat.end(), 0);
    for (const int v : s.items) {
      if (v < 0 || v >= ds.n_items()) {
        throw std::runtime_error("dataset: item id out of range");
      }
      const int c = ds.item_category[static_cast<std::size_t>(v)];
      if (seen_cat[static_cast<std::size_t>(c)]) {
        throw std::runtime_error("dataset: duplicate category within a basket");
      }
      seen_cat[static_cast<std::size_t>(c)] = 1;
    }
  }
  for (int c = 0; c < cfg.n_categories; ++c) {
    const double base = ds.prices.category_base[static_cast<std::size_t>(c)];
    if (base <= 0.0) throw std::runtime_error("dataset: non-positive base price");
    for (int j = 0; j < cfg.products_per_category; ++j) {
      const double p = ds.prices.item_price[static_cast<std::size_t>(c) *
                                                cfg.products_per_category +
                                            j];
      if (p < base / 2.0 - 1e-12 || p > 2.0 * base + 1e-12) {
        throw std::runtime_error("dataset: item price outside [base/2, 2*base]");
      }
    }
  }
}

}  // namespace parsrec
