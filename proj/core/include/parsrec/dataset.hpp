// In-memory market-basket dataset plus its on-disk format: a line-delimited
// session file and a JSON sidecar carrying the synthesis ground truth
// (item->category map, user->group map, per-group covariance, prices, and a
// config echo).

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "parsrec/synth_config.hpp"

namespace parsrec {

struct Session {
  int user = 0;
  int t = 0;                  // strictly increasing per user
  std::vector<int> items;     // at most one item per category, feed order kept

  bool operator==(const Session&) const = default;
};

struct PriceTable {
  std::vector<double> category_base;  // nu^c per category
  std::vector<double> item_price;     // nu^c_j per item

  bool operator==(const PriceTable&) const = default;
};

struct Dataset {
  SynthConfig config;                            // echo of the generator input
  std::vector<Session> sessions;                 // ascending (user, t)
  std::vector<int> item_category;                // size n_items
  std::vector<int> user_group;                   // size n_users
  std::vector<std::vector<double>> group_sigma;  // per group, row-major C x C
  PriceTable prices;

  int n_items() const { return static_cast<int>(item_category.size()); }
  int n_users() const { return static_cast<int>(user_group.size()); }
  int n_categories() const { return config.n_categories; }

  // [begin, end) index range into `sessions` per user.
  std::vector<std::pair<int, int>> user_session_ranges() const;

  bool operator==(const Dataset&) const = default;
};

inline constexpr int kDatasetFormatVersion = 1;

// Writes `path` (one JSON session record per line) and `path + ".meta"`.
void write_dataset(const Dataset& ds, const std::string& path);
Dataset read_dataset(const std::string& path);

// Throws std::runtime_error naming the first violated invariant.
void validate_dataset(const Dataset& ds);

}  // namespace parsrec
