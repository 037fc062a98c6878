// Interpretability experiments: attention extraction and category-level
// aggregation, group heatmaps, embedding self-similarity, and the
// category-removal spillover study.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "parsrec/dataset.hpp"
#include "parsrec/eval.hpp"
#include "parsrec/model.hpp"

namespace parsrec {

// Accumulated head-averaged attention per user, keyed by
// (target item, key item); SOB never accumulates.
struct AttentionAtlas {
  struct UserAtlas {
    std::map<std::pair<int, int>, double> weights;  // (target, key) -> mass
    std::int64_t steps = 0;
  };
  std::map<int, UserAtlas> users;
  int n_items = 0;
};

// Deterministic post-training pass: teacher-forced forward (eval mode) over
// every training session, feeding the actual basket items in stored order.
// At each step the head-averaged weight of every non-SOB prefix key is added
// to A_u[target of the step, key].
AttentionAtlas collect_attention(const ParsRecModel<float>& model,
                                 const Dataset& ds, const SplitSpec& splits);

// Three-stage category aggregation of one user's atlas: row sums within each
// target category, column averages within each key category, then row
// normalization (all-zero rows stay zero). Returns a C x C row-major matrix.
std::vector<double> aggregate_to_categories(const AttentionAtlas& atlas,
                                            int user,
                                            const std::vector<int>& item_category,
                                            int n_categories);

// Arithmetic mean of the per-user heatmaps within each group.
std::vector<std::vector<double>> group_heatmaps(const AttentionAtlas& atlas,
                                                const Dataset& ds);

std::vector<double> heatmap_difference(const std::vector<double>& a,
                                       const std::vector<double>& b);

// E^V (E^V)^T over real items only; symmetric, row-major n_items x n_items.
std::vector<float> embedding_similarity(const ParsRecModel<float>& model);

struct SpilloverCell {
  double predicted = 0.0;
  double actual = 0.0;
  double mape = 0.0;   // meaningful only when defined
  bool defined = false;
};

struct SpilloverReport {
  int removed_category = -1;
  int k = 10;
  std::vector<std::vector<SpilloverCell>> cells;  // [group][category]

  // "group,category,predicted,actual,mape" rows; undefined MAPE prints nan.
  std::string to_csv() const;
};

// Category-removal study: test baskets containing `removed_category` items
// are dropped, its items are masked out of the assortment, and per step the
// top-k share of each category estimates its unit sales. Pass -1 to keep
// everything (the no-removal reference run).
SpilloverReport spillover_experiment(const ParsRecModel<float>& model,
                                     const Dataset& ds, const SplitSpec& splits,
                                     int removed_category, int k = 10);

// Writes `path.csv` (labeled, unthresholded) and `path.pgm` (plain P2
// grayscale scaled to the matrix maximum; entries below `threshold` are
// blanked in the image only).
void export_heatmap(const std::vector<double>& matrix, int rows, int cols,
                    const std::vector<std::string>& row_labels,
                    const std::vector<std::string>& col_labels,
                    double threshold, const std::string& path_base);

}  // namespace parsrec
