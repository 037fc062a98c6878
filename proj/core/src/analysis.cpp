#include "parsrec/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace parsrec {

AttentionAtlas collect_attention(const ParsRecModel<float>& model,
                                 const Dataset& ds, const SplitSpec& splits) {
  AttentionAtlas atlas;
  atlas.n_items = model.cfg.n_items;
  const int sob = model.cfg.sob();
  for (const auto& e : splits.entries) {
    auto& ua = atlas.users[e.user];
    std::vector<int> history;
    for (const int s : e.train) {
      const auto& items = ds.sessions[static_cast<std::size_t>(s)].items;
      Rng unused(0);
      const auto h = history_state<float>(nullptr, model, history);
      const auto fwd = forward_session<float>(nullptr, model, e.user, h,
                                              items, false, unused);
      for (std::size_t j = 0; j < items.size(); ++j) {
        const int target = items[j];
        const auto& prefix = fwd.prefixes[j];
        const auto& rec = fwd.attention[j];
        const auto n_heads = static_cast<double>(rec.head_rows.size());
        for (std::size_t p = 0; p < prefix.size(); ++p) {
          const int key = prefix[p];
          if (key == sob) continue;  // padding/start tokens never accumulate
          if (key >= model.cfg.n_items) continue;
          double w = 0.0;
          for (const auto& row : rec.head_rows) {
            w += static_cast<double>(row[p]);
          }
          ua.weights[{target, key}] += w / n_heads;
        }
        ++ua.steps;
      }
      history.insert(history.end(), items.begin(), items.end());
    }
  }
  return atlas;
}

std::vector<double> aggregate_to_categories(const AttentionAtlas& atlas,
                                            int user,
                                            const std::vector<int>& item_category,
                                            int n_categories) {
  const int n_items = static_cast<int>(item_category.size());
  std::vector<int> cat_size(static_cast<std::size_t>(n_categories), 0);
  for (const int c : item_category) ++cat_size[static_cast<std::size_t>(c)];

  // Stage 1: sum rows within each target category.
  std::vector<double> stage1(
      static_cast<std::size_t>(n_categories) * n_items, 0.0);
  const auto it = atlas.users.find(user);
  if (it != atlas.users.end()) {
    for (const auto& [tk, w] : it->second.weights) {
      const int tc = item_category[static_cast<std::size_t>(tk.first)];
      stage1[static_cast<std::size_t>(tc) * n_items + tk.second] += w;
    }
  }

  // Stage 2: average columns within each key category.
  std::vector<double> heat(
      static_cast<std::size_t>(n_categories) * n_categories, 0.0);
  for (int tc = 0; tc < n_categories; ++tc) {
    for (int v = 0; v < n_items; ++v) {
      const int kc = item_category[static_cast<std::size_t>(v)];
      heat[static_cast<std::size_t>(tc) * n_categories + kc] +=
          stage1[static_cast<std::size_t>(tc) * n_items + v];
    }
    for (int kc = 0; kc < n_categories; ++kc) {
      if (cat_size[static_cast<std::size_t>(kc)] > 0) {
        heat[static_cast<std::size_t>(tc) * n_categories + kc] /=
            cat_size[static_cast<std::size_t>(kc)];
      }
    }
  }

  // Stage 3: row normalization.
  for (int tc = 0; tc < n_categories; ++tc) {
    double sum = 0.0;
    for (int kc = 0; kc < n_categories; ++kc) {
      sum += heat[static_cast<std::size_t>(tc) * n_categories + kc];
    }
    if (sum > 0.0) {
      for (int kc = 0; kc < n_categories; ++kc) {
        heat[static_cast<std::size_t>(tc) * n_categories + kc] /= sum;
      }
    }
  }
  return heat;
}

std::vector<std::vector<double>> group_heatmaps(const AttentionAtlas& atlas,
                                                const Dataset& ds) {
  const int c = ds.n_categories();
  const int n_groups = ds.config.n_groups;
  std::vector<std::vector<double>> out(
      static_cast<std::size_t>(n_groups),
      std::vector<double>(static_cast<std::size_t>(c) * c, 0.0));
  std::vector<int> members(static_cast<std::size_t>(n_groups), 0);
  for (const auto& [user, ua] : atlas.users) {
    const int g = ds.user_group[static_cast<std::size_t>(user)];
    const auto heat =
        aggregate_to_categories(atlas, user, ds.item_category, c);
    auto& acc = out[static_cast<std::size_t>(g)];
    for (std::size_t i = 0; i < heat.size(); ++i) acc[i] += heat[i];
    ++members[static_cast<std::size_t>(g)];
  }
  for (int g = 0; g < n_groups; ++g) {
    if (members[static_cast<std::size_t>(g)] == 0) {
      throw std::runtime_error("group_heatmaps: empty group " +
                               std::to_string(g));
    }
    for (auto& v : out[static_cast<std::size_t>(g)]) {
      v /= members[static_cast<std::size_t>(g)];
    }
  }
  return out;
}

std::vector<double> heatmap_difference(const std::vector<double>& a,
                                       const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("heatmap_difference: size mismatch");
  }
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  return d;
}

std::vector<float> embedding_similarity(const ParsRecModel<float>& model) {
  const int n = model.cfg.n_items;
  const int d = model.cfg.d_v;
  const auto& e = model.item_emb->data;
  std::vector<float> sim(static_cast<std::size_t>(n) * n, 0.0f);
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      float s = 0.0f;
      for (int k = 0; k < d; ++k) {
        s += e[static_cast<std::size_t>(i) * d + k] *
             e[static_cast<std::size_t>(j) * d + k];
      }
      sim[static_cast<std::size_t>(i) * n + j] = s;
      sim[static_cast<std::size_t>(j) * n + i] = s;
    }
  }
  return sim;
}

SpilloverReport spillover_experiment(const ParsRecModel<float>& model,
                                     const Dataset& ds, const SplitSpec& splits,
                                     int removed_category, int k) {
  if (k < 1) throw std::invalid_argument("spillover_experiment: k < 1");
  const int c = ds.n_categories();
  if (removed_category >= c) {
    throw std::invalid_argument("spillover_experiment: bad category");
  }
  const int n_groups = ds.config.n_groups;

  // Assortment: every real item outside the removed category.
  std::vector<int> assortment;
  for (int v = 0; v < ds.n_items(); ++v) {
    if (removed_category < 0 ||
        ds.item_category[static_cast<std::size_t>(v)] != removed_category) {
      assortment.push_back(v);
    }
  }

  SpilloverReport rep;
  rep.removed_category = removed_category;
  rep.k = k;
  rep.cells.assign(static_cast<std::size_t>(n_groups),
                   std::vector<SpilloverCell>(static_cast<std::size_t>(c)));

  ModelScorer scorer(model);
  std::vector<int> order(assortment.size());
  for (const auto& e : splits.entries) {
    const auto& basket =
        ds.sessions[static_cast<std::size_t>(e.test)].items;
    if (removed_category >= 0 &&
        std::any_of(basket.begin(), basket.end(), [&](int v) {
          return ds.item_category[static_cast<std::size_t>(v)] ==
                 removed_category;
        })) {
      continue;  // baskets touching the removed category are dropped
    }
    const int g = ds.user_group[static_cast<std::size_t>(e.user)];
    auto& row = rep.cells[static_cast<std::size_t>(g)];
    const auto history = split_history(ds, e, Split::kTest);
    scorer.begin_session(e.user, history, basket);
    for (const int item : basket) {
      const auto& logits = scorer.step_logits();
      std::iota(order.begin(), order.end(), 0);
      std::partial_sort(
          order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
            const float sa = logits[static_cast<std::size_t>(
                assortment[static_cast<std::size_t>(a)])];
            const float sb = logits[static_cast<std::size_t>(
                assortment[static_cast<std::size_t>(b)])];
            if (sa != sb) return sa > sb;
            return assortment[static_cast<std::size_t>(a)] <
                   assortment[static_cast<std::size_t>(b)];
          });
      for (int r = 0; r < k; ++r) {
        const int v = assortment[static_cast<std::size_t>(order[r])];
        row[static_cast<std::size_t>(
               ds.item_category[static_cast<std::size_t>(v)])]
            .predicted += 1.0 / k;
      }
      row[static_cast<std::size_t>(
             ds.item_category[static_cast<std::size_t>(item)])]
          .actual += 1.0;
      scorer.feed(item);  // teacher forcing with the actual basket order
    }
  }

  for (auto& group : rep.cells) {
    for (auto& cell : group) {
      if (cell.actual > 0.0) {
        cell.defined = true;
        cell.mape = std::abs(cell.predicted - cell.actual) / cell.actual;
      }
    }
  }
  return rep;
}

std::string SpilloverReport::to_csv() const {
  std::string out = "group,category,predicted,actual,mape\n";
  for (std::size_t g = 0; g < cells.size(); ++g) {
    for (std::size_t c = 0; c < cells[g].size(); ++c) {
      const auto& cell = cells[g][c];
      char buf[160];
      if (cell.defined) {
        std::snprintf(buf, sizeof(buf), "%zu,%zu,%.6f,%.6f,%.6f\n", g, c,
                      cell.predicted, cell.actual, cell.mape);
      } else {
        std::snprintf(buf, sizeof(buf), "%zu,%zu,%.6f,%.6f,nan\n", g, c,
                      cell.predicted, cell.actual);
      }
      out += buf;
    }
  }
  return out;
}

void export_heatmap(const std::vector<double>& matrix, int rows, int cols,
                    const std::vector<std::string>& row_labels,
                    const std::vector<std::string>& col_labels,
                    double threshold, const std::string& path_base) {
  if (matrix.size() != static_cast<std::size_t>(rows) * cols ||
      row_labels.size() != static_cast<std::size_t>(rows) ||
      col_labels.size() != static_cast<std::size_t>(cols)) {
    throw std::invalid_argument("export_heatmap: shape mismatch");
  }

  std::ofstream csv(path_base + ".csv", std::ios::binary);
  if (!csv) throw std::runtime_error("export_heatmap: cannot write csv");
  csv << "row";
  for (const auto& l : col_labels) csv << "," << l;
  csv << "\n";
  for (int i = 0; i < rows; ++i) {
    csv << row_labels[static_cast<std::size_t>(i)];
    for (int j = 0; j < cols; ++j) {
      char buf[48];
      std::snprintf(buf, sizeof(buf), ",%.6f",
                    matrix[static_cast<std::size_t>(i) * cols + j]);
      csv << buf;
    }
    csv << "\n";
  }

  double mx = 0.0;
  for (const double v : matrix) mx = std::max(mx, std::abs(v));
  std::ofstream pgm(path_base + ".pgm", std::ios::binary);
  if (!pgm) throw std::runtime_error("export_heatmap: cannot write pgm");
  pgm << "P2\n" << cols << " " << rows << "\n255\n";
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      const double v = matrix[static_cast<std::size_t>(i) * cols + j];
      int level = 0;
      // The display filter applies to the image only; the CSV stays exact.
      if (mx > 0.0 && std::abs(v) >= threshold) {
        level = static_cast<int>(std::lround(std::abs(v) / mx * 255.0));
      }
      pgm << level << (j + 1 == cols ? "\n" : " ");
    }
  }
}

}  // namespace parsrec
