#include "parsrec/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

namespace parsrec {

SplitSpec make_splits(const Dataset& ds) {
  SplitSpec spec;
  for (const auto& [begin, end] : ds.user_session_ranges()) {
    if (end - begin < 3) continue;  // needs train, validation, and test
    SplitSpec::Entry e;
    e.user = ds.sessions[static_cast<std::size_t>(begin)].user;
    for (int i = begin; i < end - 2; ++i) e.train.push_back(i);
    e.val = end - 2;
    e.test = end - 1;
    spec.train_sessions.insert(spec.train_sessions.end(), e.train.begin(),
                               e.train.end());
    spec.entries.push_back(std::move(e));
  }
  return spec;
}

std::vector<int> split_history(const Dataset& ds, const SplitSpec::Entry& e,
                               Split split) {
  std::vector<int> items;
  for (const int s : e.train) {
    const auto& sess = ds.sessions[static_cast<std::size_t>(s)];
    items.insert(items.end(), sess.items.begin(), sess.items.end());
  }
  if (split == Split::kTest) {
    const auto& sess = ds.sessions[static_cast<std::size_t>(e.val)];
    items.insert(items.end(), sess.items.begin(), sess.items.end());
  }
  return items;
}

void ModelScorer::begin_session(int user, const std::vector<int>& history,
                                const std::vector<int>&) {
  user_ = user;
  h_ = history_state<float>(nullptr, *model_, history);
  prefix_ = {model_->cfg.sob()};
  fresh_ = false;
}

void ModelScorer::ensure_step() {
  if (fresh_) return;
  Tape<float>* no_tape = nullptr;
  Rng unused(0);  // dropout is inactive in eval mode
  auto [v_tilde, record] = attention_step<float>(no_tape, *model_, user_, h_,
                                                 prefix_, false, unused);
  auto q = concat_cols<float>(
      no_tape, {embedding_lookup<float>(no_tape, model_->user_emb, {user_}), h_});
  auto [h_next, logits] = arnn_step<float>(no_tape, *model_, v_tilde, q);
  logits_ = logits->data;
  h_next_ = h_next;
  attention_ = std::move(record);
  fresh_ = true;
}

std::vector<double> ModelScorer::score(const std::vector<int>& candidates) {
  ensure_step();
  std::vector<double> out;
  out.reserve(candidates.size());
  for (const int c : candidates) {
    out.push_back(static_cast<double>(logits_[static_cast<std::size_t>(c)]));
  }
  return out;
}

void ModelScorer::feed(int item) {
  ensure_step();
  prefix_.push_back(item);
  h_ = h_next_;
  fresh_ = false;
}

const std::vector<float>& ModelScorer::step_logits() {
  ensure_step();
  return logits_;
}

const AttentionRecord<float>& ModelScorer::step_attention() {
  ensure_step();
  return attention_;
}

PopModel poprec_fit(const Dataset& ds, const std::vector<int>& train_sessions) {
  PopModel pop;
  pop.counts.assign(static_cast<std::size_t>(ds.n_items()), 0);
  for (const int s : train_sessions) {
    for (const int item : ds.sessions[static_cast<std::size_t>(s)].items) {
      ++pop.counts[static_cast<std::size_t>(item)];
    }
  }
  return pop;
}

std::vector<double> PopScorer::score(const std::vector<int>& candidates) {
  std::vector<double> out;
  out.reserve(candidates.size());
  for (const int c : candidates) {
    out.push_back(static_cast<double>(pop_.counts[static_cast<std::size_t>(c)]));
  }
  return out;
}

std::vector<double> RandomScorer::score(const std::vector<int>& candidates) {
  std::vector<double> out(candidates.size());
  for (auto& v : out) v = rng_.uniform();
  return out;
}

void OracleScorer::begin_session(int, const std::vector<int>&,
                                 const std::vector<int>& basket) {
  remaining_ = basket;
}

std::vector<double> OracleScorer::score(const std::vector<int>& candidates) {
  std::vector<double> out;
  out.reserve(candidates.size());
  for (const int c : candidates) {
    const bool rem =
        std::find(remaining_.begin(), remaining_.end(), c) != remaining_.end();
    out.push_back(rem ? 1.0 : 0.0);
  }
  return out;
}

void OracleScorer::feed(int item) {
  remaining_.erase(std::remove(remaining_.begin(), remaining_.end(), item),
                   remaining_.end());
}

std::vector<int> sample_candidates(int n_items, const std::vector<int>& basket,
                                   int n_negatives, Rng& rng) {
  const std::unordered_set<int> in_basket(basket.begin(), basket.end());
  std::vector<int> pool(basket.begin(), basket.end());
  if (n_items - static_cast<int>(in_basket.size()) <= n_negatives) {
    // Too few outsiders to sample: the pool is the whole vocabulary.
    pool.clear();
    pool.resize(static_cast<std::size_t>(n_items));
    std::iota(pool.begin(), pool.end(), 0);
  } else {
    std::unordered_set<int> chosen;
    while (static_cast<int>(chosen.size()) < n_negatives) {
      const int item = rng.uniform_int(n_items);
      if (in_basket.count(item) || !chosen.insert(item).second) continue;
      pool.push_back(item);
    }
  }
  std::sort(pool.begin(), pool.end());
  pool.erase(std::unique(pool.begin(), pool.end()), pool.end());
  return pool;
}

namespace {
constexpr int kEvalNegatives = 100;
}

SessionEval evaluate_session(SessionScorer& scorer, int user,
                             const std::vector<int>& history,
                             const std::vector<int>& basket, int n_items,
                             Rng& cand_rng, Rng& feed_rng) {
  if (basket.size() < 2) {
    throw std::invalid_argument("evaluate_session: basket size < 2");
  }
  // One fixed pool per session: the basket plus sampled negatives. Every
  // scorer sees the same pool at every step; already-consumed items stay in
  // as distractors the model is expected to downrank.
  const auto pool = sample_candidates(n_items, basket, kEvalNegatives, cand_rng);

  std::vector<int> remaining = basket;
  std::sort(remaining.begin(), remaining.end());

  SessionEval out;
  scorer.begin_session(user, history, basket);
  std::vector<int> order(pool.size());
  while (!remaining.empty()) {
    const auto scores = scorer.score(pool);
    std::iota(order.begin(), order.end(), 0);
    // Descending score; the pool is sorted, so stability breaks ties toward
    // the lower item id for every scorer alike.
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return scores[static_cast<std::size_t>(a)] >
             scores[static_cast<std::size_t>(b)];
    });

    const int top1 = pool[static_cast<std::size_t>(order[0])];
    const bool top1_remains =
        std::binary_search(remaining.begin(), remaining.end(), top1);
    const int fed =
        top1_remains
            ? top1
            : remaining[static_cast<std::size_t>(feed_rng.uniform_int(
                  static_cast<int>(remaining.size())))];

    int rank = 0;
    for (std::size_t r = 0; r < order.size(); ++r) {
      if (pool[static_cast<std::size_t>(order[r])] == fed) {
        rank = static_cast<int>(r) + 1;
        break;
      }
    }
    out.ranks.push_back(rank);
    out.n_candidates.push_back(static_cast<int>(pool.size()));
    out.fed.push_back(fed);

    scorer.feed(fed);
    remaining.erase(std::lower_bound(remaining.begin(), remaining.end(), fed));
  }
  return out;
}

MetricsReport aggregate_metrics(const std::vector<SessionEval>& sessions) {
  if (sessions.empty()) {
    throw std::invalid_argument("aggregate_metrics: no sessions");
  }
  MetricsReport rep;
  double h1 = 0, h5 = 0, h10 = 0, n5 = 0, n10 = 0;
  double s1 = 0, s5 = 0, s10 = 0;
  for (const auto& s : sessions) {
    int sh1 = 0, sh5 = 0, sh10 = 0;
    for (const int r : s.ranks) {
      const double gain = 1.0 / std::log2(1.0 + r);
      if (r <= 1) ++sh1;
      if (r <= 5) {
        ++sh5;
        n5 += gain;
      }
      if (r <= 10) {
        ++sh10;
        n10 += gain;
      }
    }
    const auto n = static_cast<double>(s.ranks.size());
    h1 += sh1;
    h5 += sh5;
    h10 += sh10;
    s1 += sh1 / n;
    s5 += sh5 / n;
    s10 += sh10 / n;
    rep.steps += static_cast<std::int64_t>(s.ranks.size());
  }
  rep.sessions = static_cast<std::int64_t>(sessions.size());
  const auto steps = static_cast<double>(rep.steps);
  rep.hr1 = h1 / steps;
  rep.hr5 = h5 / steps;
  rep.hr10 = h10 / steps;
  rep.ndcg5 = n5 / steps;
  rep.ndcg10 = n10 / steps;
  const auto ns = static_cast<double>(rep.sessions);
  rep.sess_prec1 = s1 / ns;
  rep.sess_prec5 = s5 / ns;
  rep.sess_prec10 = s10 / ns;
  return rep;
}

std::string MetricsReport::to_csv() const {
  std::string out = "metric,k,value,steps,sessions\n";
  const auto row = [&](const char* metric, int k, double value) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%s,%d,%.6f,%lld,%lld\n", metric, k, value,
                  static_cast<long long>(steps),
                  static_cast<long long>(sessions));
    out += buf;
  };
  row("hr", 1, hr1);
  row("hr", 5, hr5);
  row("hr", 10, hr10);
  row("ndcg", 5, ndcg5);
  row("ndcg", 10, ndcg10);
  row("sess_prec", 1, sess_prec1);
  row("sess_prec", 5, sess_prec5);
  row("sess_prec", 10, sess_prec10);
  return out;
}

MetricsReport evaluate_model(SessionScorer& scorer, const Dataset& ds,
                             const SplitSpec& splits, Split split,
                             std::uint64_t seed) {
  std::vector<SessionEval> results;
  results.reserve(splits.entries.size());
  for (const auto& e : splits.entries) {
    const int idx = split == Split::kValidation ? e.val : e.test;
    const auto& basket = ds.sessions[static_cast<std::size_t>(idx)].items;
    const auto history = split_history(ds, e, split);
    Rng cand = Rng::stream(seed, StreamPurpose::kEvalCandidates,
                           static_cast<std::uint64_t>(e.user));
    Rng feed = Rng::stream(seed, StreamPurpose::kEvalFeed,
                           static_cast<std::uint64_t>(e.user));
    results.push_back(evaluate_session(scorer, e.user, history, basket,
                                       ds.n_items(), cand, feed));
  }
  return aggregate_metrics(results);
}

}  // namespace parsrec
