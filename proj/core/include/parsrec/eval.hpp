// Leave-last-session evaluation protocol: splits, sampled candidate sets,
// sequential within-basket scoring with the modified teacher-forcing feed
// rule, HR/NDCG/Sess-Prec aggregation, and the popularity baseline.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "parsrec/dataset.hpp"
#include "parsrec/model.hpp"
#include "parsrec/rng.hpp"

namespace parsrec {

// Per-user session split: last session is test, second to last validation,
// the rest train. Users with fewer than three sessions are excluded.
struct SplitSpec {
  struct Entry {
    int user = 0;
    std::vector<int> train;  // indices into Dataset::sessions
    int val = -1;
    int test = -1;

    bool operator==(const Entry&) const = default;
  };
  std::vector<Entry> entries;
  std::vector<int> train_sessions;  // union of all per-user train indices

  bool operator==(const SplitSpec&) const = default;
};

SplitSpec make_splits(const Dataset& ds);

enum class Split { kValidation, kTest };

// Stateful per-session scorer. `begin_session` resets it; `score` returns
// one score per candidate for the current step; `feed` advances the step
// with the item that was actually consumed.
class SessionScorer {
 public:
  virtual ~SessionScorer() = default;
  virtual void begin_session(int user, const std::vector<int>& history,
                             const std::vector<int>& basket) = 0;
  virtual std::vector<double> score(const std::vector<int>& candidates) = 0;
  virtual void feed(int item) = 0;
};

// Scores candidates with the trained model's step logits (eval mode).
class ModelScorer : public SessionScorer {
 public:
  explicit ModelScorer(const ParsRecModel<float>& model) : model_(&model) {}

  void begin_session(int user, const std::vector<int>& history,
                     const std::vector<int>& basket) override;
  std::vector<double> score(const std::vector<int>& candidates) override;
  void feed(int item) override;

  // Full step logits over the vocabulary (valid after the first score call
  // of a step); used by the analysis experiments.
  const std::vector<float>& step_logits();
  const AttentionRecord<float>& step_attention();
  const std::vector<int>& prefix() const { return prefix_; }

 private:
  void ensure_step();

  const ParsRecModel<float>* model_;
  int user_ = 0;
  TensorPtr<float> h_;
  TensorPtr<float> h_next_;
  std::vector<int> prefix_;
  std::vector<float> logits_;
  AttentionRecord<float> attention_;
  bool fresh_ = false;
};

// Per-item interaction counts over the training split.
struct PopModel {
  std::vector<std::int64_t> counts;  // size n_items
};

PopModel poprec_fit(const Dataset& ds, const std::vector<int>& train_sessions);

// Frequency ranking; ignores user, history, and step state.
class PopScorer : public SessionScorer {
 public:
  explicit PopScorer(PopModel pop) : pop_(std::move(pop)) {}
  void begin_session(int, const std::vector<int>&,
                     const std::vector<int>&) override {}
  std::vector<double> score(const std::vector<int>& candidates) override;
  void feed(int) override {}

 private:
  PopModel pop_;
};

// Uniform random scores; the floor every real scorer must beat.
class RandomScorer : public SessionScorer {
 public:
  explicit RandomScorer(std::uint64_t seed) : rng_(seed) {}
  void begin_session(int, const std::vector<int>&,
                     const std::vector<int>&) override {}
  std::vector<double> score(const std::vector<int>& candidates) override;
  void feed(int) override {}

 private:
  Rng rng_;
};

// Ranks the not-yet-consumed basket items first; the ceiling (all metrics 1).
class OracleScorer : public SessionScorer {
 public:
  void begin_session(int, const std::vector<int>&,
                     const std::vector<int>& basket) override;
  std::vector<double> score(const std::vector<int>& candidates) override;
  void feed(int item) override;

 private:
  std::vector<int> remaining_;
};

// Candidate pool for one session: the basket's items stay eligible while
// unconsumed; negatives are drawn once, without replacement, from the items
// outside the basket (all of them when fewer than `n_negatives` exist).
std::vector<int> sample_candidates(int n_items, const std::vector<int>& basket,
                                   int n_negatives, Rng& rng);

struct SessionEval {
  std::vector<int> ranks;         // 1-based rank of the fed item per step
  std::vector<int> n_candidates;  // candidate count per step
  std::vector<int> fed;           // items fed, in order
};

// Scores one basket step by step. At each step the candidates are the
// remaining basket items plus the fixed negatives; the step's rank is the
// rank of the item that the feed rule consumes (the top-1 prediction when it
// is still remaining, otherwise a uniformly random remaining item).
SessionEval evaluate_session(SessionScorer& scorer, int user,
                             const std::vector<int>& history,
                             const std::vector<int>& basket, int n_items,
                             Rng& cand_rng, Rng& feed_rng);

struct MetricsReport {
  double hr1 = 0, hr5 = 0, hr10 = 0;
  double ndcg5 = 0, ndcg10 = 0;
  double sess_prec1 = 0, sess_prec5 = 0, sess_prec10 = 0;
  std::int64_t steps = 0;
  std::int64_t sessions = 0;

  // Lines of "metric,k,value,steps,sessions" under a header.
  std::string to_csv() const;
};

MetricsReport aggregate_metrics(const std::vector<SessionEval>& sessions);

// Runs the scorer over every user's validation or test session with
// per-user candidate/feed streams derived from `seed`, so different scorers
// (and parallel orderings) see the same draws.
MetricsReport evaluate_model(SessionScorer& scorer, const Dataset& ds,
                             const SplitSpec& splits, Split split,
                             std::uint64_t seed);

// History items available to the scorer for this user and split (train
// sessions only for validation; train plus validation for test).
std::vector<int> split_history(const Dataset& ds, const SplitSpec::Entry& e,
                               Split split);

}  // namespace parsrec
