// Training loop: similar-size mini-batching, modified teacher forcing,
// Adam with global gradient clipping, validation-metric early stopping, and
// checkpoint persistence.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "parsrec/dataset.hpp"
#include "parsrec/eval.hpp"
#include "parsrec/model.hpp"
#include "parsrec/optim.hpp"
#include "parsrec/rng.hpp"

namespace parsrec {

struct TrainConfig {
  int batch_size = 256;
  int max_epochs = 100;
  int patience = 10;  // epochs without validation improvement before stopping
  AdamConfig adam{};
  double clip_norm = 30.0;
  std::uint64_t seed = 1;

  void check() const;

  bool operator==(const TrainConfig&) const = default;
};

// One mini-batch: session indices whose baskets are unrolled together for
// `padded_len` steps; shorter baskets are padded with EOB targets.
struct Batch {
  std::vector<int> sessions;
  int padded_len = 0;
};

struct BatchPlan {
  std::vector<Batch> batches;
};

// Groups sessions by basket size, shuffles within each group, and chunks
// into batches. Leftover chunks from different size groups are merged into
// mixed batches whose shorter sessions are EOB-padded.
BatchPlan plan_batches(const Dataset& ds, const std::vector<int>& sessions,
                       int batch_size, Rng& rng);

// The modified teacher-forcing rule: feed the prediction when it is still an
// unconsumed basket item, otherwise feed a uniformly random remaining item.
// `remaining` must be sorted and non-empty; the fed item is removed.
int teacher_force_next(int predicted, std::vector<int>& remaining, Rng& rng);

// Per-session history items (all items from the user's earlier training
// sessions), indexed by session index; non-training sessions stay empty.
std::vector<std::vector<int>> train_histories(const Dataset& ds,
                                              const SplitSpec& splits);

// One optimizer step over a batch: step-synchronous unroll with teacher
// forcing, mean cross entropy over non-padded steps, backward, global clip,
// dense Adam plus sparse-row Adam on the embeddings. Returns the batch loss.
double run_training_step(ParsRecModel<float>& model, const Dataset& ds,
                         const std::vector<std::vector<int>>& histories,
                         const Batch& batch, Adam<float>& dense,
                         SparseAdam<float>& user_adam,
                         SparseAdam<float>& item_adam, double clip_norm,
                         Rng& feed_rng, Rng& dropout_rng);

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;
  MetricsReport val;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  int best_epoch = -1;
  double best_ndcg10 = 0.0;

  // "epoch,loss,hr10,ndcg10,sessprec10" rows.
  std::string to_csv() const;
};

// Epoch loop with per-epoch validation; keeps the best-NDCG@10 parameters
// and restores them into `model` before returning.
TrainHistory fit(ParsRecModel<float>& model, const Dataset& ds,
                 const SplitSpec& splits, const TrainConfig& cfg);

inline constexpr int kCheckpointFormatVersion = 1;

// Optional optimizer state carried alongside the parameters.
struct OptStateRefs {
  Adam<float>* dense = nullptr;
  SparseAdam<float>* user = nullptr;
  SparseAdam<float>* item = nullptr;
};

// Text header (version, config echo, tensor manifest) followed by raw
// little-endian float32 payload in manifest order.
void save_checkpoint(const ParsRecModel<float>& model, const std::string& path,
                     int epoch = 0, double best_metric = 0.0,
                     const OptStateRefs* opt = nullptr);

// Rebuilds the model from the embedded config; round-trips parameters
// bitwise. When `opt` is given its states are restored too (they must be
// bound to the same shapes).
ParsRecModel<float> load_checkpoint(const std::string& path,
                                    int* epoch = nullptr,
                                    double* best_metric = nullptr,
                                    const OptStateRefs* opt = nullptr);

}  // namespace parsrec
