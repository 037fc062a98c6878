// Run configuration: a line-oriented key/value file with [sections], merged
// as defaults <- file <- environment seed <- CLI overrides.

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "parsrec/model.hpp"
#include "parsrec/synth_config.hpp"
#include "parsrec/train.hpp"

namespace parsrec {

inline constexpr const char* kArtifactVersion = "1.0.0";

struct RunConfig {
  std::uint64_t seed = 1;
  std::string out_dir = "run";
  std::string dataset_path;
  std::string checkpoint_path;

  SynthConfig synth;   // desk-scale defaults
  ModelConfig model;   // n_items filled in from the dataset at use time
  TrainConfig train;
  double heatmap_threshold = 0.05;
  int spillover_k = 10;
  int removed_category = 0;

  // Desk-scale training recipe: 30 epochs at a slightly hotter rate than
  // the library default converges noticeably better in the epoch budget.
  RunConfig() {
    train.max_epochs = 30;
    train.adam.lr = 2e-3;
  }

  bool operator==(const RunConfig&) const = default;
};

// One override: ("section.key" or bare run-section key, value string).
using ConfigOverride = std::pair<std::string, std::string>;

// Applies a single key; throws naming the key when unknown or malformed.
void apply_config_value(RunConfig& cfg, const std::string& section,
                        const std::string& key, const std::string& value);

// Parses the file (empty path skips the file layer), then the overrides.
// The resolved seed is copied into the synth and train sub-configs.
RunConfig load_config(const std::string& path,
                      const std::vector<ConfigOverride>& overrides);

// Serializes the full resolved config; feeding the result back through
// load_config reproduces it.
std::string config_echo(const RunConfig& cfg);

}  // namespace parsrec
