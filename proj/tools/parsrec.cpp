// Command-line driver: synth / train / eval / analyze / spillover / ablate.
// Every subcommand resolves one RunConfig (defaults <- config file <-
// PARSREC_SEED <- flags) and writes its outputs plus a config echo, the seed,
// and the artifact version into the run directory.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "parsrec/analysis.hpp"
#include "parsrec/config.hpp"
#include "parsrec/eval.hpp"
#include "parsrec/synth.hpp"
#include "parsrec/train.hpp"

namespace fs = std::filesystem;
using namespace parsrec;

namespace {

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::string> dataset;
  std::optional<std::string> checkpoint;
  std::vector<ConfigOverride> set;  // --set section.key=value
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_path, "config file path");
  cmd->add_option("--seed", f.seed, "master seed (overrides file and env)");
  cmd->add_option("--out", f.out_dir, "run directory");
  cmd->add_option("--dataset", f.dataset, "dataset path");
  cmd->add_option("--checkpoint", f.checkpoint, "checkpoint path");
  cmd->add_option_function<std::vector<std::string>>(
      "--set",
      [&f](const std::vector<std::string>& kvs) {
        for (const auto& kv : kvs) {
          const auto eq = kv.find('=');
          if (eq == std::string::npos) {
            throw CLI::ValidationError("--set wants section.key=value");
          }
          f.set.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
        }
      },
      "extra config overrides (section.key=value)");
}

RunConfig resolve(const CommonFlags& f) {
  std::vector<ConfigOverride> overrides;
  if (const char* env = std::getenv("PARSREC_SEED")) {
    overrides.emplace_back("seed", env);
  }
  for (const auto& kv : f.set) overrides.push_back(kv);
  if (f.seed) overrides.emplace_back("seed", std::to_string(*f.seed));
  if (f.out_dir) overrides.emplace_back("out_dir", *f.out_dir);
  if (f.dataset) overrides.emplace_back("dataset", *f.dataset);
  if (f.checkpoint) overrides.emplace_back("checkpoint", *f.checkpoint);
  return load_config(f.config_path, overrides);
}

void write_file(const fs::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << body;
}

fs::path prepare_run_dir(const RunConfig& cfg) {
  const fs::path dir(cfg.out_dir);
  fs::create_directories(dir);
  write_file(dir / "config.txt", config_echo(cfg));
  write_file(dir / "seed.txt", std::to_string(cfg.seed) + "\n");
  write_file(dir / "version.txt", std::string(kArtifactVersion) + "\n");
  return dir;
}

std::string default_dataset(const RunConfig& cfg) {
  return cfg.dataset_path.empty()
             ? (fs::path(cfg.out_dir) / "dataset.jsonl").string()
             : cfg.dataset_path;
}

std::string default_checkpoint(const RunConfig& cfg) {
  return cfg.checkpoint_path.empty()
             ? (fs::path(cfg.out_dir) / "model.ckpt").string()
             : cfg.checkpoint_path;
}

ParsRecModel<float> fresh_model(const RunConfig& cfg, const Dataset& ds) {
  ModelConfig mcfg = cfg.model;
  mcfg.n_items = ds.n_items();
  Rng init = Rng::stream(cfg.seed, StreamPurpose::kInit);
  return init_model<float>(mcfg, ds.n_users(), init);
}

int cmd_synth(const CommonFlags& f) {
  const RunConfig cfg = resolve(f);
  const auto dir = prepare_run_dir(cfg);
  const Dataset ds = synthesize(cfg.synth);
  validate_dataset(ds);
  const auto path = default_dataset(cfg);
  write_dataset(ds, path);
  std::cout << "wrote " << path << " (" << ds.sessions.size() << " sessions, "
            << ds.n_items() << " items)\n";
  return 0;
}

int cmd_train(const CommonFlags& f) {
  const RunConfig cfg = resolve(f);
  const auto dir = prepare_run_dir(cfg);
  const Dataset ds = read_dataset(default_dataset(cfg));
  const auto splits = make_splits(ds);
  auto model = fresh_model(cfg, ds);
  const auto history = fit(model, ds, splits, cfg.train);
  save_checkpoint(model, default_checkpoint(cfg), history.best_epoch,
                  history.best_ndcg10);
  write_file(dir / "history.csv", history.to_csv());
  std::cout << "best epoch " << history.best_epoch << " val ndcg@10 "
            << history.best_ndcg10 << "\n";
  return 0;
}

int cmd_eval(const CommonFlags& f) {
  const RunConfig cfg = resolve(f);
  const auto dir = prepare_run_dir(cfg);
  const Dataset ds = read_dataset(default_dataset(cfg));
  const auto splits = make_splits(ds);

  const auto ckpt = default_checkpoint(cfg);
  ParsRecModel<float> model = fs::exists(ckpt)
                                  ? load_checkpoint(ckpt)
                                  : fresh_model(cfg, ds);
  if (!fs::exists(ckpt)) {
    std::cout << "no checkpoint at " << ckpt << "; scoring an untrained model\n";
  }
  ModelScorer scorer(model);
  const auto model_rep =
      evaluate_model(scorer, ds, splits, Split::kTest, cfg.seed);
  write_file(dir / "metrics_model.csv", model_rep.to_csv());

  PopScorer pop(poprec_fit(ds, splits.train_sessions));
  const auto pop_rep = evaluate_model(pop, ds, splits, Split::kTest, cfg.seed);
  write_file(dir / "metrics_poprec.csv", pop_rep.to_csv());

  RandomScorer random(Rng::stream(cfg.seed, StreamPurpose::kMisc).next_u64());
  const auto rand_rep =
      evaluate_model(random, ds, splits, Split::kTest, cfg.seed);
  write_file(dir / "metrics_random.csv", rand_rep.to_csv());

  std::cout << "model  hr@10 " << model_rep.hr10 << " ndcg@10 "
            << model_rep.ndcg10 << "\n"
            << "poprec hr@10 " << pop_rep.hr10 << " ndcg@10 " << pop_rep.ndcg10
            << "\n"
            << "random hr@10 " << rand_rep.hr10 << "\n";
  return 0;
}

int cmd_analyze(const CommonFlags& f) {
  const RunConfig cfg = resolve(f);
  const auto dir = prepare_run_dir(cfg);
  const Dataset ds = read_dataset(default_dataset(cfg));
  const auto splits = make_splits(ds);
  const auto model = load_checkpoint(default_checkpoint(cfg));

  const auto atlas = collect_attention(model, ds, splits);
  const auto groups = group_heatmaps(atlas, ds);
  const int c = ds.n_categories();
  std::vector<std::string> labels;
  for (int i = 0; i < c; ++i) labels.push_back("c" + std::to_string(i));
  for (std::size_t g = 0; g < groups.size(); ++g) {
    export_heatmap(groups[g], c, c, labels, labels, cfg.heatmap_threshold,
                   (dir / ("heatmap_group" + std::to_string(g))).string());
  }
  if (groups.size() >= 2) {
    export_heatmap(heatmap_difference(groups[0], groups[1]), c, c, labels,
                   labels, cfg.heatmap_threshold,
                   (dir / "heatmap_diff_0_1").string());
  }

  // The item Gram matrix is exported for a capped prefix so the raster stays
  // reviewable at desk scale.
  const auto sim = embedding_similarity(model);
  const int n = model.cfg.n_items;
  const int cap = std::min(n, 200);
  std::vector<double> capped(static_cast<std::size_t>(cap) * cap);
  for (int i = 0; i < cap; ++i) {
    for (int j = 0; j < cap; ++j) {
      capped[static_cast<std::size_t>(i) * cap + j] =
          static_cast<double>(sim[static_cast<std::size_t>(i) * n + j]);
    }
  }
  std::vector<std::string> item_labels;
  for (int i = 0; i < cap; ++i) item_labels.push_back("v" + std::to_string(i));
  export_heatmap(capped, cap, cap, item_labels, item_labels, 0.0,
                 (dir / "embedding_similarity").string());
  std::cout << "wrote heatmaps for " << groups.size() << " groups to "
            << dir.string() << "\n";
  return 0;
}

int cmd_spillover(const CommonFlags& f, int removed_category_flag) {
  CommonFlags flags = f;
  if (removed_category_flag >= 0) {
    flags.set.emplace_back("analysis.removed_category",
                           std::to_string(removed_category_flag));
  }
  const RunConfig cfg = resolve(flags);
  const auto dir = prepare_run_dir(cfg);
  const Dataset ds = read_dataset(default_dataset(cfg));
  const auto splits = make_splits(ds);
  const auto model = load_checkpoint(default_checkpoint(cfg));

  const auto removed = spillover_experiment(model, ds, splits,
                                            cfg.removed_category,
                                            cfg.spillover_k);
  write_file(dir / "spillover.csv", removed.to_csv());
  const auto baseline =
      spillover_experiment(model, ds, splits, -1, cfg.spillover_k);
  write_file(dir / "spillover_baseline.csv", baseline.to_csv());
  std::cout << "removed category " << cfg.removed_category << ", wrote "
            << (dir / "spillover.csv").string() << "\n";
  return 0;
}

int cmd_ablate(const CommonFlags& f) {
  const RunConfig cfg = resolve(f);
  const auto dir = prepare_run_dir(cfg);
  const Dataset ds = read_dataset(default_dataset(cfg));
  const auto splits = make_splits(ds);

  struct Variant {
    std::string name;
    void (*tweak)(ModelConfig&);
  };
  const std::vector<Variant> grid{
      {"default", [](ModelConfig&) {}},
      {"no_layer_norm", [](ModelConfig& m) { m.use_ln = false; }},
      {"no_dropout", [](ModelConfig& m) { m.use_dropout = false; }},
      {"no_query_residual", [](ModelConfig& m) { m.add_q_at_ln = false; }},
      {"layers_2", [](ModelConfig& m) { m.layers = 2; }},
      {"heads_1", [](ModelConfig& m) { m.heads = 1; }},
      {"heads_4", [](ModelConfig& m) { m.heads = 4; }},
      {"ffn_pre_rnn", [](ModelConfig& m) { m.ffn_pre_rnn = true; }},
      {"ffn_post_rnn", [](ModelConfig& m) { m.ffn_post_rnn = true; }},
  };

  std::string csv = "variant,seed,best_epoch,hr10,ndcg10,sessprec10\n";
  for (const auto& v : grid) {
    ModelConfig mcfg = cfg.model;
    mcfg.n_items = ds.n_items();
    v.tweak(mcfg);
    Rng init = Rng::stream(cfg.seed, StreamPurpose::kInit);
    auto model = init_model<float>(mcfg, ds.n_users(), init);
    const auto history = fit(model, ds, splits, cfg.train);
    ModelScorer scorer(model);
    const auto rep = evaluate_model(scorer, ds, splits, Split::kTest, cfg.seed);
    char buf[200];
    std::snprintf(buf, sizeof(buf), "%s,%llu,%d,%.6f,%.6f,%.6f\n",
                  v.name.c_str(),
                  static_cast<unsigned long long>(cfg.seed),
                  history.best_epoch, rep.hr10, rep.ndcg10, rep.sess_prec10);
    csv += buf;
    std::cout << buf;
  }
  write_file(dir / "ablate.csv", csv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"attention-fused recurrent recommender laboratory"};
  app.require_subcommand(1);

  CommonFlags f_synth, f_train, f_eval, f_analyze, f_spill, f_ablate;
  int removed_category_flag = -1;

  add_common(app.add_subcommand("synth", "generate and validate a dataset"),
             f_synth);
  add_common(app.add_subcommand("train", "fit a model and checkpoint it"),
             f_train);
  add_common(app.add_subcommand("eval",
                                "score a checkpoint, the popularity baseline, "
                                "and a random scorer"),
             f_eval);
  add_common(app.add_subcommand("analyze",
                                "attention atlas, category heatmaps, and "
                                "embedding similarity"),
             f_analyze);
  auto* spill = app.add_subcommand("spillover", "category-removal experiment");
  add_common(spill, f_spill);
  spill->add_option("--removed-category", removed_category_flag,
                    "category to remove");
  add_common(app.add_subcommand("ablate", "run the architecture flag grid"),
             f_ablate);

  CLI11_PARSE(app, argc, argv);
  try {
    if (app.got_subcommand("synth")) return cmd_synth(f_synth);
    if (app.got_subcommand("train")) return cmd_train(f_train);
    if (app.got_subcommand("eval")) return cmd_eval(f_eval);
    if (app.got_subcommand("analyze")) return cmd_analyze(f_analyze);
    if (app.got_subcommand("spillover")) {
      return cmd_spillover(f_spill, removed_category_flag);
    }
    if (app.got_subcommand("ablate")) return cmd_ablate(f_ablate);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
