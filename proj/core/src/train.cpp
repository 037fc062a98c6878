#include "parsrec/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace parsrec {

void TrainConfig::check() const {
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size < 1");
  if (patience < 1) throw std::invalid_argument("TrainConfig: patience < 1");
  if (max_epochs < 1) throw std::invalid_argument("TrainConfig: max_epochs < 1");
  if (clip_norm <= 0) throw std::invalid_argument("TrainConfig: clip_norm <= 0");
}

namespace {

template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
    std::swap(v[static_cast<std::size_t>(i)],
              v[static_cast<std::size_t>(rng.uniform_int(i + 1))]);
  }
}

}  // namespace

BatchPlan plan_batches(const Dataset& ds, const std::vector<int>& sessions,
                       int batch_size, Rng& rng) {
  if (batch_size < 1) throw std::invalid_argument("plan_batches: batch_size < 1");
  std::map<int, std::vector<int>> by_size;
  for (const int s : sessions) {
    by_size[static_cast<int>(ds.sessions[static_cast<std::size_t>(s)].items.size())]
        .push_back(s);
  }

  BatchPlan plan;
  std::vector<std::pair<int, int>> leftovers;  // (basket size, session index)
  for (auto& [size, group] : by_size) {
    shuffle(group, rng);
    std::size_t i = 0;
    for (; i + batch_size <= group.size(); i += batch_size) {
      Batch b;
      b.sessions.assign(group.begin() + static_cast<long>(i),
                        group.begin() + static_cast<long>(i + batch_size));
      b.padded_len = size;
      plan.batches.push_back(std::move(b));
    }
    for (; i < group.size(); ++i) leftovers.emplace_back(size, group[i]);
  }

  // Leftovers are already ordered by basket size (map iteration); chunk them
  // into mixed batches padded to each chunk's maximum size.
  for (std::size_t i = 0; i < leftovers.size(); i += batch_size) {
    const std::size_t end =
        std::min(leftovers.size(), i + static_cast<std::size_t>(batch_size));
    Batch b;
    for (std::size_t j = i; j < end; ++j) {
      b.sessions.push_back(leftovers[j].second);
      b.padded_len = std::max(b.padded_len, leftovers[j].first);
    }
    plan.batches.push_back(std::move(b));
  }
  return plan;
}

int teacher_force_next(int predicted, std::vector<int>& remaining, Rng& rng) {
  if (remaining.empty()) {
    throw std::invalid_argument("teacher_force_next: nothing remaining");
  }
  const auto it =
      std::lower_bound(remaining.begin(), remaining.end(), predicted);
  if (it != remaining.end() && *it == predicted) {
    remaining.erase(it);
    return predicted;
  }
  const int pick = rng.uniform_int(static_cast<int>(remaining.size()));
  const int fed = remaining[static_cast<std::size_t>(pick)];
  remaining.erase(remaining.begin() + pick);
  return fed;
}

std::vector<std::vector<int>> train_histories(const Dataset& ds,
                                              const SplitSpec& splits) {
  std::vector<std::vector<int>> out(ds.sessions.size());
  for (const auto& e : splits.entries) {
    std::vector<int> acc;
    for (const int s : e.train) {
      out[static_cast<std::size_t>(s)] = acc;
      const auto& items = ds.sessions[static_cast<std::size_t>(s)].items;
      acc.insert(acc.end(), items.begin(), items.end());
    }
  }
  return out;
}

double run_training_step(ParsRecModel<float>& model, const Dataset& ds,
                         const std::vector<std::vector<int>>& histories,
                         const Batch& batch, Adam<float>& dense,
                         SparseAdam<float>& user_adam,
                         SparseAdam<float>& item_adam, double clip_norm,
                         Rng& feed_rng, Rng& dropout_rng) {
  const auto& cfg = model.cfg;
  const int b_size = static_cast<int>(batch.sessions.size());
  if (b_size == 0) throw std::invalid_argument("run_training_step: empty batch");

  const auto params = model.all_params();
  for (const auto& p : params) p->zero_grad();

  Tape<float> tape;
  std::vector<TensorPtr<float>> h(static_cast<std::size_t>(b_size));
  std::vector<std::vector<int>> prefix(static_cast<std::size_t>(b_size));
  std::vector<std::vector<int>> remaining(static_cast<std::size_t>(b_size));
  std::vector<int> users(static_cast<std::size_t>(b_size));
  for (int b = 0; b < b_size; ++b) {
    const int s = batch.sessions[static_cast<std::size_t>(b)];
    const auto& sess = ds.sessions[static_cast<std::size_t>(s)];
    users[static_cast<std::size_t>(b)] = sess.user;
    h[static_cast<std::size_t>(b)] = history_state<float>(
        &tape, model, histories[static_cast<std::size_t>(s)]);
    prefix[static_cast<std::size_t>(b)] = {cfg.sob()};
    remaining[static_cast<std::size_t>(b)] = sess.items;
    std::sort(remaining[static_cast<std::size_t>(b)].begin(),
              remaining[static_cast<std::size_t>(b)].end());
  }

  std::vector<TensorPtr<float>> losses;
  int total_steps = 0;
  for (int j = 0; j < batch.padded_len; ++j) {
    std::vector<TensorPtr<float>> v_rows, q_rows;
    v_rows.reserve(static_cast<std::size_t>(b_size));
    q_rows.reserve(static_cast<std::size_t>(b_size));
    for (int b = 0; b < b_size; ++b) {
      auto [v, rec] = attention_step<float>(
          &tape, model, users[static_cast<std::size_t>(b)],
          h[static_cast<std::size_t>(b)], prefix[static_cast<std::size_t>(b)],
          true, dropout_rng);
      v_rows.push_back(v);
      q_rows.push_back(concat_cols<float>(
          &tape, {embedding_lookup<float>(
                      &tape, model.user_emb,
                      {users[static_cast<std::size_t>(b)]}),
                  h[static_cast<std::size_t>(b)]}));
    }
    auto v_tilde = stack_rows(&tape, v_rows);
    auto q_tilde = stack_rows(&tape, q_rows);
    auto [h_next, logits] = arnn_step<float>(&tape, model, v_tilde, q_tilde);

    std::vector<int> targets(static_cast<std::size_t>(b_size), cfg.eob());
    for (int b = 0; b < b_size; ++b) {
      auto& rem = remaining[static_cast<std::size_t>(b)];
      if (rem.empty()) continue;  // padded tail of a shorter basket
      const float* row =
          logits->data.data() + static_cast<std::size_t>(b) * cfg.vocab();
      int pred = 0;
      for (int i = 1; i < cfg.n_items; ++i) {  // special tokens masked out
        if (row[i] > row[pred]) pred = i;
      }
      targets[static_cast<std::size_t>(b)] =
          teacher_force_next(pred, rem, feed_rng);
    }

    int count = 0;
    losses.push_back(
        cross_entropy_sum(&tape, logits, targets, cfg.eob(), &count));
    total_steps += count;

    for (int b = 0; b < b_size; ++b) {
      prefix[static_cast<std::size_t>(b)].push_back(
          targets[static_cast<std::size_t>(b)]);
      h[static_cast<std::size_t>(b)] = slice_row(&tape, h_next, b);
    }
  }
  if (total_steps == 0) {
    throw std::runtime_error("run_training_step: batch has no real steps");
  }
  auto loss = scale(&tape, add_n(&tape, losses),
                    static_cast<float>(1.0 / total_steps));
  const double loss_value = static_cast<double>(loss->data[0]);
  if (!std::isfinite(loss_value)) {
    char msg[128];
    std::snprintf(msg, sizeof(msg),
                  "run_training_step: non-finite loss %g over %d steps",
                  loss_value, total_steps);
    throw std::runtime_error(msg);
  }

  tape.backward(loss);
  clip_global_norm(params, clip_norm);
  dense.step();
  user_adam.step(tape.touched_rows(model.user_emb.get()));
  item_adam.step(tape.touched_rows(model.item_emb.get()));
  return loss_value;
}

std::string TrainHistory::to_csv() const {
  std::string out = "epoch,loss,hr10,ndcg10,sessprec10\n";
  for (const auto& e : epochs) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.6f,%.6f\n", e.epoch,
                  e.loss, e.val.hr10, e.val.ndcg10, e.val.sess_prec10);
    out += buf;
  }
  return out;
}

TrainHistory fit(ParsRecModel<float>& model, const Dataset& ds,
                 const SplitSpec& splits, const TrainConfig& cfg) {
  cfg.check();
  if (splits.entries.empty()) throw std::invalid_argument("fit: empty splits");

  const auto histories = train_histories(ds, splits);
  Adam<float> dense(model.dense_params(), cfg.adam);
  SparseAdam<float> user_adam(model.user_emb, cfg.adam);
  SparseAdam<float> item_adam(model.item_emb, cfg.adam);

  Rng train_rng = Rng::stream(cfg.seed, StreamPurpose::kTraining);
  Rng dropout_rng = Rng::stream(cfg.seed, StreamPurpose::kDropout);

  TrainHistory history;
  std::vector<std::vector<float>> best;  // snapshot of all parameters
  int since_best = 0;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto plan =
        plan_batches(ds, splits.train_sessions, cfg.batch_size, train_rng);
    double loss_sum = 0.0;
    for (const auto& batch : plan.batches) {
      loss_sum += run_training_step(model, ds, histories, batch, dense,
                                    user_adam, item_adam, cfg.clip_norm,
                                    train_rng, dropout_rng);
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.loss = loss_sum / static_cast<double>(plan.batches.size());
    ModelScorer scorer(model);
    stats.val = evaluate_model(scorer, ds, splits, Split::kValidation,
                               cfg.seed);
    history.epochs.push_back(stats);

    if (history.best_epoch < 0 || stats.val.ndcg10 > history.best_ndcg10) {
      history.best_epoch = epoch;
      history.best_ndcg10 = stats.val.ndcg10;
      best.clear();
      for (const auto& p : model.all_params()) best.push_back(p->data);
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }

  const auto params = model.all_params();
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->data = best[i];
  return history;
}

namespace {

// Manifest entries written for a model plus optional optimizer state. The
// sparse row-step counters are stored as floats; they stay exactly
// representable for any realistic run length.
struct NamedBlob {
  std::string name;
  int rows = 0;
  int cols = 0;
  const float* src = nullptr;       // used by save
  std::vector<float> staged;        // used when data must be converted
};

std::vector<NamedBlob> manifest(const ParsRecModel<float>& model,
                                const OptStateRefs* opt) {
  std::vector<NamedBlob> blobs;
  for (const auto& [name, t] : model.named_params()) {
    blobs.push_back({name, t->rows(), t->cols(), t->data.data(), {}});
  }
  if (opt && opt->dense && opt->user && opt->item) {
    const auto& dense_params = opt->dense->params();
    for (std::size_t i = 0; i < dense_params.size(); ++i) {
      const auto& p = dense_params[i];
      const std::string base = "opt.dense." + std::to_string(i);
      blobs.push_back({base + ".m1", p->rows(), p->cols(),
                       opt->dense->moment1(i).data(), {}});
      blobs.push_back({base + ".m2", p->rows(), p->cols(),
                       opt->dense->moment2(i).data(), {}});
    }
    NamedBlob step{"opt.dense.step", 1, 1, nullptr, {}};
    step.staged = {static_cast<float>(opt->dense->step_count())};
    step.src = step.staged.data();
    blobs.push_back(std::move(step));
    const auto sparse = [&](const char* tag, SparseAdam<float>* sa) {
      const auto& tbl = sa->table();
      const std::string base = std::string("opt.") + tag;
      blobs.push_back(
          {base + ".m1", tbl->rows(), tbl->cols(), sa->moment1().data(), {}});
      blobs.push_back(
          {base + ".m2", tbl->rows(), tbl->cols(), sa->moment2().data(), {}});
      NamedBlob steps{base + ".steps", 1, tbl->rows(), nullptr, {}};
      steps.staged.reserve(sa->row_steps().size());
      for (const auto t : sa->row_steps()) {
        steps.staged.push_back(static_cast<float>(t));
      }
      steps.src = steps.staged.data();
      blobs.push_back(std::move(steps));
    };
    sparse("user", opt->user);
    sparse("item", opt->item);
  }
  return blobs;
}

}  // namespace

void save_checkpoint(const ParsRecModel<float>& model, const std::string& path,
                     int epoch, double best_metric, const OptStateRefs* opt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  const auto& c = model.cfg;
  out << "parsrec-checkpoint " << kCheckpointFormatVersion << "\n";
  out << "epoch " << epoch << "\n";
  char metric[64];
  std::snprintf(metric, sizeof(metric), "%.17g", best_metric);
  out << "best_metric " << metric << "\n";
  out << "n_users " << model.n_users << "\n";
  out << "n_items " << c.n_items << "\n";
  out << "d_u " << c.d_u << "\n";
  out << "d_v " << c.d_v << "\n";
  out << "heads " << c.heads << "\n";
  out << "layers " << c.layers << "\n";
  out << "dropout " << c.dropout << "\n";
  out << "use_ln " << int(c.use_ln) << "\n";
  out << "use_dropout " << int(c.use_dropout) << "\n";
  out << "add_q_at_ln " << int(c.add_q_at_ln) << "\n";
  out << "ffn_pre_rnn " << int(c.ffn_pre_rnn) << "\n";
  out << "ffn_post_rnn " << int(c.ffn_post_rnn) << "\n";

  const auto blobs = manifest(model, opt);
  out << "tensors " << blobs.size() << "\n";
  for (const auto& b : blobs) {
    out << b.name << " " << b.rows << " " << b.cols << "\n";
  }
  out << "data\n";
  for (const auto& b : blobs) {
    out.write(reinterpret_cast<const char*>(b.src),
              static_cast<std::streamsize>(sizeof(float) *
                                           static_cast<std::size_t>(b.rows) *
                                           static_cast<std::size_t>(b.cols)));
  }
  if (!out) throw std::runtime_error("save_checkpoint: write failed");
}

ParsRecModel<float> load_checkpoint(const std::string& path, int* epoch,
                                    double* best_metric,
                                    const OptStateRefs* opt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "parsrec-checkpoint") {
    throw std::runtime_error("load_checkpoint: bad header");
  }
  if (version != kCheckpointFormatVersion) {
    throw std::runtime_error("load_checkpoint: unsupported format version");
  }

  std::map<std::string, std::string> kv;
  std::string key;
  long long n_tensors = -1;
  while (in >> key) {
    if (key == "tensors") {
      in >> n_tensors;
      break;
    }
    std::string value;
    in >> value;
    kv[key] = value;
  }
  if (n_tensors < 0 || !in) {
    throw std::runtime_error("load_checkpoint: truncated header");
  }
  const auto geti = [&](const char* k) {
    const auto it = kv.find(k);
    if (it == kv.end()) {
      throw std::runtime_error(std::string("load_checkpoint: missing key ") + k);
    }
    return std::stoi(it->second);
  };
  if (epoch) *epoch = geti("epoch");
  if (best_metric) *best_metric = std::stod(kv.at("best_metric"));

  ModelConfig cfg;
  cfg.n_items = geti("n_items");
  cfg.d_u = geti("d_u");
  cfg.d_v = geti("d_v");
  cfg.heads = geti("heads");
  cfg.layers = geti("layers");
  cfg.dropout = std::stod(kv.at("dropout"));
  cfg.use_ln = geti("use_ln") != 0;
  cfg.use_dropout = geti("use_dropout") != 0;
  cfg.add_q_at_ln = geti("add_q_at_ln") != 0;
  cfg.ffn_pre_rnn = geti("ffn_pre_rnn") != 0;
  cfg.ffn_post_rnn = geti("ffn_post_rnn") != 0;
  const int n_users = geti("n_users");

  struct Entry {
    std::string name;
    int rows = 0, cols = 0;
  };
  std::vector<Entry> entries(static_cast<std::size_t>(n_tensors));
  for (auto& e : entries) in >> e.name >> e.rows >> e.cols;
  std::string sentinel;
  in >> sentinel;
  if (sentinel != "data" || !in) {
    throw std::runtime_error("load_checkpoint: bad tensor manifest");
  }
  in.get();  // the newline before the payload

  Rng throwaway(0);
  ParsRecModel<float> model = init_model<float>(cfg, n_users, throwaway);
  std::map<std::string, TensorPtr<float>> by_name;
  for (const auto& [name, t] : model.named_params()) by_name[name] = t;

  std::map<std::string, std::vector<float>> extra;  // optimizer blobs
  for (const auto& e : entries) {
    std::vector<float> buf(static_cast<std::size_t>(e.rows) *
                           static_cast<std::size_t>(e.cols));
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(sizeof(float) * buf.size()));
    if (!in) throw std::runtime_error("load_checkpoint: truncated payload");
    const auto it = by_name.find(e.name);
    if (it != by_name.end()) {
      if (it->second->rows() != e.rows || it->second->cols() != e.cols) {
        throw std::runtime_error("load_checkpoint: shape mismatch for " +
                                 e.name);
      }
      it->second->data = std::move(buf);
      by_name.erase(it);
    } else if (e.name.rfind("opt.", 0) == 0) {
      extra[e.name] = std::move(buf);
    } else {
      throw std::runtime_error("load_checkpoint: unknown tensor " + e.name);
    }
  }
  if (!by_name.empty()) {
    throw std::runtime_error("load_checkpoint: missing tensor " +
                             by_name.begin()->first);
  }

  if (opt && opt->dense && opt->user && opt->item && !extra.empty()) {
    const auto pull = [&](const std::string& name) -> std::vector<float> {
      const auto it = extra.find(name);
      if (it == extra.end()) {
        throw std::runtime_error("load_checkpoint: missing state " + name);
      }
      return it->second;
    };
    const auto& dense_params = opt->dense->params();
    for (std::size_t i = 0; i < dense_params.size(); ++i) {
      const std::string base = "opt.dense." + std::to_string(i);
      opt->dense->moment1(i) = pull(base + ".m1");
      opt->dense->moment2(i) = pull(base + ".m2");
    }
    opt->dense->set_step_count(
        static_cast<std::int64_t>(pull("opt.dense.step")[0]));
    const auto sparse = [&](const char* tag, SparseAdam<float>* sa) {
      const std::string base = std::string("opt.") + tag;
      sa->moment1() = pull(base + ".m1");
      sa->moment2() = pull(base + ".m2");
      const auto steps = pull(base + ".steps");
      auto& row_t = sa->row_steps();
      for (std::size_t i = 0; i < row_t.size(); ++i) {
        row_t[i] = static_cast<std::int64_t>(steps[i]);
      }
    };
    sparse("user", opt->user);
    sparse("item", opt->item);
  }
  return model;
}

}  // namespace parsrec
