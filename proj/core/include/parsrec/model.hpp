// The attention-fused recurrent recommender: user/item embeddings,
// multi-head attention whose query concatenates the user embedding with the
// recurrent hidden state, a ReLU recurrent update, and a linear prediction
// head over the item vocabulary plus SOB/EOB tokens.
//
// Templated on the scalar type so the same code path can be gradient-checked
// in double precision.

#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "parsrec/rng.hpp"
#include "parsrec/tensor.hpp"

namespace parsrec {

struct ModelConfig {
  int n_items = 0;   // real item vocabulary, excluding SOB/EOB
  int d_u = 32;
  int d_v = 32;
  int heads = 2;
  int layers = 1;
  double dropout = 0.1;

  // Ablation switches (defaults are the full model).
  bool use_ln = true;
  bool use_dropout = true;
  bool add_q_at_ln = true;   // residual h_j added before layer norm
  bool ffn_pre_rnn = false;
  bool ffn_post_rnn = false;

  int vocab() const { return n_items + 2; }
  int sob() const { return n_items; }
  int eob() const { return n_items + 1; }
  int d_q() const { return d_u + d_v; }
  int d_k() const { return d_v; }

  void check() const {
    if (n_items < 1) throw std::invalid_argument("ModelConfig: n_items < 1");
    if (heads < 1) throw std::invalid_argument("ModelConfig: heads < 1");
    if (layers < 1) throw std::invalid_argument("ModelConfig: layers < 1");
    if (d_u < 1 || d_v < 2) throw std::invalid_argument("ModelConfig: bad dims");
    if (dropout < 0.0 || dropout >= 1.0) {
      throw std::invalid_argument("ModelConfig: dropout out of [0,1)");
    }
  }

  bool operator==(const ModelConfig&) const = default;
};

// Heads project at full query width. Lower layers (when layers > 1) are
// self-attention over the prefix with query width d_v; the top layer uses
// the user-state query of width d_u + d_v.
template <class T>
struct AttentionLayer {
  std::vector<TensorPtr<T>> wq, wk, wv;  // one per head
  TensorPtr<T> wo;
  TensorPtr<T> ln_gain, ln_bias;
};

template <class T>
struct FfnBlock {
  TensorPtr<T> w1, b1, w2, b2;
};

template <class T>
struct ParsRecModel {
  ModelConfig cfg;
  int n_users = 0;

  TensorPtr<T> user_emb;  // n_users x d_u
  TensorPtr<T> item_emb;  // (n_items + 2) x d_v, SOB/EOB rows appended
  std::vector<AttentionLayer<T>> attn;  // attn.back() is the user-query layer
  TensorPtr<T> w1, w2, b1;              // recurrent update
  TensorPtr<T> w3, w4, b2;              // prediction head
  std::unique_ptr<FfnBlock<T>> ffn_pre, ffn_post;

  // Deterministic (name, tensor) enumeration; drives checkpoints.
  std::vector<std::pair<std::string, TensorPtr<T>>> named_params() const {
    std::vector<std::pair<std::string, TensorPtr<T>>> out;
    out.emplace_back("user_emb", user_emb);
    out.emplace_back("item_emb", item_emb);
    for (std::size_t l = 0; l < attn.size(); ++l) {
      const std::string p = "attn" + std::to_string(l) + ".";
      for (std::size_t h = 0; h < attn[l].wq.size(); ++h) {
        const std::string hp = p + "head" + std::to_string(h) + ".";
        out.emplace_back(hp + "wq", attn[l].wq[h]);
        out.emplace_back(hp + "wk", attn[l].wk[h]);
        out.emplace_back(hp + "wv", attn[l].wv[h]);
      }
      out.emplace_back(p + "wo", attn[l].wo);
      out.emplace_back(p + "ln_gain", attn[l].ln_gain);
      out.emplace_back(p + "ln_bias", attn[l].ln_bias);
    }
    out.emplace_back("w1", w1);
    out.emplace_back("w2", w2);
    out.emplace_back("b1", b1);
    out.emplace_back("w3", w3);
    out.emplace_back("w4", w4);
    out.emplace_back("b2", b2);
    if (ffn_pre) {
      out.emplace_back("ffn_pre.w1", ffn_pre->w1);
      out.emplace_back("ffn_pre.b1", ffn_pre->b1);
      out.emplace_back("ffn_pre.w2", ffn_pre->w2);
      out.emplace_back("ffn_pre.b2", ffn_pre->b2);
    }
    if (ffn_post) {
      out.emplace_back("ffn_post.w1", ffn_post->w1);
      out.emplace_back("ffn_post.b1", ffn_post->b1);
      out.emplace_back("ffn_post.w2", ffn_post->w2);
      out.emplace_back("ffn_post.b2", ffn_post->b2);
    }
    return out;
  }

  // Everything the dense Adam owns (embeddings go to sparse Adam).
  std::vector<TensorPtr<T>> dense_params() const {
    std::vector<TensorPtr<T>> out;
    for (const auto& [name, t] : named_params()) {
      if (t != user_emb && t != item_emb) out.push_back(t);
    }
    return out;
  }

  std::vector<TensorPtr<T>> all_params() const {
    std::vector<TensorPtr<T>> out;
    for (const auto& [name, t] : named_params()) out.push_back(t);
    return out;
  }
};

namespace detail {

template <class T>
TensorPtr<T> init_gaussian(int n, int m, Rng& rng) {
  auto t = make_tensor<T>({n, m}, true);
  const double std = std::sqrt(2.0 / (n + m));
  for (auto& v : t->data) v = static_cast<T>(std * rng.normal());
  return t;
}

template <class T>
TensorPtr<T> init_uniform_rows(int n, int m, double bound, Rng& rng) {
  auto t = make_tensor<T>({n, m}, true);
  for (auto& v : t->data) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <class T>
std::unique_ptr<FfnBlock<T>> init_ffn(int d, Rng& rng) {
  auto f = std::make_unique<FfnBlock<T>>();
  f->w1 = init_gaussian<T>(d, d, rng);
  f->b1 = make_tensor<T>({1, d}, true);
  f->w2 = init_gaussian<T>(d, d, rng);
  f->b2 = make_tensor<T>({1, d}, true);
  return f;
}

}  // namespace detail

template <class T>
ParsRecModel<T> init_model(const ModelConfig& cfg, int n_users, Rng& rng) {
  cfg.check();
  if (n_users < 1) throw std::invalid_argument("init_model: n_users < 1");
  ParsRecModel<T> m;
  m.cfg = cfg;
  m.n_users = n_users;
  m.user_emb = detail::init_uniform_rows<T>(n_users, cfg.d_u,
                                            1.0 / std::sqrt(n_users), rng);
  m.item_emb = detail::init_uniform_rows<T>(cfg.vocab(), cfg.d_v,
                                            1.0 / std::sqrt(cfg.n_items), rng);
  for (int l = 0; l < cfg.layers; ++l) {
    const bool top = l == cfg.layers - 1;
    const int dq = top ? cfg.d_q() : cfg.d_v;  // head projection width
    AttentionLayer<T> layer;
    for (int h = 0; h < cfg.heads; ++h) {
      layer.wq.push_back(detail::init_gaussian<T>(top ? cfg.d_q() : cfg.d_v, dq, rng));
      layer.wk.push_back(detail::init_gaussian<T>(cfg.d_v, dq, rng));
      layer.wv.push_back(detail::init_gaussian<T>(cfg.d_v, dq, rng));
    }
    layer.wo = detail::init_gaussian<T>(cfg.heads * dq, cfg.d_v, rng);
    layer.ln_gain = make_tensor<T>({1, cfg.d_v}, true);
    for (auto& v : layer.ln_gain->data) v = T(1);
    layer.ln_bias = make_tensor<T>({1, cfg.d_v}, true);
    m.attn.push_back(std::move(layer));
  }
  m.w1 = detail::init_gaussian<T>(cfg.d_v, cfg.d_v, rng);
  m.w2 = detail::init_gaussian<T>(cfg.d_q(), cfg.d_v, rng);
  m.b1 = make_tensor<T>({1, cfg.d_v}, true);
  m.w3 = detail::init_gaussian<T>(cfg.d_v, cfg.vocab(), rng);
  m.w4 = detail::init_gaussian<T>(cfg.d_q(), cfg.vocab(), rng);
  m.b2 = make_tensor<T>({1, cfg.vocab()}, true);
  if (cfg.ffn_pre_rnn) m.ffn_pre = detail::init_ffn<T>(cfg.d_v, rng);
  if (cfg.ffn_post_rnn) m.ffn_post = detail::init_ffn<T>(cfg.d_v, rng);
  return m;
}

// Mean of the embeddings of all items across the user's past sessions; an
// empty history maps to the zero vector.
template <class T>
TensorPtr<T> history_state(Tape<T>* tape, const ParsRecModel<T>& model,
                           const std::vector<int>& past_items) {
  if (past_items.empty()) {
    // Constant zero; nothing to differentiate.
    return make_tensor<T>({1, model.cfg.d_v});
  }
  auto rows = embedding_lookup(tape, model.item_emb, past_items);
  return mean_rows(tape, rows);
}

// Per-step attention record: one weight row per head over the prefix.
template <class T>
struct AttentionRecord {
  std::vector<std::vector<T>> head_rows;
};

namespace detail {

template <class T>
TensorPtr<T> apply_ffn(Tape<T>* tape, const FfnBlock<T>& f,
                       const TensorPtr<T>& x) {
  auto hidden = relu(tape, add_rowvec(tape, matmul(tape, x, f.w1), f.b1));
  return add_rowvec(tape, matmul(tape, hidden, f.w2), f.b2);
}

// One self-attention sublayer over the prefix representations (used by the
// lower layers when cfg.layers > 1).
template <class T>
TensorPtr<T> self_attention_layer(Tape<T>* tape, const ParsRecModel<T>& model,
                                  const AttentionLayer<T>& layer,
                                  const TensorPtr<T>& x, bool training,
                                  Rng& dropout_rng) {
  const auto& cfg = model.cfg;
  const T inv_sqrt_dk = static_cast<T>(1.0 / std::sqrt(cfg.d_k()));
  std::vector<TensorPtr<T>> heads;
  for (int h = 0; h < cfg.heads; ++h) {
    auto q = matmul(tape, x, layer.wq[static_cast<std::size_t>(h)]);
    auto k = matmul(tape, x, layer.wk[static_cast<std::size_t>(h)]);
    auto v = matmul(tape, x, layer.wv[static_cast<std::size_t>(h)]);
    auto scores = scale(tape, matmul_nt(tape, q, k), inv_sqrt_dk);
    auto weights = row_softmax(tape, scores);
    heads.push_back(matmul(tape, weights, v));
  }
  auto merged = matmul(tape, concat_cols(tape, heads), layer.wo);
  if (cfg.use_dropout) {
    merged = dropout(tape, merged, cfg.dropout, training, dropout_rng);
  }
  auto res = add(tape, merged, x);
  if (cfg.use_ln) res = layer_norm(tape, res, layer.ln_gain, layer.ln_bias);
  return res;
}

}  // namespace detail

// Attention over the fed prefix with query Q = concat(E^U_u, h_j). Returns
// the d_v-wide attention output and the final-layer per-head weight rows.
template <class T>
std::pair<TensorPtr<T>, AttentionRecord<T>> attention_step(
    Tape<T>* tape, const ParsRecModel<T>& model, int user,
    const TensorPtr<T>& h_state, const std::vector<int>& prefix, bool training,
    Rng& dropout_rng) {
  const auto& cfg = model.cfg;
  if (prefix.empty()) throw std::invalid_argument("attention_step: empty prefix");

  auto x = embedding_lookup(tape, model.item_emb, prefix);  // n x d_v
  for (int l = 0; l + 1 < cfg.layers; ++l) {
    x = detail::self_attention_layer(tape, model,
                                     model.attn[static_cast<std::size_t>(l)], x,
                                     training, dropout_rng);
  }

  const auto& top = model.attn.back();
  auto e_user = embedding_lookup(tape, model.user_emb, {user});  // 1 x d_u
  auto q_full = concat_cols(tape, {e_user, h_state});            // 1 x d_q
  const T inv_sqrt_dk = static_cast<T>(1.0 / std::sqrt(cfg.d_k()));

  AttentionRecord<T> record;
  std::vector<TensorPtr<T>> heads;
  for (int h = 0; h < cfg.heads; ++h) {
    auto q = matmul(tape, q_full, top.wq[static_cast<std::size_t>(h)]);
    auto k = matmul(tape, x, top.wk[static_cast<std::size_t>(h)]);
    auto v = matmul(tape, x, top.wv[static_cast<std::size_t>(h)]);
    auto scores = scale(tape, matmul_nt(tape, q, k), inv_sqrt_dk);
    auto weights = row_softmax(tape, scores);  // 1 x n
    record.head_rows.push_back(weights->data);
    heads.push_back(matmul(tape, weights, v));  // 1 x d_q
  }
  auto v_raw = matmul(tape, concat_cols(tape, heads), top.wo);  // 1 x d_v
  if (cfg.use_dropout) {
    v_raw = dropout(tape, v_raw, cfg.dropout, training, dropout_rng);
  }
  if (cfg.add_q_at_ln) v_raw = add(tape, v_raw, h_state);
  if (cfg.use_ln) v_raw = layer_norm(tape, v_raw, top.ln_gain, top.ln_bias);
  return {v_raw, std::move(record)};
}

// Recurrent update and prediction head. Accepts batched inputs (m rows).
template <class T>
std::pair<TensorPtr<T>, TensorPtr<T>> arnn_step(Tape<T>* tape,
                                                const ParsRecModel<T>& model,
                                                const TensorPtr<T>& v_tilde,
                                                const TensorPtr<T>& h_tilde) {
  TensorPtr<T> v = v_tilde;
  if (model.ffn_pre) v = detail::apply_ffn(tape, *model.ffn_pre, v);
  auto pre = add_rowvec(
      tape, add(tape, matmul(tape, v, model.w1), matmul(tape, h_tilde, model.w2)),
      model.b1);
  auto h_next = relu(tape, pre);
  if (model.ffn_post) h_next = detail::apply_ffn(tape, *model.ffn_post, h_next);
  auto logits = add_rowvec(
      tape, add(tape, matmul(tape, v, model.w3), matmul(tape, h_tilde, model.w4)),
      model.b2);
  return {h_next, logits};
}

template <class T>
struct SessionForward {
  std::vector<TensorPtr<T>> logits;            // one 1 x vocab row per step
  std::vector<AttentionRecord<T>> attention;   // final-layer weights per step
  std::vector<std::vector<int>> prefixes;      // prefix used at each step
};

// Unrolls a session over a predetermined fed sequence v'_1..v'_n. Step j
// sees the prefix [SOB, v'_1..v'_j] only, so logits_j is causal.
template <class T>
SessionForward<T> forward_session(Tape<T>* tape, const ParsRecModel<T>& model,
                                  int user, const TensorPtr<T>& history,
                                  const std::vector<int>& fed_sequence,
                                  bool training, Rng& dropout_rng) {
  SessionForward<T> out;
  std::vector<int> prefix{model.cfg.sob()};
  TensorPtr<T> h = history;
  for (std::size_t j = 0; j < fed_sequence.size(); ++j) {
    auto e_user = attention_step(tape, model, user, h, prefix, training,
                                 dropout_rng);
    auto q = concat_cols<T>(tape, {embedding_lookup(tape, model.user_emb, {user}),
                                   h});
    auto [h_next, logits] = arnn_step(tape, model, e_user.first, q);
    out.logits.push_back(logits);
    out.attention.push_back(std::move(e_user.second));
    out.prefixes.push_back(prefix);
    h = h_next;
    prefix.push_back(fed_sequence[j]);
  }
  return out;
}

// Mean cross-entropy over the non-EOB steps of one session.
template <class T>
TensorPtr<T> session_loss(Tape<T>* tape, const ParsRecModel<T>& model,
                          const SessionForward<T>& fwd,
                          const std::vector<int>& targets) {
  if (fwd.logits.size() != targets.size()) {
    throw std::invalid_argument("session_loss: step count mismatch");
  }
  std::vector<TensorPtr<T>> sums;
  int total = 0;
  for (std::size_t j = 0; j < targets.size(); ++j) {
    int count = 0;
    sums.push_back(cross_entropy_sum(tape, fwd.logits[j],
                                     std::vector<int>{targets[j]},
                                     model.cfg.eob(), &count));
    total += count;
  }
  if (total == 0) throw std::invalid_argument("session_loss: all steps padded");
  return scale(tape, add_n(tape, sums), static_cast<T>(1.0 / total));
}

}  // namespace parsrec
