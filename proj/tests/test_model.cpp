#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include "parsrec/model.hpp"
#include "test_helpers.hpp"

using namespace parsrec;

namespace {

ModelConfig tiny_cfg() {
  ModelConfig cfg;
  cfg.n_items = 6;
  cfg.d_u = 4;
  cfg.d_v = 4;
  cfg.heads = 2;
  cfg.layers = 1;
  cfg.use_dropout = false;  // keep repeated forwards deterministic
  return cfg;
}

}  // namespace

TEST_CASE("init respects the embedding bounds and neutral layer norm") {
  ModelConfig cfg;
  cfg.n_items = 50;
  cfg.d_u = 8;
  cfg.d_v = 8;
  Rng rng(5);
  const auto m = init_model<double>(cfg, 100, rng);

  const double ub = 1.0 / std::sqrt(100.0);
  for (const double v : m.user_emb->data) {
    REQUIRE(v >= -ub);
    REQUIRE(v <= ub);
  }
  const double vb = 1.0 / std::sqrt(50.0);
  for (const double v : m.item_emb->data) {
    REQUIRE(v >= -vb);
    REQUIRE(v <= vb);
  }
  CHECK(m.item_emb->shape[0] == cfg.vocab());
  for (const double v : m.attn[0].ln_gain->data) CHECK(v == 1.0);
  for (const double v : m.attn[0].ln_bias->data) CHECK(v == 0.0);
  for (const double v : m.b1->data) CHECK(v == 0.0);

  // Dense matrices follow N(0, 2/(n+m)); check w3 (d_v x vocab) statistically.
  double sq = 0.0;
  for (const double v : m.w3->data) sq += v * v;
  const double want = 2.0 / (cfg.d_v + cfg.vocab());
  CHECK(sq / m.w3->data.size() == doctest::Approx(want).epsilon(0.15));
}

TEST_CASE("init rejects bad configurations") {
  Rng rng(1);
  ModelConfig cfg = tiny_cfg();
  cfg.n_items = 0;
  CHECK_THROWS(init_model<double>(cfg, 4, rng));
  cfg = tiny_cfg();
  cfg.dropout = 1.0;
  CHECK_THROWS(init_model<double>(cfg, 4, rng));
  CHECK_THROWS(init_model<double>(tiny_cfg(), 0, rng));
}

TEST_CASE("history_state is the mean of past item embeddings") {
  Rng rng(2);
  auto m = init_model<double>(tiny_cfg(), 3, rng);
  Tape<double>* no_tape = nullptr;

  const auto empty = history_state(no_tape, m, {});
  CHECK(empty->data == std::vector<double>(4, 0.0));

  // Hand-set two rows and compare against their average.
  for (int c = 0; c < 4; ++c) {
    m.item_emb->data[0 * 4 + c] = c + 1.0;  // item 0: 1 2 3 4
    m.item_emb->data[2 * 4 + c] = 3.0 - c;  // item 2: 3 2 1 0
  }
  const auto h = history_state(no_tape, m, {0, 2});
  CHECK(h->data == std::vector<double>{2.0, 2.0, 2.0, 2.0});
}

TEST_CASE("attention over a single key is the trivial distribution") {
  Rng rng(3), drop(4);
  const auto m = init_model<double>(tiny_cfg(), 3, rng);
  Tape<double>* no_tape = nullptr;
  const auto h = history_state(no_tape, m, {});
  const auto [out, rec] =
      attention_step(no_tape, m, 1, h, {m.cfg.sob()}, false, drop);
  REQUIRE(rec.head_rows.size() == 2);
  for (const auto& row : rec.head_rows) {
    REQUIRE(row.size() == 1);
    CHECK(row[0] == doctest::Approx(1.0));
  }
  CHECK(out->shape == std::vector<int>{1, 4});
}

TEST_CASE("zero query/key projections give uniform attention") {
  Rng rng(5), drop(6);
  auto m = init_model<double>(tiny_cfg(), 3, rng);
  for (auto& w : m.attn[0].wq) std::fill(w->data.begin(), w->data.end(), 0.0);
  Tape<double>* no_tape = nullptr;
  const auto h = history_state(no_tape, m, {1});
  const auto [out, rec] =
      attention_step(no_tape, m, 0, h, {m.cfg.sob(), 0, 3, 5}, false, drop);
  for (const auto& row : rec.head_rows) {
    REQUIRE(row.size() == 4);
    for (const double w : row) CHECK(w == doctest::Approx(0.25));
  }
}

TEST_CASE("attention rows always sum to one") {
  Rng rng(7), drop(8);
  const auto m = init_model<double>(tiny_cfg(), 3, rng);
  Tape<double>* no_tape = nullptr;
  const auto h = history_state(no_tape, m, {2, 4});
  const auto [out, rec] =
      attention_step(no_tape, m, 2, h, {m.cfg.sob(), 1, 2, 3, 4}, false, drop);
  for (const auto& row : rec.head_rows) {
    double s = 0.0;
    for (const double w : row) {
      REQUIRE(w >= 0.0);
      s += w;
    }
    CHECK(s == doctest::Approx(1.0));
  }
}

TEST_CASE("step logits are causal in the fed sequence") {
  Rng rng(9);
  const auto m = init_model<double>(tiny_cfg(), 3, rng);
  Tape<double>* no_tape = nullptr;
  const auto h = history_state(no_tape, m, {0, 5});

  Rng d1(11), d2(11);
  const auto a = forward_session(no_tape, m, 1, h, {2, 3, 4}, false, d1);
  const auto b = forward_session(no_tape, m, 1, h, {2, 3, 1}, false, d2);
  REQUIRE(a.logits.size() == 3);
  // Step j only sees [SOB, fed_0..fed_{j-1}]; the two runs diverge only in
  // the item fed after the last prediction, so all logits match bitwise.
  for (int j = 0; j < 3; ++j) CHECK(a.logits[j]->data == b.logits[j]->data);
  CHECK(a.prefixes[2] == std::vector<int>{m.cfg.sob(), 2, 3});
}

TEST_CASE("attention weights permute with the prefix") {
  Rng rng(13), d1(14), d2(14);
  const auto m = init_model<double>(tiny_cfg(), 3, rng);
  Tape<double>* no_tape = nullptr;
  const auto h = history_state(no_tape, m, {1});
  const auto [o1, r1] = attention_step(no_tape, m, 0, h, {0, 3, 5}, false, d1);
  const auto [o2, r2] = attention_step(no_tape, m, 0, h, {5, 0, 3}, false, d2);
  for (std::size_t hd = 0; hd < r1.head_rows.size(); ++hd) {
    auto s1 = r1.head_rows[hd];
    auto s2 = r2.head_rows[hd];
    std::sort(s1.begin(), s1.end());
    std::sort(s2.begin(), s2.end());
    for (std::size_t i = 0; i < s1.size(); ++i) {
      CHECK(s1[i] == doctest::Approx(s2[i]).epsilon(1e-12));
    }
  }
  // The attended value is a weighted sum over the same set, so it matches too.
  for (std::size_t i = 0; i < o1->data.size(); ++i) {
    CHECK(o1->data[i] == doctest::Approx(o2->data[i]).epsilon(1e-10));
  }
}

TEST_CASE("logits depend on the user") {
  Rng rng(15), d1(16), d2(16);
  const auto m = init_model<double>(tiny_cfg(), 3, rng);
  Tape<double>* no_tape = nullptr;
  const auto h = history_state(no_tape, m, {});
  const auto a = forward_session(no_tape, m, 0, h, {2}, false, d1);
  const auto b = forward_session(no_tape, m, 1, h, {2}, false, d2);
  CHECK(a.logits[0]->data != b.logits[0]->data);
}

TEST_CASE("end-to-end session gradients match finite differences") {
  ModelConfig cfg = tiny_cfg();
  cfg.layers = 2;          // exercise the self-attention sublayer
  cfg.ffn_pre_rnn = true;
  cfg.ffn_post_rnn = true;
  Rng rng(17);
  const auto m = init_model<double>(cfg, 3, rng);

  const std::vector<int> past{0, 4};
  const std::vector<int> fed{2, 5, 1};
  const std::vector<int> targets{2, 5, cfg.eob()};

  const auto forward = [&](Tape<double>& tape) {
    Rng drop(1);
    const auto h = history_state(&tape, m, past);
    const auto fwd = forward_session(&tape, m, 1, h, fed, true, drop);
    return session_loss(&tape, m, fwd, targets);
  };
  CHECK(parsrec::testing::gradient_check<double>(m.all_params(), forward) <
        1e-4);
}

TEST_CASE("session_loss ignores EOB steps and validates shapes") {
  Rng rng(19), drop(20);
  const auto m = init_model<double>(tiny_cfg(), 3, rng);
  Tape<double> tape;
  const auto h = history_state(&tape, m, {});
  const auto fwd = forward_session(&tape, m, 0, h, {1, 2}, false, drop);

  CHECK_THROWS(session_loss(&tape, m, fwd, {1}));
  CHECK_THROWS(session_loss(&tape, m, fwd,
                            std::vector<int>{m.cfg.eob(), m.cfg.eob()}));

  // With one real target the mean equals that step's cross entropy.
  const auto loss = session_loss(&tape, m, fwd, {1, m.cfg.eob()});
  const auto& row = fwd.logits[0]->data;
  double mx = row[0];
  for (const double v : row) mx = std::max(mx, v);
  double z = 0.0;
  for (const double v : row) z += std::exp(v - mx);
  const double want = -(row[1] - mx - std::log(z));
  CHECK(loss->data[0] == doctest::Approx(want));
}
