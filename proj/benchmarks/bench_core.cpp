// Microbenchmarks for the training hot path: dense matmul forward/backward,
// one attention step, one batched recurrent step, and generator throughput.

#include <benchmark/benchmark.h>

#include <vector>

#include "parsrec/model.hpp"
#include "parsrec/rng.hpp"
#include "parsrec/synth.hpp"
#include "parsrec/tensor.hpp"

using namespace parsrec;

namespace {

TensorPtr<float> random_tensor(int r, int c, Rng& rng, bool grad) {
  auto t = make_tensor<float>({r, c}, grad);
  for (auto& v : t->data) v = static_cast<float>(rng.normal());
  return t;
}

void bm_matmul_forward(benchmark::State& state) {
  const int m = static_cast<int>(state.range(0));
  Rng rng(1);
  auto a = random_tensor(m, 64, rng, false);
  auto b = random_tensor(64, 2002, rng, false);
  for (auto _ : state) {
    auto out = matmul<float>(nullptr, a, b);
    benchmark::DoNotOptimize(out->data.data());
  }
  state.SetItemsProcessed(state.iterations() * int64_t(m) * 64 * 2002);
}

void bm_matmul_train_step(benchmark::State& state) {
  const int m = static_cast<int>(state.range(0));
  Rng rng(1);
  auto a = random_tensor(m, 64, rng, true);
  auto b = random_tensor(64, 2002, rng, true);
  for (auto _ : state) {
    Tape<float> tape;
    auto out = matmul(&tape, a, b);
    auto loss = sum_all(&tape, out);
    tape.backward(loss);
    benchmark::DoNotOptimize(a->grad.data());
  }
  state.SetItemsProcessed(state.iterations() * int64_t(m) * 64 * 2002);
}

ParsRecModel<float> bench_model() {
  ModelConfig cfg;
  cfg.n_items = 2000;
  Rng rng(7);
  return init_model<float>(cfg, 1024, rng);
}

void bm_attention_step(benchmark::State& state) {
  const auto model = bench_model();
  Rng drop(3);
  std::vector<int> prefix{model.cfg.sob()};
  for (int i = 0; i < 8; ++i) prefix.push_back(i * 13);
  auto h = make_tensor<float>({1, model.cfg.d_v}, false);
  for (auto _ : state) {
    auto [v, rec] = attention_step<float>(nullptr, model, 5, h, prefix,
                                          false, drop);
    benchmark::DoNotOptimize(v->data.data());
  }
}

void bm_arnn_step_batched(benchmark::State& state) {
  const int batch = static_cast<int>(state.range(0));
  const auto model = bench_model();
  Rng rng(5);
  auto v = random_tensor(batch, model.cfg.d_v, rng, false);
  auto q = random_tensor(batch, model.cfg.d_q(), rng, false);
  for (auto _ : state) {
    auto [h, logits] = arnn_step<float>(nullptr, model, v, q);
    benchmark::DoNotOptimize(logits->data.data());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}

void bm_synthesize(benchmark::State& state) {
  SynthConfig cfg;
  cfg.n_users = static_cast<int>(state.range(0));
  cfg.sessions_per_user = 20;
  for (auto _ : state) {
    const Dataset ds = synthesize(cfg);
    benchmark::DoNotOptimize(ds.sessions.size());
  }
  state.SetItemsProcessed(state.iterations() * int64_t(cfg.n_users) *
                          cfg.sessions_per_user);
}

BENCHMARK(bm_matmul_forward)->Arg(32)->Arg(256);
BENCHMARK(bm_matmul_train_step)->Arg(32)->Arg(256);
BENCHMARK(bm_attention_step);
BENCHMARK(bm_arnn_step_batched)->Arg(32)->Arg(256);
BENCHMARK(bm_synthesize)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
