#include <benchmark/benchmark.h>

#include "exdrop/autodiff.hpp"
#include "exdrop/encoder.hpp"
#include "exdrop/matrix.hpp"
#include "exdrop/oracle.hpp"
#include "exdrop/regularizers.hpp"
#include "exdrop/rng.hpp"

using namespace exdrop;

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

void bm_matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Matrix a = random_matrix(n, n, rng);
  const Matrix b = random_matrix(n, n, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(matmul(a, b));
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(bm_matmul)->Arg(16)->Arg(32)->Arg(64)->Arg(128)->Complexity();

void bm_closed_form_B(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  const Matrix x = random_matrix(n, 32, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(closed_form_B(x, 0.2));
  }
}
BENCHMARK(bm_closed_form_B)->Arg(8)->Arg(64)->Arg(256);

void bm_reg_query(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  const Matrix x = random_matrix(16, d, rng);
  const Matrix wq = random_matrix(d, d, rng);
  const Matrix wk = random_matrix(d, d, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(reg_query(x, wq, wk, 0.2));
  }
}
BENCHMARK(bm_reg_query)->Arg(16)->Arg(32)->Arg(64);

void bm_reg_value_attention(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(4);
  const Matrix x = random_matrix(n, 32, rng);
  const Matrix wv = random_matrix(32, 32, rng);
  const Matrix a = row_softmax(random_matrix(n, n, rng));
  for (auto _ : state) {
    benchmark::DoNotOptimize(reg_value_attention(x, a, wv, 0.2));
  }
}
BENCHMARK(bm_reg_value_attention)->Arg(8)->Arg(32)->Arg(128);

void bm_decompose(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  Rng rng(5);
  const Matrix x = random_matrix(16, d, rng);
  const Matrix w = random_matrix(d, d, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(decompose(x, w, 0.2));
  }
}
BENCHMARK(bm_decompose)->Arg(16)->Arg(32)->Arg(64);

void bm_mask_sampling(benchmark::State& state) {
  const auto n_t = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(sample_masks(8, 16, 0.2, n_t, 42));
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(n_t));
}
BENCHMARK(bm_mask_sampling)->Arg(100)->Arg(1000)->Arg(10000);

void bm_empirical_B(benchmark::State& state) {
  const auto n_t = static_cast<std::size_t>(state.range(0));
  Rng data_rng(6);
  const Matrix x = random_matrix(8, 16, data_rng);
  for (auto _ : state) {
    Rng rng(7);
    benchmark::DoNotOptimize(empirical_B(x, 0.2, n_t, rng));
  }
}
BENCHMARK(bm_empirical_B)->Arg(100)->Arg(1000)->Arg(10000);

EncoderConfig bench_encoder_config() {
  EncoderConfig cfg;
  cfg.layers = 2;
  cfg.dim = 32;
  cfg.ff_dim = 64;
  cfg.heads = 4;
  cfg.tokens = 8;
  cfg.token_dim = 16;
  cfg.classes = 2;
  return cfg;
}

void bm_encoder_forward(benchmark::State& state) {
  const EncoderConfig cfg = bench_encoder_config();
  Rng init_rng(8);
  const EncoderParams params = init_encoder(cfg, init_rng);
  Rng data_rng(9);
  const Matrix tokens = random_matrix(cfg.tokens, cfg.token_dim, data_rng);
  const DropoutPlacement off;
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        encoder_forward<Matrix>(tokens, params, cfg, off, false, nullptr));
  }
}
BENCHMARK(bm_encoder_forward);

void bm_encoder_train_step(benchmark::State& state) {
  const EncoderConfig cfg = bench_encoder_config();
  Rng init_rng(10);
  const EncoderParams params = init_encoder(cfg, init_rng);
  Rng data_rng(11);
  const Matrix tokens = random_matrix(cfg.tokens, cfg.token_dim, data_rng);
  const DropoutPlacement off;
  for (auto _ : state) {
    EncoderVars vars = lift_params(params);
    const auto fwd =
        encoder_forward<Var>(lift<Var>(tokens), vars, cfg, off, false, nullptr);
    Var loss = softmax_cross_entropy(fwd.logits, std::vector<int>{0});
    backward(loss);
    benchmark::DoNotOptimize(vars.layers[0].w_q.grad());
  }
}
BENCHMARK(bm_encoder_train_step);

}  // namespace

BENCHMARK_MAIN();
