#include <benchmark/benchmark.h>

#include <vector>

#include "sigrec/nn.hpp"
#include "sigrec/rng.hpp"

using namespace sigrec;

namespace {

MatXf random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  MatXf m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r)
      m(r, c) = static_cast<float>(rng.uniform(-0.5, 0.5));
  return m;
}

/// One batched recurrent cell step at production width.
void BM_GruCellForward(benchmark::State& state) {
  const int d = 128, h = 256;
  const auto batch = static_cast<Eigen::Index>(state.range(0));
  Rng rng(1);
  const auto params = nn::GruParams<float>::glorot(d, h, rng);
  const MatXf x = random_matrix(d, batch, rng);
  const MatXf h_prev = random_matrix(h, batch, rng);
  for (auto _ : state) {
    auto [h_next, cache] = nn::gru_cell_forward(x, h_prev, params);
    benchmark::DoNotOptimize(h_next.data());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_GruCellForward)->Arg(1)->Arg(32)->Arg(128);

/// Full forward over a 40-instruction window (160 token steps).
void BM_GruSequenceForward(benchmark::State& state) {
  const int d = 128, h = 256;
  const Eigen::Index steps = 160;
  const auto batch = static_cast<Eigen::Index>(state.range(0));
  Rng rng(1);
  const auto params = nn::GruParams<float>::glorot(d, h, rng);
  std::vector<MatXf> xs(static_cast<std::size_t>(steps));
  for (auto& x : xs) x = random_matrix(d, batch, rng);
  const std::vector<Eigen::Index> lengths(static_cast<std::size_t>(batch),
                                          steps);
  const bool want_cache = state.range(1) != 0;
  for (auto _ : state) {
    auto result = nn::gru_sequence_forward(xs, lengths, params, want_cache);
    benchmark::DoNotOptimize(result.h_final.data());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_GruSequenceForward)
    ->ArgsProduct({{1, 32}, {0, 1}})
    ->ArgNames({"batch", "cache"});

/// Classification head: affine map plus softmax.
void BM_DenseSoftmaxForward(benchmark::State& state) {
  const int h = 256, k = 12;
  const auto batch = static_cast<Eigen::Index>(state.range(0));
  Rng rng(1);
  const auto params = nn::DenseParams<float>::glorot(h, k, rng);
  const MatXf hidden = random_matrix(h, batch, rng);
  for (auto _ : state) {
    MatXf probs = nn::dense_softmax_forward(hidden, params);
    benchmark::DoNotOptimize(probs.data());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_DenseSoftmaxForward)->Arg(1)->Arg(128);

}  // namespace

BENCHMARK_MAIN();
