#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "xlan/kernels.hpp"
#include "xlan/training.hpp"

using namespace xlan;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> v(n);
  for (auto& x : v) x = u(g);
  return v;
}

template <bool Parallel>
void BM_gemm_nn(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_vec(n * n, 1), b = random_vec(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::parallel::gemm_nn(n, n, n, a, b, c, false, 0);
    else
      kernels::serial::gemm_nn(n, n, n, a, b, c, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

template <bool Parallel>
void BM_gemm_nt(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_vec(n * n, 3), b = random_vec(n * n, 4);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::parallel::gemm_nt(n, n, n, a, b, c, false, 0);
    else
      kernels::serial::gemm_nt(n, n, n, a, b, c, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

// One CE training batch on the default toy task and model size.
template <Exec E>
void BM_batch_gradients(benchmark::State& state) {
  ToyTaskSpec spec;
  spec.train = 64;
  spec.val = 1;
  spec.test = 1;
  const Dataset data = make_dataset(gen_toy_dataset(spec), 1);
  ModelConfig mc;
  mc.feature_dim = data.feature_dim();
  mc.vocab_size = data.vocab.size();
  auto model = XLanModel::create(mc, 3);
  const auto batch_size = static_cast<std::size_t>(state.range(0));
  std::vector<const Example*> batch;
  for (std::size_t i = 0; i < batch_size; ++i) batch.push_back(&data.train[i]);
  const ItemLoss loss = [](const XLanModel& m, const Example& ex, std::size_t) { return caption_loss(m, ex); };
  for (auto _ : state) benchmark::DoNotOptimize(batch_gradients(model, batch, loss, E));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch_size));
}

}  // namespace

BENCHMARK(BM_gemm_nn<false>)->Name("gemm_nn/serial")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_gemm_nn<true>)->Name("gemm_nn/parallel")->RangeMultiplier(2)->Range(32, 256)->UseRealTime();
BENCHMARK(BM_gemm_nt<false>)->Name("gemm_nt/serial")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_gemm_nt<true>)->Name("gemm_nt/parallel")->RangeMultiplier(2)->Range(32, 256)->UseRealTime();
BENCHMARK(BM_batch_gradients<Exec::serial>)->Name("batch_gradients/serial")->Arg(16)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_batch_gradients<Exec::parallel>)
    ->Name("batch_gradients/parallel")
    ->Arg(16)
    ->Unit(benchmark::kMillisecond)
    ->UseRealTime();

BENCHMARK_MAIN();
