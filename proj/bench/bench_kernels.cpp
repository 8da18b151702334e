// Serial reference kernels against their OpenMP versions at the shapes the
// MLP and CNN actually run. Set OMP_NUM_THREADS to vary the parallel side.
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "aggnn/kernels.hpp"

namespace k = aggnn::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// batch 128 through the 3072 -> 128 projection
template <auto Gemm>
void BM_gemm(benchmark::State& state) {
  const std::size_t m = 128, kk = 3072, n = 128;
  const auto a = random_vec(m * kk, 1), b = random_vec(kk * n, 2);
  std::vector<double> c(m * n);
  for (auto _ : state) {
    Gemm(a, b, c, m, kk, n, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * 2 * m * kk * n));
}

template <auto Conv>
void BM_conv(benchmark::State& state) {
  const k::ConvDims d{16, 64, 64, 32, 32};
  const auto x = random_vec(d.batch * d.in_channels * d.height * d.width, 3);
  const auto w = random_vec(d.out_channels * d.in_channels * 9, 4), b = random_vec(d.out_channels, 5);
  std::vector<double> y(d.batch * d.out_channels * d.height * d.width);
  for (auto _ : state) {
    Conv(d, x, w, b, y);
    benchmark::DoNotOptimize(y.data());
  }
}

struct AggSetup {
  std::size_t batch = 64, in = 128, out = 128;
  std::vector<double> x = random_vec(batch * in, 6), w = random_vec(out * in, 7), b = random_vec(out, 8);
  std::vector<double> p = random_vec(out, 9, 0.5, 2.0), ls = random_vec(out, 10, -0.5, 0.5);
  std::vector<double> mix = std::vector<double>(out * 3, 1.0 / 3.0);
  k::AggregationArgs args() const { return {batch, in, out, x, w, b, p, ls, mix}; }
};

template <auto Forward>
void BM_aggregate_forward(benchmark::State& state) {
  const AggSetup s;
  std::vector<double> y(s.batch * s.out);
  for (auto _ : state) {
    Forward(s.args(), y, {});
    benchmark::DoNotOptimize(y.data());
  }
}

template <auto Backward>
void BM_aggregate_backward(benchmark::State& state) {
  const AggSetup s;
  const auto dy = random_vec(s.batch * s.out, 11);
  std::vector<double> dx(s.x.size()), dw(s.w.size()), db(s.out), dp(s.out), dls(s.out), dmix(s.out * 3);
  for (auto _ : state) {
    Backward(s.args(), dy, k::AggregationGrads{dx, dw, db, dp, dls, dmix});
    benchmark::DoNotOptimize(dw.data());
  }
}

}  // namespace

BENCHMARK(BM_gemm<k::serial::gemm_nn>)->Name("gemm_nn/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_gemm<k::gemm_nn>)->Name("gemm_nn/parallel")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_gemm<k::serial::gemm_tn>)->Name("gemm_tn/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_gemm<k::gemm_tn>)->Name("gemm_tn/parallel")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_conv<k::serial::conv3x3_forward>)->Name("conv3x3_forward/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_conv<k::conv3x3_forward>)->Name("conv3x3_forward/parallel")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_aggregate_forward<k::serial::aggregate_forward>)
    ->Name("aggregate_forward/serial")
    ->Unit(benchmark::kMillisecond);
BENCHMARK(BM_aggregate_forward<k::aggregate_forward>)->Name("aggregate_forward/parallel")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_aggregate_backward<k::serial::aggregate_backward>)
    ->Name("aggregate_backward/serial")
    ->Unit(benchmark::kMillisecond);
BENCHMARK(BM_aggregate_backward<k::aggregate_backward>)
    ->Name("aggregate_backward/parallel")
    ->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
