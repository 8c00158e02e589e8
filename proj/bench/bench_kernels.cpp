// Serial reference vs OpenMP kernels at backbone-sized shapes.

#include <benchmark/benchmark.h>

#include <vector>

#include "cwt/kernels.hpp"
#include "cwt/rng.hpp"

namespace k = cwt::kernels;

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
  cwt::CounterRng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

// Conv as gemm: [out x C*9] times [C*9 x H*W].
template <bool Parallel>
void BM_gemm_conv(benchmark::State& state) {
  const std::size_t ch = static_cast<std::size_t>(state.range(0));
  const k::GemmDims d{ch, 32 * 32, ch * 9};
  const auto a = random_values(d.m * d.k, 1), b = random_values(d.k * d.n, 2);
  std::vector<double> c(d.m * d.n);
  for (auto _ : state) {
    if (Parallel) k::parallel::gemm(false, false, d, a, b, c, false);
    else k::serial::gemm(false, false, d, a, b, c, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GMAC/s"] = benchmark::Counter(static_cast<double>(d.m * d.n * d.k) * state.iterations(),
                                                benchmark::Counter::kIsRate);
}

template <bool Parallel>
void BM_im2col(benchmark::State& state) {
  const k::ConvGeom g{static_cast<std::size_t>(state.range(0)), 32, 32, 3};
  const auto image = random_values(g.channels * g.pixels(), 3);
  std::vector<double> cols(g.col_rows() * g.pixels());
  for (auto _ : state) {
    if (Parallel) k::parallel::im2col(g, image, cols);
    else k::serial::im2col(g, image, cols);
    benchmark::DoNotOptimize(cols.data());
  }
}

}  // namespace

BENCHMARK(BM_gemm_conv<false>)->Arg(16)->Arg(32)->Arg(64);
BENCHMARK(BM_gemm_conv<true>)->Arg(16)->Arg(32)->Arg(64);
BENCHMARK(BM_im2col<false>)->Arg(16)->Arg(64);
BENCHMARK(BM_im2col<true>)->Arg(16)->Arg(64);

BENCHMARK_MAIN();
