#include <random>

#include <benchmark/benchmark.h>

#include "trackcentre/kernels.hpp"

using namespace trackcentre;

namespace {

Matrix filled(std::size_t r, std::size_t c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    Matrix m(r, c);
    for (double& v : m.data) v = g(rng);
    return m;
}

// args: rows, inner, cols
template <void (*F)(const Matrix&, const Matrix&, Matrix&)>
void product(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0)), k = static_cast<std::size_t>(state.range(1)),
               m = static_cast<std::size_t>(state.range(2));
    const Matrix a = filled(n, k, 1), b = filled(k, m, 2);
    Matrix out;
    for (auto _ : state) {
        F(a, b, out);
        benchmark::DoNotOptimize(out.data.data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * k * m));
}

template <void (*F)(const Matrix&, const Matrix&, Matrix&)>
void product_bt(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0)), k = static_cast<std::size_t>(state.range(1)),
               m = static_cast<std::size_t>(state.range(2));
    const Matrix a = filled(n, k, 1), b = filled(m, k, 2);
    Matrix out;
    for (auto _ : state) {
        F(a, b, out);
        benchmark::DoNotOptimize(out.data.data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * k * m));
}

template <void (*F)(const Matrix&, const Matrix&, Matrix&)>
void product_at(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0)), k = static_cast<std::size_t>(state.range(1)),
               m = static_cast<std::size_t>(state.range(2));
    const Matrix a = filled(n, k, 1), b = filled(n, m, 2);
    Matrix out(k, m);
    for (auto _ : state) {
        F(a, b, out);
        benchmark::DoNotOptimize(out.data.data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * k * m));
}

template <Matrix (*F)(const Matrix&)>
void distances(benchmark::State& state) {
    const Matrix p = filled(static_cast<std::size_t>(state.range(0)), 32, 3);
    for (auto _ : state) benchmark::DoNotOptimize(F(p));
}

// Encoder-sized shapes (41 tokens, d=32, FFN 128) and larger ones where threads pay off.
void shapes(benchmark::internal::Benchmark* b) {
    b->Args({41, 32, 32})->Args({41, 32, 128})->Args({41, 128, 32})->Args({256, 256, 256})->Args({512, 512, 512});
}

}  // namespace

BENCHMARK(product<kernels::gemm>)->Apply(shapes)->Name("gemm/omp");
BENCHMARK(product<kernels::serial::gemm>)->Apply(shapes)->Name("gemm/serial");
BENCHMARK(product_bt<kernels::gemm_bt>)->Apply(shapes)->Name("gemm_bt/omp");
BENCHMARK(product_bt<kernels::serial::gemm_bt>)->Apply(shapes)->Name("gemm_bt/serial");
BENCHMARK(product_at<kernels::gemm_at_acc>)->Apply(shapes)->Name("gemm_at_acc/omp");
BENCHMARK(product_at<kernels::serial::gemm_at_acc>)->Apply(shapes)->Name("gemm_at_acc/serial");
BENCHMARK(distances<kernels::pairwise_distances>)->Arg(100)->Arg(1000)->Name("pairwise_distances/omp");
BENCHMARK(distances<kernels::serial::pairwise_distances>)->Arg(100)->Arg(1000)->Name("pairwise_distances/serial");

int main(int argc, char** argv) {
    kernels::apply_thread_env();
    benchmark::Initialize(&argc, argv);
    if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
    benchmark::RunSpecifiedBenchmarks();
    benchmark::Shutdown();
    return 0;
}
