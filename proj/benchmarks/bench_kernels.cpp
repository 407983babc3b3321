#include <benchmark/benchmark.h>

#include "ramit/ops.hpp"
#include "ramit/rng.hpp"

namespace {

ramit::Tensor random_tensor(ramit::Shape shape, std::uint64_t seed) {
    ramit::Tensor t = ramit::Tensor::zeros(std::move(shape));
    ramit::Rng rng(seed);
    float* d = t.mutable_data();
    for (std::int64_t i = 0; i < t.numel(); ++i) d[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
    return t;
}

void MatmulTokens(benchmark::State& state) {
    std::int64_t n = state.range(0);
    ramit::Tensor a = random_tensor({n, 64}, 1);
    ramit::Tensor b = random_tensor({64, 192}, 2);
    for (auto _ : state) {
        auto c = ramit::matmul(a, b);
        benchmark::DoNotOptimize(const_cast<float*>(c.data()));
    }
    state.SetItemsProcessed(state.iterations() * n * 64 * 192);
}
BENCHMARK(MatmulTokens)->Arg(1024)->Arg(4096);

void Conv3x3Depthwise(benchmark::State& state) {
    std::int64_t hw = state.range(0);
    ramit::Tensor x = random_tensor({76, hw, hw}, 3);
    ramit::Tensor w = random_tensor({76, 1, 3, 3}, 4);
    ramit::Tensor b = random_tensor({76}, 5);
    for (auto _ : state) {
        auto y = ramit::conv2d(x, w, b, 76, 1);
        benchmark::DoNotOptimize(const_cast<float*>(y.data()));
    }
    state.SetItemsProcessed(state.iterations() * 9 * 76 * hw * hw);
}
BENCHMARK(Conv3x3Depthwise)->Arg(32)->Arg(64);

void SoftmaxRows(benchmark::State& state) {
    ramit::Tensor x = random_tensor({256, 64, 64}, 6);
    for (auto _ : state) {
        auto y = ramit::softmax(x, -1);
        benchmark::DoNotOptimize(const_cast<float*>(y.data()));
    }
}
BENCHMARK(SoftmaxRows);

}  // namespace
