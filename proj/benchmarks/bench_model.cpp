#include <benchmark/benchmark.h>

#include "ramit/model.hpp"
#include "ramit/rng.hpp"

namespace {

ramit::Tensor random_image(std::int64_t c, std::int64_t h, std::int64_t w, std::uint64_t seed) {
    ramit::Tensor t = ramit::Tensor::zeros({c, h, w});
    ramit::Rng rng(seed);
    float* d = t.mutable_data();
    for (std::int64_t i = 0; i < t.numel(); ++i) d[i] = static_cast<float>(rng.next_double());
    return t;
}

ramit::ModelConfig tiny_config() {
    ramit::ModelConfig cfg;
    cfg.channels = 16;
    cfg.depths = {2, 1, 1, 2};
    cfg.window = 8;
    cfg.task = ramit::Task::color_dn;
    cfg.fusion_mobivari = ramit::MobiVariSpec{1, 1.2};
    return cfg;
}

void BlockForward(benchmark::State& state) {
    ramit::ModelConfig cfg = tiny_config();
    ramit::DRamitBlockT<float> block(cfg, 0, 0);
    ramit::Tensor x = random_image(cfg.channels, 64, 64, 1);
    ramit::ReciprocalCacheT<float> cache;
    for (auto _ : state) {
        auto out = block.forward(x, cache);
        benchmark::DoNotOptimize(const_cast<float*>(out.x.data()));
    }
}
BENCHMARK(BlockForward);

void TinyModelForward(benchmark::State& state) {
    ramit::RamitModel model(tiny_config());
    model.init_weights(0);
    ramit::Tensor x = random_image(3, 64, 64, 2);
    for (auto _ : state) {
        auto y = model.forward(x);
        benchmark::DoNotOptimize(const_cast<float*>(y.data()));
    }
}
BENCHMARK(TinyModelForward);

}  // namespace

int main(int argc, char** argv) {
    ::benchmark::Initialize(&argc, argv);
    if (::benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
    ::benchmark::RunSpecifiedBenchmarks();
    ::benchmark::Shutdown();
    return 0;
}
