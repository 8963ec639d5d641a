#include <benchmark/benchmark.h>

#include "deltaworld/tokenizer.hpp"
#include "deltaworld/toyvfm.hpp"

using namespace dw;

namespace {

const ToyVfm& vfm() {
    static ToyVfm v;
    return v;
}

void bench_embed_frame(benchmark::State& state) {
    int fs = static_cast<int>(state.range(0));
    std::vector<float> frame(static_cast<size_t>(fs) * fs * 3, 0.3f);
    for (auto _ : state) {
        FeatureGrid g = vfm().embed_frame(frame.data(), fs);
        benchmark::DoNotOptimize(g.tokens.v.data());
    }
}

void bench_encode_delta(benchmark::State& state) {
    int fs = static_cast<int>(state.range(0));
    TokenizerConfig cfg;
    cfg.grid_h = cfg.grid_w = fs / ToyVfm::kPatch;
    Tokenizer tok(cfg, 1);
    std::vector<float> frame(static_cast<size_t>(fs) * fs * 3, 0.3f);
    FeatureGrid a = vfm().embed_frame(frame.data(), fs);
    frame[100] = 0.9f;
    FeatureGrid b = vfm().embed_frame(frame.data(), fs);
    for (auto _ : state) {
        DeltaToken z = tok.encode_delta(a, b);
        benchmark::DoNotOptimize(z.value.v.data());
    }
}

void bench_decode_delta(benchmark::State& state) {
    int fs = static_cast<int>(state.range(0));
    TokenizerConfig cfg;
    cfg.grid_h = cfg.grid_w = fs / ToyVfm::kPatch;
    Tokenizer tok(cfg, 1);
    std::vector<float> frame(static_cast<size_t>(fs) * fs * 3, 0.3f);
    FeatureGrid a = vfm().embed_frame(frame.data(), fs);
    DeltaToken z;
    z.kind = TokenKind::delta;
    z.value = Tensor<float>({cfg.block.dim});
    for (auto _ : state) {
        FeatureGrid out = tok.decode_delta(a, z);
        benchmark::DoNotOptimize(out.tokens.v.data());
    }
}

}  // namespace

BENCHMARK(bench_embed_frame)->Arg(32)->Arg(64);
BENCHMARK(bench_encode_delta)->Arg(32)->Arg(64);
BENCHMARK(bench_decode_delta)->Arg(32)->Arg(64);
