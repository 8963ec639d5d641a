#include <benchmark/benchmark.h>

#include "deltaworld/nn.hpp"

using namespace dw;

namespace {

template <typename T>
Tensor<T> randn(std::vector<int64_t> shape, uint64_t seed) {
    Tensor<T> t(std::move(shape));
    Rng rng(seed);
    for (auto& x : t.v) x = static_cast<T>(rng.normal());
    return t;
}

void bench_block_forward(benchmark::State& state) {
    int64_t n = state.range(0);
    BlockConfig cfg{64, 4, 4.0};
    ParamSet<float> ps;
    Rng rng(1);
    init_block_params(ps, "blk", cfg, rng);
    Tensor<float> x = randn<float>({n, 64}, 2);
    RopePlan plan = make_rope_plan(1, cfg.heads, cfg.head_dim());
    auto pos = std::make_shared<Tensor<double>>(std::vector<int64_t>{n, 1});
    for (int64_t i = 0; i < n; ++i) pos->at(i, 0) = 0.0625 * static_cast<double>(i);

    for (auto _ : state) {
        Graph<float> g;
        g.grad_enabled = false;
        ParamBinder<float> bind(g, ps);
        auto blk = bind_block(bind, "blk");
        auto y = block_self(g, g.constant(x), blk, cfg.heads, nullptr, &plan, pos);
        benchmark::DoNotOptimize(g.val(y).v.data());
    }
    state.SetItemsProcessed(state.iterations() * n);
}

void bench_block_backward(benchmark::State& state) {
    int64_t n = state.range(0);
    BlockConfig cfg{64, 4, 4.0};
    ParamSet<float> ps;
    Rng rng(1);
    init_block_params(ps, "blk", cfg, rng);
    Tensor<float> x = randn<float>({n, 64}, 2);
    Tensor<float> tgt = randn<float>({n, 64}, 3);

    for (auto _ : state) {
        Graph<float> g;
        ParamBinder<float> bind(g, ps);
        auto blk = bind_block(bind, "blk");
        auto y = block_self(g, g.constant(x), blk, cfg.heads, nullptr, nullptr, nullptr);
        auto l = g.mse(y, tgt);
        g.backward(l);
        std::vector<Tensor<float>> grads(ps.entries.size());
        bind.collect(grads);
        benchmark::DoNotOptimize(grads.data());
    }
    state.SetItemsProcessed(state.iterations() * n);
}

}  // namespace

BENCHMARK(bench_block_forward)->Arg(65)->Arg(129)->Arg(512);
BENCHMARK(bench_block_backward)->Arg(65)->Arg(129);

BENCHMARK_MAIN();
