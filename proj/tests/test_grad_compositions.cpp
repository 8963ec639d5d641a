#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "deltaworld/bom.hpp"
#include "deltaworld/predictor.hpp"
#include "deltaworld/tokenizer.hpp"
#include "grad_check.hpp"

// Finite-difference checks of every trainable composition on miniature
// configurations in 64-bit, the oracle behind the gradient-correctness
// acceptance criterion.

using namespace dw;
using Var = Graph<double>::Var;

namespace {

Tensor<double> randn(std::vector<int64_t> shape, uint64_t seed, double scale = 1.0) {
    Tensor<double> t(std::move(shape));
    Rng rng(seed);
    for (auto& x : t.v) x = rng.normal(0.0, scale);
    return t;
}

void roughen(ParamSet<double>& ps, uint64_t seed) {
    Rng rng(seed);
    for (auto& e : ps.entries)
        for (auto& x : e.value.v) x += 0.1 * rng.normal();
}

}  // namespace

TEST_CASE("tokenizer encode-decode-loss composition matches finite differences") {
    TokenizerConfig cfg;
    cfg.block = BlockConfig{8, 1, 1.0};
    cfg.encoder_blocks = 1;
    cfg.decoder_blocks = 1;
    cfg.mode = TokenizerMode::delta;
    cfg.grid_h = cfg.grid_w = 2;

    auto ps = init_tokenizer_params<double>(cfg, 5);
    roughen(ps, 6);
    REQUIRE(ps.num_params() < 1300);

    Tensor<double> prev = randn({4, 8}, 7, 0.5);
    Tensor<double> cur = randn({4, 8}, 8, 0.5);

    auto loss_fn = [&](std::vector<Tensor<double>>* grads) {
        Graph<double> g;
        ParamBinder<double> bind(g, ps);
        auto z = tokenizer_encode(g, bind, cfg, g.constant(prev), g.constant(cur), 2, 2);
        auto xhat = tokenizer_decode(g, bind, cfg, g.constant(prev), z, 2, 2);
        auto l = tokenizer_loss(g, xhat, cur);
        if (grads) {
            g.backward(l);
            bind.collect(*grads);
        }
        return g.val(l).v[0];
    };
    auto res = dw::testing::grad_check(ps, loss_fn);
    INFO("checked=", res.checked, " worst=", res.worst);
    CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("delta predictor teacher-forced pass matches finite differences") {
    PredictorConfig cfg;
    cfg.block = BlockConfig{8, 1, 1.0};
    cfg.blocks = 1;
    cfg.variant = PredictorVariant::delta;

    auto ps = init_predictor_params<double>(cfg, 9);
    roughen(ps, 10);
    REQUIRE(ps.num_params() < 1000);

    const int t_len = 3;
    Tensor<double> tokens = randn({t_len, 8}, 11, 0.5);
    std::vector<double> taus = {0.25, 0.5, 0.8125};
    Tensor<double> ctx({t_len - 1, 8});
    std::copy(tokens.v.begin(), tokens.v.begin() + (t_len - 1) * 8, ctx.v.begin());
    std::vector<double> ctx_taus(taus.begin(), taus.end() - 1);

    auto loss_fn = [&](std::vector<Tensor<double>>* grads) {
        Graph<double> g;
        ParamBinder<double> bind(g, ps);
        auto qrows = g.broadcast_row(bind("pred.query"), t_len);
        std::vector<int> ctx_len = {0, 1, 2};
        auto preds = token_predict_rows(g, bind, cfg, ctx, ctx_taus, qrows, taus, ctx_len);
        auto l = g.smooth_l1(preds, tokens, 0.1);
        if (grads) {
            g.backward(l);
            bind.collect(*grads);
        }
        return g.val(l).v[0];
    };
    auto res = dw::testing::grad_check(ps, loss_fn);
    INFO("checked=", res.checked, " worst=", res.worst);
    CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("spatial predictor pass matches finite differences") {
    PredictorConfig cfg;
    cfg.block = BlockConfig{8, 1, 1.0};
    cfg.blocks = 1;
    cfg.variant = PredictorVariant::spatial;

    auto ps = init_predictor_params<double>(cfg, 13);
    roughen(ps, 14);

    const int t_len = 2, gh = 2, gw = 2, hw = gh * gw;
    Tensor<double> grids = randn({t_len * hw, 8}, 15, 0.5);
    std::vector<double> taus = {0.25, 0.5625};
    Tensor<double> ctx({(t_len - 1) * hw, 8});
    std::copy(grids.v.begin(), grids.v.begin() + hw * 8, ctx.v.begin());

    auto loss_fn = [&](std::vector<Tensor<double>>* grads) {
        Graph<double> g;
        ParamBinder<double> bind(g, ps);
        auto qrows = g.broadcast_row(bind("pred.query"), t_len * hw);
        std::vector<int> ctx_frames = {0, 1};
        auto preds = spatial_predict_rows(g, bind, cfg, ctx, {taus[0]}, gh, gw, qrows, taus,
                                          ctx_frames);
        auto l = g.smooth_l1(preds, grids, 0.1);
        if (grads) {
            g.backward(l);
            bind.collect(*grads);
        }
        return g.val(l).v[0];
    };
    auto res = dw::testing::grad_check(ps, loss_fn);
    INFO("checked=", res.checked, " worst=", res.worst);
    CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("bom step with its selected queries matches finite differences") {
    PredictorConfig cfg;
    cfg.block = BlockConfig{8, 1, 1.0};
    cfg.blocks = 1;
    cfg.variant = PredictorVariant::delta;

    auto ps = init_predictor_params<double>(cfg, 17);
    roughen(ps, 18);

    const int t_len = 3, k = 4;
    Tensor<double> tokens = randn({t_len, 8}, 19, 0.5);
    std::vector<double> taus = {0.25, 0.5, 0.75};
    Tensor<double> ctx({t_len - 1, 8});
    std::copy(tokens.v.begin(), tokens.v.begin() + (t_len - 1) * 8, ctx.v.begin());
    std::vector<double> ctx_taus(taus.begin(), taus.end() - 1);
    Tensor<double> bank = randn({k, 8}, 21, 0.02);

    // selection pass: no gradient tracking, k* per target step
    std::vector<int> k_star(t_len, 0);
    {
        Graph<double> g;
        g.grad_enabled = false;
        ParamBinder<double> bind(g, ps, true);
        Tensor<double> qrows({k * t_len, 8});
        std::vector<double> qtaus(static_cast<size_t>(k * t_len));
        std::vector<int> qctx(static_cast<size_t>(k * t_len));
        for (int ki = 0; ki < k; ++ki)
            for (int t = 0; t < t_len; ++t) {
                std::copy(bank.row_ptr(ki), bank.row_ptr(ki) + 8, qrows.row_ptr(ki * t_len + t));
                qtaus[static_cast<size_t>(ki * t_len + t)] = taus[static_cast<size_t>(t)];
                qctx[static_cast<size_t>(ki * t_len + t)] = t;
            }
        auto preds = token_predict_rows(g, bind, cfg, ctx, ctx_taus, g.constant(qrows), qtaus, qctx);
        for (int t = 0; t < t_len; ++t) {
            double best = 0;
            for (int ki = 0; ki < k; ++ki) {
                Tensor<double> row({1, 8});
                std::copy(g.val(preds).row_ptr(ki * t_len + t), g.val(preds).row_ptr(ki * t_len + t) + 8,
                          row.v.begin());
                Tensor<double> tgt({1, 8});
                std::copy(tokens.row_ptr(t), tokens.row_ptr(t) + 8, tgt.v.begin());
                double l = smooth_l1_value(row, tgt, 0.1);
                if (ki == 0 || l < best) {
                    best = l;
                    k_star[static_cast<size_t>(t)] = ki;
                }
            }
        }
    }

    // supervised objective with the selection held fixed (the gradient the
    // two-pass scheme actually takes)
    auto loss_fn = [&](std::vector<Tensor<double>>* grads) {
        Graph<double> g;
        ParamBinder<double> bind(g, ps);
        Tensor<double> qrows({t_len, 8});
        std::vector<double> qtaus(taus);
        std::vector<int> qctx = {0, 1, 2};
        for (int t = 0; t < t_len; ++t)
            std::copy(bank.row_ptr(k_star[static_cast<size_t>(t)]),
                      bank.row_ptr(k_star[static_cast<size_t>(t)]) + 8, qrows.row_ptr(t));
        auto preds = token_predict_rows(g, bind, cfg, ctx, ctx_taus, g.constant(qrows), qtaus, qctx);
        std::vector<Var> step_losses;
        for (int t = 0; t < t_len; ++t) {
            Tensor<double> tgt({1, 8});
            std::copy(tokens.row_ptr(t), tokens.row_ptr(t) + 8, tgt.v.begin());
            step_losses.push_back(g.smooth_l1(g.slice_rows(preds, t, t + 1), tgt, 0.1));
        }
        auto l = g.scale(g.add_n(step_losses), 1.0 / t_len);
        if (grads) {
            g.backward(l);
            bind.collect(*grads);
        }
        return g.val(l).v[0];
    };
    auto res = dw::testing::grad_check(ps, loss_fn);
    INFO("checked=", res.checked, " worst=", res.worst);
    CHECK(res.max_rel_err < 1e-4);
}
