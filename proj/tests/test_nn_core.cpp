#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "deltaworld/graph.hpp"
#include "deltaworld/nn.hpp"
#include "deltaworld/rng.hpp"
#include "grad_check.hpp"

using namespace dw;
using G = Graph<double>;

namespace {

Tensor<double> random_tensor(std::vector<int64_t> shape, Rng& rng, double scale = 1.0) {
    Tensor<double> t(std::move(shape));
    for (auto& x : t.v) x = rng.normal(0.0, scale);
    return t;
}

std::shared_ptr<Tensor<uint8_t>> full_mask(int64_t nq, int64_t nk, uint8_t fill = 1) {
    auto m = std::make_shared<Tensor<uint8_t>>(std::vector<int64_t>{nq, nk});
    m->fill(fill);
    return m;
}

}  // namespace

TEST_CASE("smooth l1 closed-form branch values") {
    G g;
    Tensor<double> pred({4});
    Tensor<double> tgt({4});

    // d = 0 -> 0
    auto l0 = g.smooth_l1(g.constant(pred), tgt, 0.1);
    CHECK(g.val(l0).v[0] == 0.0);

    // d = 0.05, beta = 0.1 -> 0.5*0.05^2/0.1 = 0.0125 per element
    pred.fill(0.05);
    auto l1 = g.smooth_l1(g.constant(pred), tgt, 0.1);
    CHECK(g.val(l1).v[0] == doctest::Approx(0.0125).epsilon(1e-12));

    // d = 1.0, beta = 0.1 -> 1.0 - 0.05 = 0.95 per element
    pred.fill(1.0);
    auto l2 = g.smooth_l1(g.constant(pred), tgt, 0.1);
    CHECK(g.val(l2).v[0] == doctest::Approx(0.95).epsilon(1e-12));
}

TEST_CASE("elementwise and matmul gradients vs finite differences") {
    Rng rng(7);
    ParamSet<double> ps;
    ps.add("a", {3, 4});
    ps.add("w", {5, 4});
    ps.get("a") = random_tensor({3, 4}, rng);
    ps.get("w") = random_tensor({5, 4}, rng);
    Tensor<double> tgt = random_tensor({3, 5}, rng);

    auto loss_fn = [&](std::vector<Tensor<double>>* grads) {
        G g;
        ParamBinder<double> bind(g, ps);
        auto y = g.matmul_nt(bind("a"), bind("w"));
        auto l = g.mse(g.gelu(y), tgt);
        if (grads) {
            g.backward(l);
            bind.collect(*grads);
        }
        return g.val(l).v[0];
    };
    auto res = dw::testing::grad_check(ps, loss_fn);
    CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("layernorm gradient vs finite differences") {
    Rng rng(11);
    ParamSet<double> ps;
    ps.get("x") = (ps.add("x", {4, 6}), random_tensor({4, 6}, rng));
    ps.get("g") = (ps.add("g", {6}), random_tensor({6}, rng, 0.3));
    ps.get("b") = (ps.add("b", {6}), random_tensor({6}, rng, 0.3));
    Tensor<double> tgt = random_tensor({4, 6}, rng);

    auto loss_fn = [&](std::vector<Tensor<double>>* grads) {
        G g;
        ParamBinder<double> bind(g, ps);
        auto l = g.mse(g.layernorm(bind("x"), bind("g"), bind("b")), tgt);
        if (grads) {
            g.backward(l);
            bind.collect(*grads);
        }
        return g.val(l).v[0];
    };
    CHECK(dw::testing::grad_check(ps, loss_fn).max_rel_err < 1e-6);
}

TEST_CASE("attention gradient vs finite differences, with mask") {
    Rng rng(13);
    ParamSet<double> ps;
    ps.get("q") = (ps.add("q", {3, 8}), random_tensor({3, 8}, rng));
    ps.get("k") = (ps.add("k", {5, 8}), random_tensor({5, 8}, rng));
    ps.get("v") = (ps.add("v", {5, 8}), random_tensor({5, 8}, rng));
    Tensor<double> tgt = random_tensor({3, 8}, rng);
    auto mask = full_mask(3, 5);
    mask->at(0, 3) = 0;
    mask->at(2, 0) = 0;
    mask->at(2, 4) = 0;

    auto loss_fn = [&](std::vector<Tensor<double>>* grads) {
        G g;
        ParamBinder<double> bind(g, ps);
        auto l = g.mse(g.attention(bind("q"), bind("k"), bind("v"), mask, 2), tgt);
        if (grads) {
            g.backward(l);
            bind.collect(*grads);
        }
        return g.val(l).v[0];
    };
    CHECK(dw::testing::grad_check(ps, loss_fn).max_rel_err < 1e-6);
}

TEST_CASE("cross_self_attention gradient vs finite differences") {
    Rng rng(17);
    ParamSet<double> ps;
    for (auto [name, r] : {std::pair<const char*, int64_t>{"q", 3},
                           {"ks", 3},
                           {"vs", 3},
                           {"kc", 4},
                           {"vc", 4}}) {
        ps.add(name, {r, 8});
        ps.get(name) = random_tensor({r, 8}, rng);
    }
    Tensor<double> tgt = random_tensor({3, 8}, rng);
    auto mask = full_mask(3, 4);
    mask->at(0, 0) = 0;
    mask->at(0, 1) = 0;
    mask->at(0, 2) = 0;
    mask->at(0, 3) = 0;  // row 0 sees self only
    mask->at(1, 2) = 0;

    auto loss_fn = [&](std::vector<Tensor<double>>* grads) {
        G g;
        ParamBinder<double> bind(g, ps);
        auto l = g.mse(g.cross_self_attention(bind("q"), bind("kc"), bind("vc"), bind("ks"),
                                              bind("vs"), mask, 2),
                       tgt);
        if (grads) {
            g.backward(l);
            bind.collect(*grads);
        }
        return g.val(l).v[0];
    };
    CHECK(dw::testing::grad_check(ps, loss_fn).max_rel_err < 1e-6);
}

TEST_CASE("full block composition matches finite differences") {
    Rng rng(23);
    BlockConfig cfg{8, 1, 2.0};
    ParamSet<double> ps;
    init_block_params(ps, "blk", cfg, rng);
    // nonzero biases and layer scales so every path carries signal
    for (auto& e : ps.entries)
        for (auto& x : e.value.v) x += 0.1 * rng.normal();

    Tensor<double> input = random_tensor({5, 8}, rng);
    Tensor<double> tgt = random_tensor({5, 8}, rng);
    auto pos = std::make_shared<Tensor<double>>(std::vector<int64_t>{5, 1});
    for (int i = 0; i < 5; ++i) pos->at(i, 0) = 0.3 * i;
    RopePlan plan = make_rope_plan(1, cfg.heads, cfg.head_dim());
    auto mask = full_mask(5, 5);
    for (int i = 0; i < 5; ++i)
        for (int j = i + 1; j < 5; ++j) mask->at(i, j) = 0;

    auto loss_fn = [&](std::vector<Tensor<double>>* grads) {
        G g;
        ParamBinder<double> bind(g, ps);
        auto blk = bind_block(bind, "blk");
        auto y = block_self(g, g.constant(input), blk, cfg.heads, mask, &plan, pos);
        auto l = g.smooth_l1(y, tgt, 0.1);
        if (grads) {
            g.backward(l);
            bind.collect(*grads);
        }
        return g.val(l).v[0];
    };
    auto res = dw::testing::grad_check(ps, loss_fn);
    INFO("worst: ", res.worst);
    CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("block with layer scale zero is the identity") {
    Rng rng(29);
    BlockConfig cfg{8, 2, 4.0};
    ParamSet<double> ps;
    init_block_params(ps, "blk", cfg, rng);
    ps.get("blk.ls1").fill(0.0);
    ps.get("blk.ls2").fill(0.0);

    Tensor<double> input = random_tensor({4, 8}, rng);
    G g;
    g.grad_enabled = false;
    ParamBinder<double> bind(g, ps);
    auto blk = bind_block(bind, "blk");
    auto y = block_self(g, g.constant(input), blk, cfg.heads, nullptr, nullptr, nullptr);
    for (size_t i = 0; i < input.v.size(); ++i) CHECK(g.val(y).v[i] == input.v[i]);
}

TEST_CASE("fully masked attention row contributes zero context") {
    Rng rng(31);
    G g;
    g.grad_enabled = false;
    auto q = g.constant(random_tensor({2, 4}, rng));
    auto k = g.constant(random_tensor({3, 4}, rng));
    auto v = g.constant(random_tensor({3, 4}, rng));
    auto mask = full_mask(2, 3);
    mask->at(1, 0) = mask->at(1, 1) = mask->at(1, 2) = 0;
    auto out = g.attention(q, k, v, mask, 1);
    for (int j = 0; j < 4; ++j) CHECK(g.val(out).at(1, j) == 0.0);
}

TEST_CASE("single token unmasked attends to itself with weight one") {
    Rng rng(37);
    G g;
    g.grad_enabled = false;
    Tensor<double> t = random_tensor({1, 4}, rng);
    auto out = g.attention(g.constant(t), g.constant(t), g.constant(t), nullptr, 1);
    for (int j = 0; j < 4; ++j) CHECK(g.val(out).at(0, j) == doctest::Approx(t.at(0, j)));
}

TEST_CASE("mask soundness: masked key/value perturbations cannot leak") {
    Rng rng(41);
    Tensor<double> q = random_tensor({3, 8}, rng);
    Tensor<double> k = random_tensor({4, 8}, rng);
    Tensor<double> v = random_tensor({4, 8}, rng);
    auto mask = full_mask(3, 4);
    mask->at(0, 2) = 0;
    mask->at(1, 0) = 0;
    mask->at(1, 3) = 0;

    auto run = [&](const Tensor<double>& kk, const Tensor<double>& vv) {
        G g;
        g.grad_enabled = false;
        return g.val(g.attention(g.constant(q), g.constant(kk), g.constant(vv), mask, 2));
    };
    auto base = run(k, v);
    Tensor<double> k2 = k, v2 = v;
    // arbitrary large perturbations of masked tokens
    for (int j = 0; j < 8; ++j) {
        k2.at(2, j) += 1e6 * (j + 1);
        v2.at(2, j) -= 3e5;
    }
    auto pert = run(k2, v2);
    for (int j = 0; j < 8; ++j) {
        CHECK(pert.at(0, j) == base.at(0, j));  // row 0 masks key 2
    }
    // row 2 sees everything, so it must change
    double diff = 0;
    for (int j = 0; j < 8; ++j) diff += std::abs(pert.at(2, j) - base.at(2, j));
    CHECK(diff > 0);
}

TEST_CASE("rope: position zero is the identity") {
    Rng rng(43);
    RopePlan plan = make_rope_plan(3, 2, 16);
    CHECK(plan.rot_dims[0] == 4);
    CHECK(plan.rot_dims[1] == 4);
    CHECK(plan.rot_dims[2] == 4);
    Tensor<double> x = random_tensor({2, 32}, rng);
    auto pos = std::make_shared<Tensor<double>>(std::vector<int64_t>{2, 3});
    G g;
    g.grad_enabled = false;
    auto y = g.rope(g.constant(x), plan, pos);
    for (size_t i = 0; i < x.v.size(); ++i) CHECK(g.val(y).v[i] == doctest::Approx(x.v[i]).epsilon(1e-15));
}

TEST_CASE("rope preserves norms") {
    Rng rng(47);
    RopePlan plan = make_rope_plan(1, 4, 16);
    CHECK(plan.rot_dims[0] == 12);
    Tensor<double> x = random_tensor({5, 64}, rng);
    auto pos = std::make_shared<Tensor<double>>(std::vector<int64_t>{5, 1});
    for (int i = 0; i < 5; ++i) pos->at(i, 0) = 1.7 * i - 2.0;
    G g;
    g.grad_enabled = false;
    auto y = g.rope(g.constant(x), plan, pos);
    for (int i = 0; i < 5; ++i) {
        double n0 = 0, n1 = 0;
        for (int j = 0; j < 64; ++j) {
            n0 += x.at(i, j) * x.at(i, j);
            n1 += g.val(y).at(i, j) * g.val(y).at(i, j);
        }
        CHECK(std::abs(std::sqrt(n0) - std::sqrt(n1)) < 1e-6);
    }
}

TEST_CASE("rope dot products depend only on relative position") {
    Rng rng(53);
    for (int axes : {1, 3}) {
        RopePlan plan = make_rope_plan(axes, 1, 16);
        Tensor<double> q = random_tensor({1, 16}, rng);
        Tensor<double> k = random_tensor({1, 16}, rng);

        auto dot_at = [&](std::vector<double> pq, std::vector<double> pk) {
            auto posq = std::make_shared<Tensor<double>>(std::vector<int64_t>{1, axes});
            auto posk = std::make_shared<Tensor<double>>(std::vector<int64_t>{1, axes});
            for (int a = 0; a < axes; ++a) {
                posq->at(0, a) = pq[static_cast<size_t>(a)];
                posk->at(0, a) = pk[static_cast<size_t>(a)];
            }
            G g;
            g.grad_enabled = false;
            auto rq = g.val(g.rope(g.constant(q), plan, posq));
            auto rk = g.val(g.rope(g.constant(k), plan, posk));
            double d = 0;
            for (int j = 0; j < 16; ++j) d += rq.at(0, j) * rk.at(0, j);
            return d;
        };

        // three position pairs sharing the same difference
        std::vector<double> delta(static_cast<size_t>(axes), 0.0);
        for (int a = 0; a < axes; ++a) delta[static_cast<size_t>(a)] = 0.9 + 0.4 * a;
        std::vector<std::vector<double>> starts = {{0.0, 0.0, 0.0}, {1.3, -0.7, 2.2}, {-2.1, 0.5, 0.9}};
        std::vector<double> dots;
        for (auto& s : starts) {
            std::vector<double> pq(s.begin(), s.begin() + axes);
            std::vector<double> pk = pq;
            for (int a = 0; a < axes; ++a) pk[static_cast<size_t>(a)] += delta[static_cast<size_t>(a)];
            dots.push_back(dot_at(pq, pk));
        }
        CHECK(std::abs(dots[0] - dots[1]) < 1e-9);
        CHECK(std::abs(dots[0] - dots[2]) < 1e-9);
    }
}

TEST_CASE("init: biases zero, layer scale 1e-5, weight std in truncated-normal range") {
    Rng rng(59);
    BlockConfig cfg{64, 4, 4.0};
    ParamSet<double> ps;
    init_block_params(ps, "b0", cfg, rng);
    init_block_params(ps, "b1", cfg, rng);

    int64_t weight_count = 0;
    double sum = 0, sum2 = 0;
    for (const auto& e : ps.entries) {
        if (e.name.ends_with(".b") && e.name.find("ln") == std::string::npos) {
            for (double x : e.value.v) CHECK(x == 0.0);
        }
        if (e.name.find(".ls") != std::string::npos) {
            for (double x : e.value.v) CHECK(x == 1e-5);
        }
        if (e.name.ends_with(".w")) {
            for (double x : e.value.v) {
                CHECK(std::abs(x) <= 0.04);  // hard truncation bound
                sum += x;
                sum2 += x * x;
                ++weight_count;
            }
        }
    }
    CHECK(weight_count >= 10000);
    double mean = sum / static_cast<double>(weight_count);
    double stdv = std::sqrt(sum2 / static_cast<double>(weight_count) - mean * mean);
    CHECK(stdv > 0.015);
    CHECK(stdv < 0.025);
}

TEST_CASE("detach blocks gradient exactly") {
    ParamSet<double> ps;
    ps.add("w", {3});
    ps.get("w").fill(2.0);
    Tensor<double> tgt({3});

    G g;
    ParamBinder<double> bind(g, ps);
    auto w = bind("w");
    auto stopped = g.detach(w);
    auto combined = g.add(w, stopped);
    auto l = g.mse(combined, tgt);
    g.backward(l);
    // d/dw mse(w + detach(w)) = 2*(w + c)/n with only the live branch: 2*4/3 * 1
    for (int i = 0; i < 3; ++i) CHECK(g.grad(w).at(i) == doctest::Approx(2.0 * 4.0 / 3.0));
}

TEST_CASE("gradient of sum is all ones") {
    ParamSet<double> ps;
    ps.add("w", {4});
    ps.get("w") = Tensor<double>::full({4}, 1.5);
    G g;
    ParamBinder<double> bind(g, ps);
    auto l = g.sum_all(bind("w"));
    g.backward(l);
    for (int i = 0; i < 4; ++i) CHECK(g.grad(bind("w")).at(i) == 1.0);
}

TEST_CASE("adamw: zero grads and zero decay leave params unchanged") {
    ParamSet<float> ps;
    ps.add("w", {4});
    ps.get("w").fill(0.5f);
    AdamWConfig cfg;
    cfg.lr_peak = 1e-3;
    AdamW<float> opt(ps, cfg);
    std::vector<Tensor<float>> grads(1);
    grads[0] = Tensor<float>({4});
    opt.step(grads);
    for (float x : ps.get("w").v) CHECK(x == 0.5f);
}

TEST_CASE("adamw: linear warmup schedule") {
    ParamSet<float> ps;
    ps.add("w", {1});
    AdamWConfig cfg;
    cfg.lr_peak = 1e-3;
    cfg.warmup_steps = 100;
    AdamW<float> opt(ps, cfg);
    CHECK(opt.lr_at(1) == doctest::Approx(1e-5));
    CHECK(opt.lr_at(50) == doctest::Approx(5e-4));
    CHECK(opt.lr_at(100) == doctest::Approx(1e-3));
    CHECK(opt.lr_at(5000) == doctest::Approx(1e-3));
}

TEST_CASE("adamw: global norm clip rescales gradients") {
    ParamSet<float> ps;
    ps.add("w", {2});
    ps.get("w").fill(1.0f);
    AdamWConfig cfg;
    cfg.lr_peak = 1.0;
    cfg.clip_norm = 1e-2;
    cfg.eps = 0.0;
    AdamW<float> opt(ps, cfg);
    std::vector<Tensor<float>> grads(1);
    grads[0] = Tensor<float>({2});
    grads[0].v = {0.6f, 0.8f};  // norm 1 -> scaled by 1e-2
    opt.step(grads);
    CHECK(grads[0].v[0] == doctest::Approx(0.006f));
    CHECK(grads[0].v[1] == doctest::Approx(0.008f));
}

TEST_CASE("no-grad tape stores no backward state") {
    Rng rng(61);
    G g;
    g.grad_enabled = false;
    auto a = g.param(random_tensor({4, 4}, rng));
    auto b = g.matmul_nt(a, a);
    CHECK(!g.needs_grad(b));
    CHECK_THROWS_AS(g.backward(g.mean_all(b)), GradError);
}

TEST_CASE("query bank style sampling: sigma zero collapses to mu") {
    Rng rng(67);
    for (int i = 0; i < 8; ++i) CHECK(rng.normal(0.25, 0.0) == 0.25);
}
