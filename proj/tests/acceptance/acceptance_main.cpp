// Acceptance suite: runs every criterion end to end and prints one
// PASS/FAIL line per criterion. Criteria 6-8 share one set of trained
// models; --criterion N (repeatable) filters, --out sets the scratch dir.

#include <chrono>
#include <cstdarg>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "deltaworld/bom.hpp"
#include "deltaworld/checkpoint.hpp"
#include "deltaworld/cli.hpp"
#include "deltaworld/config.hpp"
#include "deltaworld/evalharness.hpp"
#include "deltaworld/flops.hpp"
#include "deltaworld/predictor.hpp"
#include "deltaworld/tokenizer.hpp"
#include "deltaworld/toyvfm.hpp"

using namespace dw;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double minutes_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count() / 60.0;
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

Tensor<double> randn64(std::vector<int64_t> shape, uint64_t seed, double scale = 1.0) {
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

// finite-difference check over every trainable entry
double fd_max_rel_err(ParamSet<double>& ps,
                      const std::function<double(std::vector<Tensor<double>>*)>& loss_fn,
                      double h = 1e-5) {
    std::vector<Tensor<double>> grads(ps.entries.size());
    loss_fn(&grads);
    double worst = 0.0;
    for (size_t e = 0; e < ps.entries.size(); ++e) {
        auto& entry = ps.entries[e];
        if (!entry.trainable) continue;
        for (size_t i = 0; i < entry.value.v.size(); ++i) {
            double saved = entry.value.v[i];
            entry.value.v[i] = saved + h;
            double lp = loss_fn(nullptr);
            entry.value.v[i] = saved - h;
            double lm = loss_fn(nullptr);
            entry.value.v[i] = saved;
            double fd = (lp - lm) / (2.0 * h);
            double an = grads[e].numel() ? grads[e].v[i] : 0.0;
            double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

// ---- shared corpora and models for the ablation criteria ----

ScenarioConfig bimodal_scene(double duration) {
    ScenarioConfig c;
    c.frame_size = 64;
    c.num_objects = 1;
    c.dynamics = Dynamics::bimodal_branch;
    c.branch_prob = 0.5;
    c.fps = 16.0;
    c.duration = duration;
    c.branch_time = 0.75;
    c.min_speed = 20.0;
    c.max_speed = 28.0;
    c.object_size = 12.0;
    return c;
}

struct World {
    std::vector<VideoSequence> seqs;
    std::vector<FeatureSequence> feats;
};

World make_world(const ToyVfm& vfm, const ScenarioConfig& c, int n, uint64_t seed0) {
    World w;
    for (int i = 0; i < n; ++i) {
        VideoSequence s = generate_sequence(c, seed0 + static_cast<uint64_t>(i));
        s.id = i;
        w.seqs.push_back(std::move(s));
    }
    w.feats = embed_dataset(vfm, w.seqs);
    return w;
}

struct Ladder {
    ToyVfm vfm;
    World train, eval;
    std::optional<Tokenizer> tokenizer;
    std::optional<TokenCache> cache;
    std::optional<PredictorTrainResult> disc, bom_spatial, bom_delta;
    std::optional<TaskHead> head;
    double tokenizer_minutes = 0, disc_minutes = 0, spatial_minutes = 0, delta_minutes = 0;

    void build() {
        if (tokenizer) return;
        std::printf("     building shared ablation models (bimodal corpus)...\n");
        std::fflush(stdout);
        train = make_world(vfm, bimodal_scene(2.5), 24, 9000);
        eval = make_world(vfm, bimodal_scene(1.75), 12, 7000);

        Clock::time_point t0 = Clock::now();
        TokenizerConfig tcfg;
        tcfg.grid_h = tcfg.grid_w = 8;
        tokenizer.emplace(tcfg, 11);
        TokenizerTrainConfig tt;
        tt.iters = 1000;
        tt.batch = 8;
        tt.seed = 1;
        TrainLog tlog = train_tokenizer(*tokenizer, train.feats, tt);
        tokenizer_minutes = minutes_since(t0);
        std::printf("     tokenizer: loss %.4f -> %.4f (%.1f min)\n", tlog.initial_loss,
                    tlog.final_loss, tokenizer_minutes);
        std::fflush(stdout);
        cache.emplace(*tokenizer, &train.feats, vfm.black_frame_grid(64));

        PredictorConfig pcfg;  // 4 blocks, D=64
        PredictorTrainConfig base;
        base.batch = 2;
        base.seq_len = 8;
        base.k_train = 16;
        base.lr_peak = 1e-3;
        base.seed = 2;

        t0 = Clock::now();
        PredictorTrainConfig dcfg = base;
        dcfg.iters = 500;
        disc = train_predictor(TrainMode::disc_spatial, train.feats, nullptr, pcfg, dcfg);
        disc_minutes = minutes_since(t0);
        std::printf("     disc-spatial: loss %.4f -> %.4f (%.1f min)\n", disc->log.initial_loss,
                    disc->log.final_loss, disc_minutes);
        std::fflush(stdout);

        t0 = Clock::now();
        PredictorTrainConfig scfg = base;
        scfg.iters = 500;
        scfg.batch = 1;
        bom_spatial = train_predictor(TrainMode::bom_spatial, train.feats, nullptr, pcfg, scfg);
        spatial_minutes = minutes_since(t0);
        std::printf("     bom-spatial: loss %.4f -> %.4f (%.1f min)\n",
                    bom_spatial->log.initial_loss, bom_spatial->log.final_loss, spatial_minutes);
        std::fflush(stdout);

        t0 = Clock::now();
        PredictorTrainConfig kcfg = base;
        kcfg.iters = 600;
        kcfg.batch = 4;
        bom_delta = train_predictor(TrainMode::bom_delta, train.feats, &*cache, pcfg, kcfg);
        delta_minutes = minutes_since(t0);
        std::printf("     bom-delta: loss %.4f -> %.4f (%.1f min)\n", bom_delta->log.initial_loss,
                    bom_delta->log.final_loss, delta_minutes);
        std::fflush(stdout);

        TaskHeadTrainConfig hc;
        hc.iters = 300;
        head.emplace(train_task_head(train.feats, train.seqs, 2, hc));
    }

    EvalProtocol proto(int k, bool learned) const {
        EvalProtocol p;
        p.k_eval = k;
        p.seed = 5;
        p.use_learned_query = learned;
        return p;
    }
};

Ladder& ladder() {
    static Ladder l;
    return l;
}

// ---- criteria ----

bool c1_gradients(std::string& detail) {
    double worst = 0.0;

    {  // tokenizer encode -> decode -> loss
        TokenizerConfig cfg;
        cfg.block = BlockConfig{8, 1, 1.0};
        cfg.encoder_blocks = 1;
        cfg.decoder_blocks = 1;
        cfg.grid_h = cfg.grid_w = 2;
        auto ps = init_tokenizer_params<double>(cfg, 5);
        roughen(ps, 6);
        Tensor<double> prev = randn64({4, 8}, 7, 0.5), cur = randn64({4, 8}, 8, 0.5);
        worst = std::max(worst, fd_max_rel_err(ps, [&](std::vector<Tensor<double>>* grads) {
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
        }));
    }
    {  // predictor teacher-forced pass (delta variant)
        PredictorConfig cfg;
        cfg.block = BlockConfig{8, 1, 1.0};
        cfg.blocks = 1;
        auto ps = init_predictor_params<double>(cfg, 9);
        roughen(ps, 10);
        Tensor<double> tokens = randn64({3, 8}, 11, 0.5);
        std::vector<double> taus = {0.25, 0.5, 0.8125};
        Tensor<double> ctx({2, 8});
        std::copy(tokens.v.begin(), tokens.v.begin() + 16, ctx.v.begin());
        std::vector<double> ctx_taus = {0.25, 0.5};
        worst = std::max(worst, fd_max_rel_err(ps, [&](std::vector<Tensor<double>>* grads) {
            Graph<double> g;
            ParamBinder<double> bind(g, ps);
            auto qrows = g.broadcast_row(bind("pred.query"), 3);
            auto preds = token_predict_rows(g, bind, cfg, ctx, ctx_taus, qrows, taus, {0, 1, 2});
            auto l = g.smooth_l1(preds, tokens, 0.1);
            if (grads) {
                g.backward(l);
                bind.collect(*grads);
            }
            return g.val(l).v[0];
        }));
    }
    {  // BoM step: selection pass, then the supervised objective it fixes
        PredictorConfig cfg;
        cfg.block = BlockConfig{8, 1, 1.0};
        cfg.blocks = 1;
        auto ps = init_predictor_params<double>(cfg, 17);
        roughen(ps, 18);
        const int t_len = 3, k = 4;
        Tensor<double> tokens = randn64({t_len, 8}, 19, 0.5);
        std::vector<double> taus = {0.25, 0.5, 0.75};
        Tensor<double> ctx({2, 8});
        std::copy(tokens.v.begin(), tokens.v.begin() + 16, ctx.v.begin());
        std::vector<double> ctx_taus = {0.25, 0.5};
        Tensor<double> bank = randn64({k, 8}, 21, 0.02);

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
                    Tensor<double> row({1, 8}), tgt({1, 8});
                    std::copy(g.val(preds).row_ptr(ki * t_len + t),
                              g.val(preds).row_ptr(ki * t_len + t) + 8, row.v.begin());
                    std::copy(tokens.row_ptr(t), tokens.row_ptr(t) + 8, tgt.v.begin());
                    double l = smooth_l1_value(row, tgt, 0.1);
                    if (ki == 0 || l < best) {
                        best = l;
                        k_star[static_cast<size_t>(t)] = ki;
                    }
                }
            }
        }
        worst = std::max(worst, fd_max_rel_err(ps, [&](std::vector<Tensor<double>>* grads) {
            Graph<double> g;
            ParamBinder<double> bind(g, ps);
            Tensor<double> qrows({t_len, 8});
            for (int t = 0; t < t_len; ++t)
                std::copy(bank.row_ptr(k_star[static_cast<size_t>(t)]),
                          bank.row_ptr(k_star[static_cast<size_t>(t)]) + 8, qrows.row_ptr(t));
            auto preds = token_predict_rows(g, bind, cfg, ctx, ctx_taus, g.constant(qrows), taus,
                                            {0, 1, 2});
            std::vector<Graph<double>::Var> ls;
            for (int t = 0; t < t_len; ++t) {
                Tensor<double> tgt({1, 8});
                std::copy(tokens.row_ptr(t), tokens.row_ptr(t) + 8, tgt.v.begin());
                ls.push_back(g.smooth_l1(g.slice_rows(preds, t, t + 1), tgt, 0.1));
            }
            auto l = g.scale(g.add_n(ls), 1.0 / t_len);
            if (grads) {
                g.backward(l);
                bind.collect(*grads);
            }
            return g.val(l).v[0];
        }));
    }
    detail = fmt("max relative error %.2e (threshold 1e-4)", worst);
    return worst < 1e-4;
}

bool c2_bom_exactness(std::string& detail) {
    PredictorConfig cfg;
    cfg.block = BlockConfig{16, 2, 2.0};
    cfg.blocks = 2;
    cfg.variant = PredictorVariant::delta;
    auto ps = init_predictor_params<float>(cfg, 53);
    for (auto& e : ps.entries)
        if (e.name.find(".ls") != std::string::npos) e.value.fill(0.3f);

    // (a) min <= mean on every batch, exact
    int batches = 0;
    for (uint64_t s = 0; s < 8; ++s) {
        PreparedSeq seq;
        seq.taus = {0.25, 0.5, 0.75, 1.0};
        seq.tokens = Tensor<float>({4, 16});
        Rng rng(100 + s);
        for (auto& x : seq.tokens.v) x = static_cast<float>(rng.normal(0.0, 0.5));
        QueryBank bank = sample_queries(6, 16, 0.0, 0.02, 200 + s);
        std::vector<Tensor<float>> grads(ps.entries.size());
        StepOutcome so = bom_training_step(ps, cfg, {seq}, bank, grads);
        if (!(so.loss_bom <= so.loss_mean_cand)) {
            detail = fmt("batch %d: L_BoM %.9g > mean %.9g", static_cast<int>(s), so.loss_bom,
                         so.loss_mean_cand);
            return false;
        }
        ++batches;
    }

    // (b) K=1 equals a discriminative step with the same query, exact
    PreparedSeq seq;
    seq.taus = {0.25, 0.5, 0.75, 1.0};
    seq.tokens = Tensor<float>({4, 16});
    Rng rng(67);
    for (auto& x : seq.tokens.v) x = static_cast<float>(rng.normal(0.0, 0.5));
    QueryBank bank1 = sample_queries(1, 16, 0.0, 0.02, 71);
    std::vector<Tensor<float>> gb(ps.entries.size());
    bom_training_step(ps, cfg, {seq}, bank1, gb);
    auto ps2 = ps;
    ps2.get("pred.query") = bank1.row(0);
    std::vector<Tensor<float>> gd(ps2.entries.size());
    disc_training_step(ps2, cfg, {seq}, gd);
    for (size_t e = 0; e < ps.entries.size(); ++e) {
        if (ps.entries[e].name == "pred.query") continue;
        for (size_t i = 0; i < gb[e].v.size(); ++i)
            if (gb[e].v[i] != gd[e].v[i]) {
                detail = "K=1 gradient differs from the discriminative step at " + ps.entries[e].name;
                return false;
            }
    }

    // (c) zero gradient through non-selected candidates, exact
    QueryBank bank = sample_queries(6, 16, 0.0, 0.02, 83);
    std::vector<Tensor<float>> g1(ps.entries.size());
    StepOutcome s1 = bom_training_step(ps, cfg, {seq}, bank, g1);
    int loser = -1;
    for (size_t k2 = 0; k2 < s1.hist.size(); ++k2)
        if (s1.hist[k2] == 0) loser = static_cast<int>(k2);
    if (loser < 0) {
        detail = "no unselected candidate to probe";
        return false;
    }
    QueryBank bank2 = bank;
    for (int64_t j = 0; j < 16; ++j) bank2.queries.at(loser, j) += 40.0f;
    std::vector<Tensor<float>> g2(ps.entries.size());
    StepOutcome s2 = bom_training_step(ps, cfg, {seq}, bank2, g2);
    if (s1.loss_bom != s2.loss_bom || s1.hist != s2.hist) {
        detail = "perturbing a non-selected query changed the selected loss";
        return false;
    }
    for (size_t e = 0; e < g1.size(); ++e)
        for (size_t i = 0; i < g1[e].v.size(); ++i)
            if (g1[e].v[i] != g2[e].v[i]) {
                detail = "perturbing a non-selected query changed a gradient";
                return false;
            }
    detail = fmt("min<=mean on %d batches; K=1 and detachment bitwise exact", batches);
    return true;
}

bool c3_causality(std::string& detail) {
    for (auto variant : {PredictorVariant::delta, PredictorVariant::spatial}) {
        PredictorConfig cfg;
        cfg.block = BlockConfig{16, 2, 2.0};
        cfg.blocks = 2;
        cfg.variant = variant;
        auto ps = init_predictor_params<double>(cfg, 7);
        roughen(ps, 8);
        const int t_len = 4, gh = 2, gw = 2;
        int rpt = (variant == PredictorVariant::spatial) ? gh * gw : 1;
        std::vector<double> taus = {0.25, 0.5, 0.75, 1.0};
        Tensor<double> data = randn64({t_len * rpt, 16}, 13, 0.5);
        Tensor<double> qvec = randn64({16}, 17, 0.02);

        auto forward = [&](const Tensor<double>& ctx, const std::vector<double>& ctx_taus,
                           const std::vector<double>& q_taus, const std::vector<int>& q_ctx) {
            Graph<double> g;
            g.grad_enabled = false;
            ParamBinder<double> bind(g, ps, true);
            auto qrows =
                g.broadcast_row(g.constant(qvec), static_cast<int64_t>(q_taus.size()) * rpt);
            auto out = (variant == PredictorVariant::spatial)
                           ? spatial_predict_rows(g, bind, cfg, ctx, ctx_taus, gh, gw, qrows,
                                                  q_taus, q_ctx)
                           : token_predict_rows(g, bind, cfg, ctx, ctx_taus, qrows, q_taus, q_ctx);
            return g.val(out);
        };

        Tensor<double> full_ctx({(t_len - 1) * rpt, 16});
        std::copy(data.v.begin(), data.v.begin() + (t_len - 1) * rpt * 16, full_ctx.v.begin());
        std::vector<double> ctx_taus(taus.begin(), taus.end() - 1);
        std::vector<int> q_ctx = {0, 1, 2, 3};
        Tensor<double> base = forward(full_ctx, ctx_taus, taus, q_ctx);

        // future-token perturbation: exact invariance for earlier targets
        Tensor<double> pert_ctx = full_ctx;
        for (int64_t j = 0; j < 16; ++j)
            for (int p = 0; p < rpt; ++p) pert_ctx.at((t_len - 2) * rpt + p, j) += 11.0 * (j % 5 + 1);
        Tensor<double> pert = forward(pert_ctx, ctx_taus, taus, q_ctx);
        for (int t = 0; t <= t_len - 2; ++t)  // targets seeing only tokens < t_len-2
            for (int p = 0; p < rpt; ++p)
                for (int64_t j = 0; j < 16; ++j)
                    if (pert.at(t * rpt + p, j) != base.at(t * rpt + p, j)) {
                        detail = fmt("%s: future perturbation leaked into target %d",
                                     predictor_variant_name(variant).c_str(), t);
                        return false;
                    }

        // parallel vs sequential within 1e-10
        for (int t = 0; t < t_len; ++t) {
            Tensor<double> pctx({t * rpt, 16});
            std::copy(data.v.begin(), data.v.begin() + t * rpt * 16, pctx.v.begin());
            std::vector<double> ptaus(taus.begin(), taus.begin() + t);
            Tensor<double> single = forward(pctx, ptaus, {taus[static_cast<size_t>(t)]}, {t});
            for (int p = 0; p < rpt; ++p)
                for (int64_t j = 0; j < 16; ++j)
                    if (std::abs(single.at(p, j) - base.at(t * rpt + p, j)) >= 1e-10) {
                        detail = fmt("%s: parallel/sequential gap %.2e at target %d",
                                     predictor_variant_name(variant).c_str(),
                                     std::abs(single.at(p, j) - base.at(t * rpt + p, j)), t);
                        return false;
                    }
        }
    }
    detail = "future-token invariance exact; parallel == sequential within 1e-10 (both variants)";
    return true;
}

bool c4_init_identity(std::string& detail) {
    double worst = 0.0;
    for (uint64_t seed = 0; seed < 3; ++seed) {
        TokenizerConfig cfg;  // desk dims: 4+4 blocks, D=64, 8x8 grid
        Tokenizer tok(cfg, 100 + seed);
        Rng rng(300 + seed);
        FeatureGrid x;
        x.gh = x.gw = 8;
        x.dim = 64;
        x.tokens = Tensor<float>({64, 64});
        for (auto& v : x.tokens.v) v = static_cast<float>(rng.normal());
        DeltaToken z;
        z.kind = TokenKind::delta;
        z.value = Tensor<float>({64});
        for (auto& v : z.value.v) v = static_cast<float>(rng.normal(0.0, 0.5));
        FeatureGrid out = tok.decode_delta(x, z);
        double num = 0, den = 0;
        for (size_t i = 0; i < out.tokens.v.size(); ++i) {
            double d = static_cast<double>(out.tokens.v[i]) - x.tokens.v[i];
            num += d * d;
            den += static_cast<double>(x.tokens.v[i]) * x.tokens.v[i];
        }
        worst = std::max(worst, std::sqrt(num) / std::sqrt(den));
    }
    detail = fmt("decode_delta deviates %.2e from x_prev at init (threshold 1e-3)", worst);
    return worst < 1e-3;
}

bool c5_token_reduction(std::string& detail) {
    ToyVfm vfm;
    ScenarioConfig c;
    c.frame_size = 64;
    c.duration = 0.5;
    VideoSequence seq = generate_sequence(c, 3);
    FeatureSequence fs = vfm.embed_sequence(seq);
    Tokenizer tok(TokenizerConfig{}, 5);
    auto tokens = tok.encode_sequence(fs, vfm.black_frame_grid(64));
    if (tokens.size() != fs.grids.size()) {
        detail = "token count != frame count";
        return false;
    }
    int64_t patch_tokens = fs.grids[0].tokens.rows();
    if (patch_tokens != 64 || tokens[0].value.numel() != 64) {
        detail = "desk-scale grid is not 8x8";
        return false;
    }
    int paper = (512 / 16) * (512 / 16);
    detail = fmt("1 token vs %lld patch tokens per frame (64x); 512^2/16 grid gives %dx",
                 static_cast<long long>(patch_tokens), paper);
    return paper == 1024;
}

struct LadderEval {
    EvalSummary disc, spatial, delta;
};

LadderEval eval_ladder() {
    Ladder& l = ladder();
    l.build();
    LadderEval ev;
    PredictorRuntime rt_disc{l.disc->model, l.disc->params};
    PredictorRuntime rt_sp{l.bom_spatial->model, l.bom_spatial->params};
    PredictorRuntime rt_dl{l.bom_delta->model, l.bom_delta->params};
    ev.disc = evaluate(rt_disc, nullptr, l.vfm, l.eval.seqs, l.eval.feats, *l.head,
                       l.proto(1, true));
    ev.spatial = evaluate(rt_sp, nullptr, l.vfm, l.eval.seqs, l.eval.feats, *l.head,
                          l.proto(20, false));
    ev.delta = evaluate(rt_dl, &*l.tokenizer, l.vfm, l.eval.seqs, l.eval.feats, *l.head,
                        l.proto(20, false));
    return ev;
}

LadderEval& ladder_eval() {
    static LadderEval ev = eval_ladder();
    return ev;
}

bool c6_ablation_trend(std::string& detail) {
    Ladder& l = ladder();
    LadderEval& ev = ladder_eval();
    double err0 = ev.disc.best_feature_loss;  // single deterministic prediction
    double best1 = ev.spatial.best_feature_loss, mean1 = ev.spatial.mean_feature_loss;
    double best3 = ev.delta.best_feature_loss, mean3 = ev.delta.mean_feature_loss;

    bool ok = (best3 <= best1) && (best1 < err0) && (mean3 <= 1.2 * err0) && (mean1 > err0);
    bool budget = l.disc_minutes <= 15 && l.spatial_minutes <= 15 && l.delta_minutes <= 15;
    detail = fmt(
        "best err (3)%.4f <= (1)%.4f < (0)%.4f; mean (3)%.4f <= 1.2*(0)%.4f, (1)%.4f > (0); "
        "train %.1f/%.1f/%.1f min",
        best3, best1, err0, mean3, 1.2 * err0, mean1, l.disc_minutes, l.spatial_minutes,
        l.delta_minutes);
    return ok && budget;
}

bool c7_mode_recovery(std::string& detail) {
    Ladder& l = ladder();
    l.build();
    Clock::time_point t0 = Clock::now();

    PredictorRuntime rt_disc{l.disc->model, l.disc->params};
    PredictorRuntime rt_dl{l.bom_delta->model, l.bom_delta->params};

    double cov_delta = 0, cov_disc = 0, centroid_ratio = 0;
    int n = static_cast<int>(l.eval.seqs.size());
    for (int i = 0; i < n; ++i) {
        const VideoSequence& seq = l.eval.seqs[static_cast<size_t>(i)];
        const FeatureSequence& feats = l.eval.feats[static_cast<size_t>(i)];
        RolloutSet rs_delta = rollout(rt_dl, &*l.tokenizer, l.vfm, seq, feats, 3, l.proto(20, false));
        RolloutSet rs_disc = rollout(rt_disc, nullptr, l.vfm, seq, feats, 3, l.proto(1, true));

        auto futures = branch_futures(seq, rs_delta.last_context_frame, 2, 0);
        int target = rs_delta.target_frames.back();
        std::vector<Tensor<float>> branches;
        for (const auto& f : futures)
            branches.push_back(l.vfm.embed_frame(f.frame_ptr(target), 64).tokens);
        cov_delta += mode_coverage(rs_delta, branches);
        cov_disc += mode_coverage(rs_disc, branches);

        // the discriminative prediction sits near the inter-mode midpoint
        auto c = soft_centroid(rs_disc.trajectories[0].grids.back().tokens, 8, 8, 8, *l.head);
        const auto& o0 = futures[0].trace[static_cast<size_t>(target)].objects[0];
        const auto& o1 = futures[1].trace[static_cast<size_t>(target)].objects[0];
        double mx = 0.5 * (o0.x + o1.x), my = 0.5 * (o0.y + o1.y);
        double sep = std::hypot(o0.x - o1.x, o0.y - o1.y);
        double dist = std::hypot(c[0] - mx, c[1] - my);
        centroid_ratio += dist / (0.25 * sep);
    }
    cov_delta /= n;
    cov_disc /= n;
    centroid_ratio /= n;

    bool ok = (cov_delta == 1.0) && (cov_disc <= 0.5 + 0.05) && (centroid_ratio <= 1.0);
    detail = fmt("coverage: delta %.3f (need 1.0), disc %.3f (need <=0.55); centroid at %.2f of the "
                 "25%% midpoint bound; eval %.1f min",
                 cov_delta, cov_disc, centroid_ratio, minutes_since(t0));
    return ok;
}

bool c8_sweep(std::string& detail) {
    Ladder& l = ladder();
    l.build();
    Clock::time_point t0 = Clock::now();

    PredictorConfig pcfg;
    PredictorTrainConfig tcfg;
    tcfg.iters = 400;
    tcfg.batch = 4;
    tcfg.seq_len = 8;
    tcfg.lr_peak = 1e-3;
    tcfg.seed = 3;
    SweepResult res = sweep_k({1, 4, 16}, {1, 4, 16}, l.train.feats, &*l.cache, pcfg, tcfg,
                              *l.tokenizer, l.vfm, l.eval.seqs, l.eval.feats, *l.head,
                              l.proto(20, false));

    bool mono = true, k1_eq = true;
    for (size_t row = 0; row < res.train_ks.size(); ++row) {
        double prev = 0;
        for (size_t col = 0; col < res.eval_ks.size(); ++col) {
            const SweepCell& cell = res.cells[row * res.eval_ks.size() + col];
            if (col > 0 && cell.best_feature_loss > prev) mono = false;
            prev = cell.best_feature_loss;
            if (res.eval_ks[col] == 1 && cell.best_miou != cell.mean_miou) k1_eq = false;
        }
    }
    double mins = minutes_since(t0);
    detail = fmt("3x3 grid in %.1f min (budget 45); best-loss monotone in eval-K: %s; "
                 "best==mean at K=1: %s",
                 mins, mono ? "yes" : "NO", k1_eq ? "yes" : "NO");
    return mono && k1_eq && mins <= 45.0;
}

bool c9_flops(std::string& detail) {
    TokenizerConfig tok_cfg;
    tok_cfg.grid_h = tok_cfg.grid_w = 4;
    PredictorConfig pd;
    pd.variant = PredictorVariant::delta;
    PredictorConfig sp;
    sp.variant = PredictorVariant::spatial;

    auto checks = verify_against_counter(32, tok_cfg, pd, sp);
    for (const auto& c : checks)
        if (!c.match()) {
            detail = c.component + ": analytic " + std::to_string(c.analytic) + " != measured " +
                     std::to_string(c.measured);
            return false;
        }

    TokenizerConfig tok64;
    FlopsReport rep = pipeline_breakdown(PredictorVariant::delta, 20, 4, 3, 64, tok64, pd);
    std::vector<uint64_t> dec, pred;
    for (const auto& r : rep.rows) {
        if (r.component.find("decoder") != std::string::npos) dec.push_back(r.macs);
        if (r.component.find("predictor") != std::string::npos) pred.push_back(r.macs);
    }
    bool dec_const = dec.size() == 3 && dec[0] == dec[1] && dec[1] == dec[2];

    bool fs_invariant = true;
    for (int fs : {32, 128}) {
        FlopsReport r2 = pipeline_breakdown(PredictorVariant::delta, 20, 4, 3, fs, tok64, pd);
        std::vector<uint64_t> p2;
        for (const auto& r : r2.rows)
            if (r.component.find("predictor") != std::string::npos) p2.push_back(r.macs);
        fs_invariant = fs_invariant && (p2 == pred);
    }

    bool sp_grows = true;
    uint64_t prev = 0;
    for (int ctx = 1; ctx <= 6; ++ctx) {
        uint64_t c = count_predictor_spatial_step(sp, ctx, 8, 8);
        if (c <= prev) sp_grows = false;
        prev = c;
    }
    detail = fmt("%zu instrumented components exact; decoder constant over context 4/5/6: %s; "
                 "delta predictor frame-size invariant: %s; spatial strictly increasing: %s",
                 checks.size(), dec_const ? "yes" : "NO", fs_invariant ? "yes" : "NO",
                 sp_grows ? "yes" : "NO");
    return dec_const && fs_invariant && sp_grows;
}

bool c10_protocol(std::string& detail) {
    ToyVfm vfm;
    // sigma = 0: best == mean == the deterministic score, exactly
    ScenarioConfig dc;
    dc.frame_size = 64;
    dc.num_objects = 2;
    dc.duration = 1.75;
    dc.min_speed = 18.0;
    dc.max_speed = 26.0;
    dc.object_size = 14.0;
    World w = make_world(vfm, dc, 4, 600);
    TaskHeadTrainConfig hc;
    hc.iters = 200;
    TaskHead head = train_task_head(w.feats, w.seqs, 3, hc);

    Tokenizer tok(TokenizerConfig{}, 9);
    PredictorConfig pcfg;
    pcfg.blocks = 2;
    PredictorRuntime rt{pcfg, init_predictor_params<float>(pcfg, 21)};
    for (auto& e : rt.params.entries)
        if (e.name.find(".ls") != std::string::npos) e.value.fill(0.3f);

    EvalProtocol proto;
    proto.k_eval = 20;
    proto.query_sigma = 0.0;
    proto.seed = 4;
    for (size_t i = 0; i < w.seqs.size(); ++i) {
        RolloutSet rs = rollout(rt, &tok, vfm, w.seqs[i], w.feats[i], 3, proto);
        int target = rs.target_frames.back();
        auto labels = patch_labels(w.seqs[i], target, 8);
        const auto& gt = w.feats[i].grids[static_cast<size_t>(target)];
        double best = score_best(rs, gt.tokens, labels, head);
        double mean = score_mean(rs, labels, head);
        EvalProtocol p1 = proto;
        p1.k_eval = 1;
        RolloutSet r1 = rollout(rt, &tok, vfm, w.seqs[i], w.feats[i], 3, p1);
        double single = score_best(r1, gt.tokens, labels, head);
        if (best != mean || best != single) {
            detail = fmt("sigma=0: best %.9g mean %.9g single %.9g differ", best, mean, single);
            return false;
        }
    }

    // copy-last == present on a static corpus, exactly
    ScenarioConfig sc = dc;
    sc.min_speed = sc.max_speed = 0.0;
    World stat = make_world(vfm, sc, 4, 700);
    TaskHead shead = train_task_head(stat.feats, stat.seqs, 3, hc);
    for (size_t i = 0; i < stat.seqs.size(); ++i) {
        auto labels = patch_labels(stat.seqs[i], 24, 8);
        double cl = copy_last_score(stat.feats[i].grids[12], labels, shead);
        double pr = present_score(stat.feats[i].grids[24], labels, shead);
        if (cl != pr) {
            detail = fmt("static corpus: copy-last %.9g != present %.9g", cl, pr);
            return false;
        }
    }

    // constructed counterexample: selection follows feature loss, not the metric
    TaskHead toy;
    toy.num_classes = 2;
    toy.mean = Tensor<float>({4});
    toy.inv_std = Tensor<float>::full({4}, 1.0f);
    toy.w = Tensor<float>({2, 4});
    toy.b = Tensor<float>({2});
    toy.w.at(1, 0) = 10.0f;
    Tensor<float> gt({4, 4});
    for (int i = 0; i < 4; ++i) gt.at(i, 0) = 0.1f;
    std::vector<int> labels = {1, 1, 1, 1};
    auto mk = [&](float f0, double loss) {
        Trajectory tr;
        FeatureGrid g;
        g.gh = g.gw = 2;
        g.dim = 4;
        g.tokens = Tensor<float>({4, 4});
        for (int i = 0; i < 4; ++i) g.tokens.at(i, 0) = f0;
        tr.grids.push_back(g);
        tr.final_feature_loss = loss;
        return tr;
    };
    RolloutSet rs;
    rs.trajectories.push_back(mk(-0.001f, 0.01));  // loss winner, metric loser
    rs.trajectories.push_back(mk(3.0f, 0.5));      // metric winner, loss loser
    double got = score_best(rs, gt, labels, toy);
    auto alt = toy.predict(rs.trajectories[1].grids[0].tokens);
    if (got != 0.0 || compute_miou(alt, labels, 2) != 1.0) {
        detail = "best selection did not follow the feature loss in the counterexample";
        return false;
    }
    detail = "sigma=0 degeneracy exact; static copy-last == present; counterexample selects by loss";
    return true;
}

bool c11_reproducibility(std::string& detail, const std::string& out_root) {
    Clock::time_point t0 = Clock::now();
    fs::path root = fs::path(out_root) / "smoke";
    fs::remove_all(root);

    auto run_pipeline = [&](const std::string& tag) {
        fs::path dir = root / tag;
        fs::create_directories(dir);
        auto p = [&](const std::string& rel) { return (dir / rel).string(); };
        std::vector<std::vector<std::string>> cmds = {
            {"gen-data", "--out", p("data"), "--set", "data.frame_size=32",
             "--set", "data.object_size=8", "--set", "data.duration=1.75",
             "--set", "data.dynamics=bimodal-branch", "--set", "data.min_speed=10",
             "--set", "data.max_speed=14", "--set", "data.count=4", "--set", "data.seed=21"},
            {"train-tokenizer", "--data", p("data"), "--out", p("tok.ckpt"), "--mode", "delta",
             "--log", p("tok_log.csv"), "--set", "train.iters=40", "--set", "train.batch=4"},
            {"train-predictor", "--data", p("data"), "--mode", "bom-delta", "--tokenizer",
             p("tok.ckpt"), "--out", p("pred.ckpt"), "--log", p("pred_log.csv"),
             "--set", "train.iters=30", "--set", "train.batch=2", "--set", "train.seq_len=5",
             "--set", "train.k_train=4", "--set", "model.pred_blocks=2"},
            {"eval", "--data", p("data"), "--predictor", p("pred.ckpt"), "--tokenizer",
             p("tok.ckpt"), "--out", p("eval"), "--set", "eval.k=4",
             "--set", "eval.head_iters=60"},
            {"flops", "--variant", "delta", "--frame-size", "32", "--out", p("flops")},
            {"plot", "--kind", "bars", "--in", p("eval/plotdata_bars.csv"), "--out", p("bars.png")},
        };
        for (auto& c : cmds)
            if (run_cli(c) != 0) return false;
        return true;
    };

    if (!run_pipeline("run1") || !run_pipeline("run2")) {
        detail = "smoke pipeline command failed";
        return false;
    }

    std::vector<std::string> artifacts = {
        "data/manifest.txt", "data/seq_0.frames.f32le", "data/seq_0.labels.u8",
        "data/seq_0.trace.txt", "tok.ckpt", "tok_log.csv", "pred.ckpt", "pred_log.csv",
        "eval/metrics.csv", "eval/summary.json", "eval/plotdata_bars.csv", "flops/flops.csv",
        "bars.png", "bars.csv"};
    for (const auto& a : artifacts) {
        std::ifstream f1(root / "run1" / a, std::ios::binary), f2(root / "run2" / a, std::ios::binary);
        if (!f1 || !f2) {
            detail = "missing artifact " + a;
            return false;
        }
        std::string s1((std::istreambuf_iterator<char>(f1)), {});
        std::string s2((std::istreambuf_iterator<char>(f2)), {});
        if (s1 != s2) {
            detail = "artifact differs between identical runs: " + a;
            return false;
        }
    }
    detail = fmt("%zu artifacts byte-identical across reruns (%.1f min)", artifacts.size(),
                 minutes_since(t0));
    return true;
}

}  // namespace

int main(int argc, char** argv) {
    std::string out_root = "acceptance_out";
    std::set<int> only;
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--out") == 0 && i + 1 < argc) out_root = argv[++i];
        else if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) only.insert(std::atoi(argv[++i]));
    }
    fs::create_directories(out_root);

    struct Item {
        int id;
        const char* name;
        std::function<bool(std::string&)> run;
    };
    std::vector<Item> items = {
        {1, "gradient correctness", c1_gradients},
        {2, "BoM exactness", c2_bom_exactness},
        {3, "causality & teacher forcing", c3_causality},
        {4, "tokenizer init identity", c4_init_identity},
        {5, "token reduction", c5_token_reduction},
        {6, "ablation-ladder trend", c6_ablation_trend},
        {7, "mode recovery", c7_mode_recovery},
        {8, "sweep monotonicity", c8_sweep},
        {9, "FLOPs structure", c9_flops},
        {10, "protocol fidelity", c10_protocol},
        {11, "reproducibility", [&](std::string& d) { return c11_reproducibility(d, out_root); }},
    };

    int failures = 0;
    for (auto& item : items) {
        if (!only.empty() && !only.count(item.id)) continue;
        std::string detail;
        bool ok = false;
        try {
            ok = item.run(detail);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        std::printf("[%2d] %s %s: %s\n", item.id, ok ? "PASS" : "FAIL", item.name, detail.c_str());
        std::fflush(stdout);
        if (!ok) ++failures;
    }
    if (failures) std::printf("%d criterion(s) failed\n", failures);
    else std::printf("all criteria passed\n");
    return failures == 0 ? 0 : 1;
}
