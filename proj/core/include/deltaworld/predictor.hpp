#pragma once

#include <string>
#include <vector>

#include "deltaworld/errors.hpp"
#include "deltaworld/graph.hpp"
#include "deltaworld/nn.hpp"
#include "deltaworld/tokenizer.hpp"
#include "deltaworld/toyvfm.hpp"

namespace dw {

enum class PredictorVariant { spatial, frame, delta };

std::string predictor_variant_name(PredictorVariant v);
PredictorVariant predictor_variant_from_name(const std::string& s);

struct PredictorConfig {
    BlockConfig block{64, 4, 4.0};
    int blocks = 4;
    PredictorVariant variant = PredictorVariant::delta;
    double rope_base = 100.0;
    double time_scale = 16.0;  // seconds -> rotary position units
    double smooth_l1_beta = 0.1;

    RopePlan rope_plan() const {
        int axes = (variant == PredictorVariant::spatial) ? 3 : 1;
        return make_rope_plan(axes, block.heads, block.head_dim(), rope_base,
                              {time_scale, 1.0, 1.0});
    }
};

// Blocks plus the learned query; the spatial variant adds a final layer
// normalization so predictions live in the extractor's normalized feature
// space, while token variants match the tokenizer's un-normalized output.
template <typename T>
ParamSet<T> init_predictor_params(const PredictorConfig& cfg, uint64_t seed) {
    ParamSet<T> ps;
    Rng rng(seed);
    ps.add("pred.query", {cfg.block.dim}) = trunc_normal_tensor<T>({cfg.block.dim}, kInitSigma, rng);
    for (int b = 0; b < cfg.blocks; ++b)
        init_block_params(ps, "pred.blk" + std::to_string(b), cfg.block, rng);
    if (cfg.variant == PredictorVariant::spatial) {
        ps.add("pred.lnf.g", {cfg.block.dim}).fill(T(1));
        ps.add("pred.lnf.b", {cfg.block.dim});
    }
    return ps;
}

// Core two-stream pass. Context rows self-attend under mask_cc; each query
// row cross-attends to the context rows allowed by its mask_qc row plus its
// own slot, and never to other query rows. With a causal mask_cc this equals
// an interleaved single pass over [context, queries], computed without the
// dense query-query score block.
template <typename T>
typename Graph<T>::Var predictor_forward(Graph<T>& g, ParamBinder<T>& bind,
                                         const PredictorConfig& cfg, typename Graph<T>::Var ctx,
                                         Positions ctx_pos, typename Graph<T>::Var queries,
                                         Positions q_pos, Mask mask_cc, Mask mask_qc) {
    RopePlan plan = cfg.rope_plan();
    auto xq = queries;
    auto xc = ctx;
    for (int b = 0; b < cfg.blocks; ++b) {
        auto blk = bind_block(bind, "pred.blk" + std::to_string(b));
        AttnKV<T> kv;
        xc = block_self(g, xc, blk, cfg.block.heads, mask_cc, &plan, ctx_pos, &kv);
        xq = block_query(g, xq, blk, cfg.block.heads, kv, mask_qc, &plan, q_pos);
    }
    if (cfg.variant == PredictorVariant::spatial)
        xq = g.layernorm(xq, bind("pred.lnf.g"), bind("pred.lnf.b"));
    return xq;
}

// ---- token variants (frame / delta): one token per frame ----

// Predict one row per query: row r uses target timestamp query_taus[r] and
// sees the first query_ctx_len[r] context tokens (strictly earlier
// timestamps). Query row values are given in query_rows.
template <typename T>
typename Graph<T>::Var token_predict_rows(Graph<T>& g, ParamBinder<T>& bind,
                                          const PredictorConfig& cfg, const Tensor<T>& ctx_tokens,
                                          const std::vector<double>& ctx_taus,
                                          typename Graph<T>::Var query_rows,
                                          const std::vector<double>& query_taus,
                                          const std::vector<int>& query_ctx_len) {
    int64_t nc = ctx_tokens.rows();
    int64_t nq = g.val(query_rows).rows();
    if (static_cast<int64_t>(ctx_taus.size()) != nc) throw ShapeError("ctx_taus size");
    if (static_cast<int64_t>(query_taus.size()) != nq || static_cast<int64_t>(query_ctx_len.size()) != nq)
        throw ShapeError("query row metadata size");

    auto ctx_pos = std::make_shared<Tensor<double>>(std::vector<int64_t>{nc, 1});
    for (int64_t i = 0; i < nc; ++i) ctx_pos->at(i, 0) = ctx_taus[static_cast<size_t>(i)];
    auto q_pos = std::make_shared<Tensor<double>>(std::vector<int64_t>{nq, 1});
    for (int64_t i = 0; i < nq; ++i) q_pos->at(i, 0) = query_taus[static_cast<size_t>(i)];

    auto mask_cc = std::make_shared<Tensor<uint8_t>>(std::vector<int64_t>{nc, nc});
    for (int64_t i = 0; i < nc; ++i)
        for (int64_t j = 0; j <= i; ++j) mask_cc->at(i, j) = 1;
    auto mask_qc = std::make_shared<Tensor<uint8_t>>(std::vector<int64_t>{nq, nc});
    for (int64_t r = 0; r < nq; ++r) {
        int len = query_ctx_len[static_cast<size_t>(r)];
        if (len < 0 || len > nc) throw ShapeError("query_ctx_len out of range");
        for (int64_t j = 0; j < len; ++j) mask_qc->at(r, j) = 1;
    }
    return predictor_forward(g, bind, cfg, g.constant(ctx_tokens), ctx_pos, query_rows, q_pos,
                             mask_cc, mask_qc);
}

// ---- spatial variant: HxW patch tokens per frame ----

// Context is frames*HW rows; each query target expands to HW rows sharing
// one query vector but distinct (h, w) rotary positions, so predictions are
// position-dependent and computed independently per location.
template <typename T>
typename Graph<T>::Var spatial_predict_rows(Graph<T>& g, ParamBinder<T>& bind,
                                            const PredictorConfig& cfg, const Tensor<T>& ctx_grids,
                                            const std::vector<double>& ctx_taus, int gh, int gw,
                                            typename Graph<T>::Var query_rows,
                                            const std::vector<double>& query_taus,
                                            const std::vector<int>& query_ctx_frames) {
    int64_t hw = static_cast<int64_t>(gh) * gw;
    int64_t tc = static_cast<int64_t>(ctx_taus.size());
    int64_t nc = ctx_grids.rows();
    if (nc != tc * hw) throw ShapeError("ctx grid rows != frames*hw");
    int64_t rq = static_cast<int64_t>(query_taus.size());
    if (g.val(query_rows).rows() != rq * hw) throw ShapeError("query rows != targets*hw");

    auto ctx_pos = std::make_shared<Tensor<double>>(std::vector<int64_t>{nc, 3});
    for (int64_t f = 0; f < tc; ++f)
        for (int64_t y = 0; y < gh; ++y)
            for (int64_t x = 0; x < gw; ++x) {
                int64_t r = f * hw + y * gw + x;
                ctx_pos->at(r, 0) = ctx_taus[static_cast<size_t>(f)];
                ctx_pos->at(r, 1) = static_cast<double>(y);
                ctx_pos->at(r, 2) = static_cast<double>(x);
            }
    auto q_pos = std::make_shared<Tensor<double>>(std::vector<int64_t>{rq * hw, 3});
    for (int64_t t = 0; t < rq; ++t)
        for (int64_t y = 0; y < gh; ++y)
            for (int64_t x = 0; x < gw; ++x) {
                int64_t r = t * hw + y * gw + x;
                q_pos->at(r, 0) = query_taus[static_cast<size_t>(t)];
                q_pos->at(r, 1) = static_cast<double>(y);
                q_pos->at(r, 2) = static_cast<double>(x);
            }

    // block-causal: a context token attends to all tokens of its own and
    // earlier frames
    auto mask_cc = std::make_shared<Tensor<uint8_t>>(std::vector<int64_t>{nc, nc});
    for (int64_t i = 0; i < nc; ++i) {
        int64_t fi = i / hw;
        for (int64_t j = 0; j < (fi + 1) * hw; ++j) mask_cc->at(i, j) = 1;
    }
    auto mask_qc = std::make_shared<Tensor<uint8_t>>(std::vector<int64_t>{rq * hw, nc});
    for (int64_t t = 0; t < rq; ++t) {
        int frames = query_ctx_frames[static_cast<size_t>(t)];
        if (frames < 0 || frames > tc) throw ShapeError("query_ctx_frames out of range");
        for (int64_t p = 0; p < hw; ++p)
            for (int64_t j = 0; j < frames * hw; ++j) mask_qc->at(t * hw + p, j) = 1;
    }
    return predictor_forward(g, bind, cfg, g.constant(ctx_grids), ctx_pos, query_rows, q_pos,
                             mask_cc, mask_qc);
}

// ---- timestamp sampling ----

struct SampledWindow {
    std::vector<int> idx;      // frame indices into the source sequence
    std::vector<double> taus;  // their actual timestamps
};

// Consecutive offsets drawn U[dt_min, dt_max] seconds, rounded to the
// nearest available frame (at least one); the window start is uniform over
// the feasible range and the frames' actual timestamps are kept.
SampledWindow sample_training_timestamps(const FeatureSequence& fs, int seq_len, double dt_min,
                                         double dt_max, Rng& rng);

// ---- single-step prediction (rollout / eval) ----

Tensor<float> predict_token_step(const ParamSet<float>& ps, const PredictorConfig& cfg,
                                 const Tensor<float>& ctx_tokens, const std::vector<double>& ctx_taus,
                                 const Tensor<float>& query, double tau_next);

// all spatial positions of the next frame in one pass: returns [HW, D]
Tensor<float> predict_spatial_step(const ParamSet<float>& ps, const PredictorConfig& cfg,
                                   const Tensor<float>& ctx_grids, const std::vector<double>& ctx_taus,
                                   int gh, int gw, const Tensor<float>& query, double tau_next);

// one spatial location (h, w), matching the per-location formulation
Tensor<float> predict_spatial_at(const ParamSet<float>& ps, const PredictorConfig& cfg,
                                 const Tensor<float>& ctx_grids, const std::vector<double>& ctx_taus,
                                 int gh, int gw, const Tensor<float>& query, double tau_next, int h,
                                 int w);

}  // namespace dw
