#include "deltaworld/predictor.hpp"

#include <cmath>

namespace dw {

std::string predictor_variant_name(PredictorVariant v) {
    switch (v) {
        case PredictorVariant::spatial: return "spatial";
        case PredictorVariant::frame: return "frame";
        case PredictorVariant::delta: return "delta";
    }
    throw ConfigError("unknown predictor variant");
}

PredictorVariant predictor_variant_from_name(const std::string& s) {
    if (s == "spatial") return PredictorVariant::spatial;
    if (s == "frame") return PredictorVariant::frame;
    if (s == "delta") return PredictorVariant::delta;
    throw ConfigError("unknown predictor variant: " + s);
}

SampledWindow sample_training_timestamps(const FeatureSequence& fs, int seq_len, double dt_min,
                                         double dt_max, Rng& rng) {
    int t_count = static_cast<int>(fs.grids.size());
    if (t_count < seq_len) throw ConfigError("sequence shorter than the training window");
    double fps = 1.0;
    if (t_count > 1) fps = 1.0 / (fs.timestamps[1] - fs.timestamps[0]);

    std::vector<int> offs(static_cast<size_t>(seq_len - 1));
    int total = 0;
    for (auto& k : offs) {
        double dt = rng.uniform(dt_min, dt_max);
        k = rounded_offset_frames(dt, fps);
        total += k;
    }
    // shrink the largest offsets if the window overruns the sequence
    while (total > t_count - 1) {
        int best = -1;
        for (size_t j = 0; j < offs.size(); ++j)
            if (offs[j] > 1 && (best < 0 || offs[j] > offs[static_cast<size_t>(best)]))
                best = static_cast<int>(j);
        if (best < 0) throw ConfigError("cannot fit training window");
        --offs[static_cast<size_t>(best)];
        --total;
    }
    int start = static_cast<int>(rng.below(static_cast<uint64_t>(t_count - total)));

    SampledWindow w;
    w.idx.resize(static_cast<size_t>(seq_len));
    w.taus.resize(static_cast<size_t>(seq_len));
    int cur = start;
    for (int j = 0; j < seq_len; ++j) {
        if (j > 0) cur += offs[static_cast<size_t>(j - 1)];
        w.idx[static_cast<size_t>(j)] = cur;
        w.taus[static_cast<size_t>(j)] = fs.timestamps[static_cast<size_t>(cur)];
    }
    return w;
}

Tensor<float> predict_token_step(const ParamSet<float>& ps, const PredictorConfig& cfg,
                                 const Tensor<float>& ctx_tokens, const std::vector<double>& ctx_taus,
                                 const Tensor<float>& query, double tau_next) {
    Graph<float> g;
    g.grad_enabled = false;
    ParamBinder<float> bind(g, ps, true);
    Tensor<float> qrow = query;
    qrow.shape = {1, cfg.block.dim};
    auto out = token_predict_rows(g, bind, cfg, ctx_tokens, ctx_taus, g.constant(std::move(qrow)),
                                  {tau_next}, {static_cast<int>(ctx_tokens.rows())});
    Tensor<float> res = g.val(out);
    res.shape = {cfg.block.dim};
    return res;
}

Tensor<float> predict_spatial_step(const ParamSet<float>& ps, const PredictorConfig& cfg,
                                   const Tensor<float>& ctx_grids, const std::vector<double>& ctx_taus,
                                   int gh, int gw, const Tensor<float>& query, double tau_next) {
    if (ctx_taus.empty()) throw ConfigError("spatial prediction needs a non-empty context");
    Graph<float> g;
    g.grad_enabled = false;
    ParamBinder<float> bind(g, ps, true);
    int64_t hw = static_cast<int64_t>(gh) * gw;
    auto qrows = g.broadcast_row(g.constant(query), hw);
    auto out = spatial_predict_rows(g, bind, cfg, ctx_grids, ctx_taus, gh, gw, qrows, {tau_next},
                                    {static_cast<int>(ctx_taus.size())});
    return g.val(out);
}

Tensor<float> predict_spatial_at(const ParamSet<float>& ps, const PredictorConfig& cfg,
                                 const Tensor<float>& ctx_grids, const std::vector<double>& ctx_taus,
                                 int gh, int gw, const Tensor<float>& query, double tau_next, int h,
                                 int w) {
    Tensor<float> full = predict_spatial_step(ps, cfg, ctx_grids, ctx_taus, gh, gw, query, tau_next);
    Tensor<float> out({cfg.block.dim});
    const float* row = full.row_ptr(static_cast<int64_t>(h) * gw + w);
    std::copy(row, row + cfg.block.dim, out.v.begin());
    return out;
}

}  // namespace dw
