#include "deltaworld/flops.hpp"

#include <cstdio>

#include "deltaworld/toyvfm.hpp"

namespace dw {

uint64_t count_linear(int64_t rows, int64_t out, int64_t in) {
    return static_cast<uint64_t>(rows) * static_cast<uint64_t>(out) * static_cast<uint64_t>(in);
}

uint64_t count_block(const BlockConfig& cfg, int64_t seq_len) {
    if (seq_len <= 0) return 0;
    uint64_t d = static_cast<uint64_t>(cfg.dim);
    uint64_t n = static_cast<uint64_t>(seq_len);
    uint64_t h = static_cast<uint64_t>(cfg.mlp_hidden());
    uint64_t proj = 4 * n * d * d;
    uint64_t attn = 2 * n * n * d;
    uint64_t mlp = 2 * n * d * h;
    return proj + attn + mlp;
}

uint64_t count_query_block(const BlockConfig& cfg, int64_t nq, int64_t nc) {
    if (nq <= 0) return 0;
    uint64_t d = static_cast<uint64_t>(cfg.dim);
    uint64_t q = static_cast<uint64_t>(nq);
    uint64_t h = static_cast<uint64_t>(cfg.mlp_hidden());
    uint64_t proj = 4 * q * d * d;
    uint64_t attn = 2 * q * static_cast<uint64_t>(nc + 1) * d;
    uint64_t mlp = 2 * q * d * h;
    return proj + attn + mlp;
}

uint64_t count_backbone_frame(int frame_size) {
    int g = frame_size / ToyVfm::kPatch;
    int64_t hw = static_cast<int64_t>(g) * g;
    BlockConfig cfg{ToyVfm::kDim, ToyVfm::kHeads, 4.0};
    uint64_t macs = count_linear(hw, ToyVfm::kDim, ToyVfm::kPatch * ToyVfm::kPatch * 3);
    for (int b = 0; b < ToyVfm::kBlocks; ++b) macs += count_block(cfg, hw);
    return macs;
}

uint64_t count_tokenizer_encode(const TokenizerConfig& cfg, int gh, int gw) {
    int64_t hw = static_cast<int64_t>(gh) * gw;
    int64_t rows = (cfg.mode == TokenizerMode::delta ? 2 * hw : hw) + 1;
    return static_cast<uint64_t>(cfg.encoder_blocks) * count_block(cfg.block, rows);
}

uint64_t count_tokenizer_decode(const TokenizerConfig& cfg, int gh, int gw) {
    int64_t hw = static_cast<int64_t>(gh) * gw;
    return static_cast<uint64_t>(cfg.decoder_blocks) * count_block(cfg.block, hw + 1);
}

uint64_t count_predictor_token_step(const PredictorConfig& cfg, int ctx_tokens) {
    uint64_t macs = 0;
    for (int b = 0; b < cfg.blocks; ++b) {
        macs += count_block(cfg.block, ctx_tokens);
        macs += count_query_block(cfg.block, 1, ctx_tokens);
    }
    return macs;
}

uint64_t count_predictor_spatial_step(const PredictorConfig& cfg, int ctx_frames, int gh, int gw) {
    int64_t hw = static_cast<int64_t>(gh) * gw;
    int64_t nc = static_cast<int64_t>(ctx_frames) * hw;
    uint64_t macs = 0;
    for (int b = 0; b < cfg.blocks; ++b) {
        macs += count_block(cfg.block, nc);
        macs += count_query_block(cfg.block, hw, nc);
    }
    return macs;
}

uint64_t FlopsReport::shared_macs() const {
    uint64_t s = 0;
    for (const auto& r : rows)
        if (!r.per_sample) s += r.macs;
    return s;
}

uint64_t FlopsReport::per_sample_macs() const {
    uint64_t s = 0;
    for (const auto& r : rows)
        if (r.per_sample) s += r.macs;
    return s;
}

FlopsReport pipeline_breakdown(PredictorVariant variant, int k, int context_frames,
                               int rollout_steps, int frame_size, const TokenizerConfig& tok_cfg,
                               const PredictorConfig& pred_cfg) {
    if (k < 1 || context_frames < 1 || rollout_steps < 1)
        throw ConfigError("pipeline_breakdown: k, context and steps must be positive");
    int g = frame_size / ToyVfm::kPatch;
    FlopsReport rep;
    rep.variant = variant;
    rep.k = k;
    rep.context_frames = context_frames;
    rep.rollout_steps = rollout_steps;
    rep.frame_size = frame_size;

    rep.rows.push_back({"backbone (" + std::to_string(context_frames) + " frames)", false,
                        static_cast<uint64_t>(context_frames) * count_backbone_frame(frame_size)});
    if (variant != PredictorVariant::spatial) {
        std::string enc = variant == PredictorVariant::delta ? "delta encoder" : "frame encoder";
        rep.rows.push_back({enc + " (" + std::to_string(context_frames) + " frames)", false,
                            static_cast<uint64_t>(context_frames) * count_tokenizer_encode(tok_cfg, g, g)});
    }
    for (int s = 0; s < rollout_steps; ++s) {
        int ctx = context_frames + s;
        uint64_t macs = (variant == PredictorVariant::spatial)
                            ? count_predictor_spatial_step(pred_cfg, ctx, g, g)
                            : count_predictor_token_step(pred_cfg, ctx);
        rep.rows.push_back(
            {"predictor (" + std::to_string(ctx) + "-" +
                 (variant == PredictorVariant::spatial ? std::string("frame") : std::string("token")) +
                 " context)",
             true, macs});
    }
    if (variant != PredictorVariant::spatial) {
        std::string dec = variant == PredictorVariant::delta ? "delta decoder" : "frame decoder";
        for (int s = 0; s < rollout_steps; ++s)
            rep.rows.push_back(
                {dec + " (step " + std::to_string(s + 1) + ")", true, count_tokenizer_decode(tok_cfg, g, g)});
    }
    return rep;
}

std::vector<CounterCheck> verify_against_counter(int frame_size, const TokenizerConfig& tok_cfg,
                                                 const PredictorConfig& delta_cfg,
                                                 const PredictorConfig& spatial_cfg) {
    std::vector<CounterCheck> checks;
    ToyVfm vfm;
    int g = frame_size / ToyVfm::kPatch;
    int64_t hw = static_cast<int64_t>(g) * g;

    {
        std::vector<float> frame(static_cast<size_t>(frame_size) * frame_size * 3, 0.25f);
        MacScope scope;
        vfm.embed_frame(frame.data(), frame_size);
        checks.push_back({"backbone frame", count_backbone_frame(frame_size), scope.macs()});
    }

    Tokenizer tok(tok_cfg, 5);
    FeatureGrid a, b;
    a.gh = b.gh = g;
    a.gw = b.gw = g;
    a.dim = b.dim = tok_cfg.block.dim;
    a.tokens = Tensor<float>({hw, tok_cfg.block.dim});
    b.tokens = Tensor<float>({hw, tok_cfg.block.dim});
    for (size_t i = 0; i < a.tokens.v.size(); ++i) {
        a.tokens.v[i] = static_cast<float>(i % 7) * 0.1f;
        b.tokens.v[i] = static_cast<float>(i % 5) * 0.1f;
    }
    DeltaToken z;
    {
        MacScope scope;
        z = (tok_cfg.mode == TokenizerMode::delta) ? tok.encode_delta(a, b) : tok.encode_frame(b);
        checks.push_back({"tokenizer encoder", count_tokenizer_encode(tok_cfg, g, g), scope.macs()});
    }
    {
        MacScope scope;
        if (tok_cfg.mode == TokenizerMode::delta)
            tok.decode_delta(a, z);
        else
            tok.decode_frame(z, g, g);
        checks.push_back({"tokenizer decoder", count_tokenizer_decode(tok_cfg, g, g), scope.macs()});
    }

    {
        auto ps = init_predictor_params<float>(delta_cfg, 7);
        const int ctx = 4;
        Tensor<float> toks({ctx, delta_cfg.block.dim});
        Tensor<float> q({delta_cfg.block.dim});
        std::vector<double> taus = {0.25, 0.5, 0.75, 1.0};
        MacScope scope;
        predict_token_step(ps, delta_cfg, toks, taus, q, 1.25);
        checks.push_back(
            {"delta predictor step", count_predictor_token_step(delta_cfg, ctx), scope.macs()});
    }
    {
        auto ps = init_predictor_params<float>(spatial_cfg, 9);
        const int ctx = 4;
        Tensor<float> grids({ctx * hw, spatial_cfg.block.dim});
        Tensor<float> q({spatial_cfg.block.dim});
        std::vector<double> taus = {0.25, 0.5, 0.75, 1.0};
        MacScope scope;
        predict_spatial_step(ps, spatial_cfg, grids, taus, g, g, q, 1.25);
        checks.push_back({"spatial predictor step",
                          count_predictor_spatial_step(spatial_cfg, ctx, g, g), scope.macs()});
    }
    {
        PredictorConfig zero = delta_cfg;
        zero.blocks = 0;
        auto ps = init_predictor_params<float>(zero, 11);
        Tensor<float> toks({3, zero.block.dim});
        Tensor<float> q({zero.block.dim});
        MacScope scope;
        predict_token_step(ps, zero, toks, {0.25, 0.5, 0.75}, q, 1.0);
        checks.push_back({"zero-layer predictor", 0, scope.macs()});
    }
    return checks;
}

std::string format_flops_table(const FlopsReport& report) {
    std::string out;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-34s %-11s %14s %14s\n", "component", "group", "MACs", "FLOPs");
    out += buf;
    out += std::string(75, '-') + "\n";
    for (const auto& r : report.rows) {
        std::snprintf(buf, sizeof buf, "%-34s %-11s %14llu %14llu\n", r.component.c_str(),
                      r.per_sample ? "per-sample" : "shared",
                      static_cast<unsigned long long>(r.macs),
                      static_cast<unsigned long long>(FlopsReport::flops(r.macs)));
        out += buf;
    }
    out += std::string(75, '-') + "\n";
    std::snprintf(buf, sizeof buf, "%-34s %-11s %14llu %14llu\n", "shared once", "",
                  static_cast<unsigned long long>(report.shared_macs()),
                  static_cast<unsigned long long>(FlopsReport::flops(report.shared_macs())));
    out += buf;
    std::snprintf(buf, sizeof buf, "%-34s %-11s %14llu %14llu\n", "per sample", "",
                  static_cast<unsigned long long>(report.per_sample_macs()),
                  static_cast<unsigned long long>(FlopsReport::flops(report.per_sample_macs())));
    out += buf;
    std::snprintf(buf, sizeof buf, "%-34s K=%-9d %14llu %14llu\n", "total", report.k,
                  static_cast<unsigned long long>(report.total_macs()),
                  static_cast<unsigned long long>(FlopsReport::flops(report.total_macs())));
    out += buf;
    return out;
}

std::string flops_csv(const FlopsReport& report) {
    std::string out = "component,group,macs,flops\n";
    char buf[160];
    for (const auto& r : report.rows) {
        std::snprintf(buf, sizeof buf, "%s,%s,%llu,%llu\n", r.component.c_str(),
                      r.per_sample ? "per-sample" : "shared",
                      static_cast<unsigned long long>(r.macs),
                      static_cast<unsigned long long>(FlopsReport::flops(r.macs)));
        out += buf;
    }
    std::snprintf(buf, sizeof buf, "total,k=%d,%llu,%llu\n", report.k,
                  static_cast<unsigned long long>(report.total_macs()),
                  static_cast<unsigned long long>(FlopsReport::flops(report.total_macs())));
    out += buf;
    return out;
}

}  // namespace dw
