#include "deltaworld/tokenizer.hpp"

#include <cmath>

namespace dw {

std::string tokenizer_mode_name(TokenizerMode m) {
    return m == TokenizerMode::frame ? "frame" : "delta";
}

TokenizerMode tokenizer_mode_from_name(const std::string& s) {
    if (s == "frame") return TokenizerMode::frame;
    if (s == "delta") return TokenizerMode::delta;
    throw ConfigError("unknown tokenizer mode: " + s);
}

Tokenizer::Tokenizer(TokenizerConfig cfg, uint64_t init_seed)
    : cfg_(cfg), params_(init_tokenizer_params<float>(cfg, init_seed)) {}

Tokenizer::Tokenizer(TokenizerConfig cfg, ParamSet<float> params)
    : cfg_(cfg), params_(std::move(params)) {}

DeltaToken Tokenizer::encode_frame(const FeatureGrid& cur) const {
    Graph<float> g;
    g.grad_enabled = false;
    ParamBinder<float> bind(g, params_, /*force_frozen=*/true);
    auto z = tokenizer_encode(g, bind, cfg_, {}, g.constant(cur.tokens), cur.gh, cur.gw);
    DeltaToken t;
    t.kind = TokenKind::frame;
    t.value = g.val(z);
    t.value.shape = {cfg_.block.dim};
    return t;
}

DeltaToken Tokenizer::encode_delta(const FeatureGrid& prev, const FeatureGrid& cur,
                                   bool prev_is_black) const {
    if (prev.gh != cur.gh || prev.gw != cur.gw) throw ShapeError("encode_delta: grid mismatch");
    Graph<float> g;
    g.grad_enabled = false;
    ParamBinder<float> bind(g, params_, true);
    auto z = tokenizer_encode(g, bind, cfg_, g.constant(prev.tokens), g.constant(cur.tokens),
                              cur.gh, cur.gw);
    DeltaToken t;
    t.kind = prev_is_black ? TokenKind::absolute_first : TokenKind::delta;
    t.value = g.val(z);
    t.value.shape = {cfg_.block.dim};
    return t;
}

FeatureGrid Tokenizer::decode_frame(const DeltaToken& z, int gh, int gw) const {
    if (gh < 0) gh = cfg_.grid_h;
    if (gw < 0) gw = cfg_.grid_w;
    Graph<float> g;
    g.grad_enabled = false;
    ParamBinder<float> bind(g, params_, true);
    Tensor<float> zrow = z.value;
    zrow.shape = {1, cfg_.block.dim};
    auto out = tokenizer_decode(g, bind, cfg_, {}, g.constant(std::move(zrow)), gh, gw);
    FeatureGrid fg;
    fg.gh = gh;
    fg.gw = gw;
    fg.dim = cfg_.block.dim;
    fg.tokens = g.val(out);
    return fg;
}

FeatureGrid Tokenizer::decode_delta(const FeatureGrid& prev, const DeltaToken& z) const {
    Graph<float> g;
    g.grad_enabled = false;
    ParamBinder<float> bind(g, params_, true);
    Tensor<float> zrow = z.value;
    zrow.shape = {1, cfg_.block.dim};
    auto out = tokenizer_decode(g, bind, cfg_, g.constant(prev.tokens), g.constant(std::move(zrow)),
                                prev.gh, prev.gw);
    FeatureGrid fg;
    fg.gh = prev.gh;
    fg.gw = prev.gw;
    fg.dim = cfg_.block.dim;
    fg.tokens = g.val(out);
    return fg;
}

std::vector<DeltaToken> Tokenizer::encode_sequence(const FeatureSequence& seq,
                                                   const FeatureGrid& black) const {
    std::vector<DeltaToken> out;
    out.reserve(seq.grids.size());
    if (cfg_.mode == TokenizerMode::frame) {
        for (const auto& g : seq.grids) out.push_back(encode_frame(g));
        return out;
    }
    for (size_t i = 0; i < seq.grids.size(); ++i) {
        const FeatureGrid& prev = (i == 0) ? black : seq.grids[i - 1];
        out.push_back(encode_delta(prev, seq.grids[i], i == 0));
    }
    return out;
}

int rounded_offset_frames(double dt, double fps) {
    int k = static_cast<int>(std::lround(dt * fps));
    return k < 1 ? 1 : k;
}

TrainLog train_tokenizer(Tokenizer& tok, const std::vector<FeatureSequence>& feats,
                         const TokenizerTrainConfig& cfg) {
    if (feats.empty()) throw TrainError("empty feature dataset");
    const TokenizerConfig& tcfg = tok.config();
    bool delta = tcfg.mode == TokenizerMode::delta;

    AdamWConfig ocfg;
    ocfg.lr_peak = cfg.lr_peak;
    ocfg.warmup_steps = static_cast<int64_t>(cfg.iters * cfg.warmup_fraction);
    ocfg.weight_decay = cfg.weight_decay;
    ocfg.clip_norm = cfg.clip_norm;
    AdamW<float> opt(tok.params(), ocfg);

    Rng rng(hash_mix(cfg.seed, 0x70CE17ULL));
    TrainLog log;
    log.losses.reserve(static_cast<size_t>(cfg.iters));

    for (int step = 0; step < cfg.iters; ++step) {
        std::vector<Tensor<float>> grads(tok.params().entries.size());
        double loss_sum = 0;
        for (int b = 0; b < cfg.batch; ++b) {
            const FeatureSequence& fs = feats[rng.below(feats.size())];
            int t_count = static_cast<int>(fs.grids.size());
            double fps = 1.0;
            if (t_count > 1) fps = 1.0 / (fs.timestamps[1] - fs.timestamps[0]);
            double dt = rng.uniform(cfg.dt_min, cfg.dt_max);
            int k = rounded_offset_frames(dt, fps);
            if (k >= t_count) k = t_count - 1;
            int cur = (k > 0) ? k + static_cast<int>(rng.below(static_cast<uint64_t>(t_count - k)))
                              : 0;
            int prev = cur - k;

            Graph<float> g;
            ParamBinder<float> bind(g, tok.params());
            const auto& grid_cur = fs.grids[static_cast<size_t>(cur)];
            auto cur_v = g.constant(grid_cur.tokens);
            typename Graph<float>::Var prev_v{};
            typename Graph<float>::Var base{};
            if (delta) {
                const auto& grid_prev = fs.grids[static_cast<size_t>(prev)];
                prev_v = g.constant(grid_prev.tokens);
                base = prev_v;
            }
            auto z = tokenizer_encode(g, bind, tcfg, prev_v, cur_v, grid_cur.gh, grid_cur.gw);
            auto xhat = tokenizer_decode(g, bind, tcfg, base, z, grid_cur.gh, grid_cur.gw);
            auto loss = tokenizer_loss(g, xhat, grid_cur.tokens);
            double lv = g.val(loss).v[0];
            if (!std::isfinite(lv))
                throw TrainError("tokenizer loss diverged (non-finite) at step " + std::to_string(step));
            loss_sum += lv;
            g.backward(loss);
            bind.collect(grads);
        }
        for (auto& t : grads)
            for (auto& x : t.v) x /= static_cast<float>(cfg.batch);
        opt.step(grads);
        log.losses.push_back(loss_sum / cfg.batch);
    }
    log.initial_loss = log.losses.empty() ? 0.0 : log.losses.front();
    log.final_loss = log.losses.empty() ? 0.0 : log.losses.back();
    return log;
}

TokenCache::TokenCache(const Tokenizer& tok, const std::vector<FeatureSequence>* feats,
                       FeatureGrid black)
    : tok_(tok), feats_(feats), black_(std::move(black)) {}

const Tensor<float>& TokenCache::delta(int seq, int prev, int cur) {
    auto key = std::make_tuple(seq, prev, cur);
    auto it = delta_.find(key);
    if (it != delta_.end()) return it->second;
    const auto& fs = (*feats_)[static_cast<size_t>(seq)];
    const FeatureGrid& pg = (prev < 0) ? black_ : fs.grids[static_cast<size_t>(prev)];
    DeltaToken t = tok_.encode_delta(pg, fs.grids[static_cast<size_t>(cur)], prev < 0);
    return delta_.emplace(key, std::move(t.value)).first->second;
}

const Tensor<float>& TokenCache::frame(int seq, int idx) {
    auto key = std::make_pair(seq, idx);
    auto it = frame_.find(key);
    if (it != frame_.end()) return it->second;
    const auto& fs = (*feats_)[static_cast<size_t>(seq)];
    DeltaToken t = tok_.encode_frame(fs.grids[static_cast<size_t>(idx)]);
    return frame_.emplace(key, std::move(t.value)).first->second;
}

}  // namespace dw
