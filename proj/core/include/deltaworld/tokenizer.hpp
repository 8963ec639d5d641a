#pragma once

#include <map>
#include <string>
#include <vector>

#include "deltaworld/errors.hpp"
#include "deltaworld/graph.hpp"
#include "deltaworld/nn.hpp"
#include "deltaworld/toyvfm.hpp"

namespace dw {

enum class TokenKind { frame, delta, absolute_first };
enum class TokenizerMode { frame, delta };

std::string tokenizer_mode_name(TokenizerMode m);
TokenizerMode tokenizer_mode_from_name(const std::string& s);

struct DeltaToken {
    Tensor<float> value;  // [D]
    TokenKind kind = TokenKind::frame;
};

struct TokenizerConfig {
    BlockConfig block{64, 4, 4.0};
    int encoder_blocks = 4;
    int decoder_blocks = 4;
    TokenizerMode mode = TokenizerMode::delta;
    int grid_h = 8, grid_w = 8;  // grid the tokenizer was trained on
};

// Parameter layout shared by the encoder and decoder stacks. No final layer
// normalization on either side: together with the tiny Layer Scale init this
// makes the encoder emit ~z_init and the decoder act as an identity map on
// its base tokens at initialization.
template <typename T>
ParamSet<T> init_tokenizer_params(const TokenizerConfig& cfg, uint64_t seed) {
    ParamSet<T> ps;
    Rng rng(seed);
    int64_t d = cfg.block.dim;
    ps.add("tok.z_init", {d}) = trunc_normal_tensor<T>({d}, kInitSigma, rng);
    ps.add("tok.tag_prev", {d}) = trunc_normal_tensor<T>({d}, kInitSigma, rng);
    ps.add("tok.tag_cur", {d}) = trunc_normal_tensor<T>({d}, kInitSigma, rng);
    ps.add("tok.dec.slot", {d}) = trunc_normal_tensor<T>({d}, kInitSigma, rng);
    for (int b = 0; b < cfg.encoder_blocks; ++b)
        init_block_params(ps, "tok.enc.blk" + std::to_string(b), cfg.block, rng);
    for (int b = 0; b < cfg.decoder_blocks; ++b)
        init_block_params(ps, "tok.dec.blk" + std::to_string(b), cfg.block, rng);
    return ps;
}

namespace detail {

inline std::shared_ptr<Tensor<double>> grid_positions(int gh, int gw, int extra_rows) {
    auto pos = std::make_shared<Tensor<double>>(std::vector<int64_t>{gh * gw + extra_rows, 2});
    for (int y = 0; y < gh; ++y)
        for (int x = 0; x < gw; ++x) {
            pos->at(y * gw + x, 0) = y;
            pos->at(y * gw + x, 1) = x;
        }
    // trailing slots (the z token) sit at the rotary identity position
    return pos;
}

}  // namespace detail

// Encoder: self-attention over the tagged input grid tokens plus the z slot;
// the output is the transformed z slot. prev_tokens is invalid in frame mode.
template <typename T>
typename Graph<T>::Var tokenizer_encode(Graph<T>& g, ParamBinder<T>& bind, const TokenizerConfig& cfg,
                                        typename Graph<T>::Var prev_tokens,
                                        typename Graph<T>::Var cur_tokens, int gh, int gw) {
    bool delta = prev_tokens.valid();
    auto cur = g.add_rowvec(cur_tokens, bind("tok.tag_cur"));
    typename Graph<T>::Var x;
    if (delta) {
        auto prev = g.add_rowvec(prev_tokens, bind("tok.tag_prev"));
        x = g.concat_rows(prev, cur);
    } else {
        x = cur;
    }
    auto z0 = g.broadcast_row(bind("tok.z_init"), 1);
    x = g.concat_rows(x, z0);

    int64_t hw = static_cast<int64_t>(gh) * gw;
    int64_t rows = (delta ? 2 * hw : hw) + 1;
    auto pos = std::make_shared<Tensor<double>>(std::vector<int64_t>{rows, 2});
    for (int rep = 0; rep < (delta ? 2 : 1); ++rep)
        for (int y = 0; y < gh; ++y)
            for (int x2 = 0; x2 < gw; ++x2) {
                pos->at(rep * hw + y * gw + x2, 0) = y;
                pos->at(rep * hw + y * gw + x2, 1) = x2;
            }
    RopePlan plan = make_rope_plan(2, cfg.block.heads, cfg.block.head_dim());
    for (int b = 0; b < cfg.encoder_blocks; ++b) {
        auto blk = bind_block(bind, "tok.enc.blk" + std::to_string(b));
        x = block_self(g, x, blk, cfg.block.heads, nullptr, &plan, pos);
    }
    return g.slice_rows(x, rows - 1, rows);  // [1, D]
}

// Decoder: self-attention over the base tokens (x_prev, or the zero grid
// x_init in frame mode) plus the z slot; the outputs are read from the grid
// slots and the transformed z slot is discarded.
template <typename T>
typename Graph<T>::Var tokenizer_decode(Graph<T>& g, ParamBinder<T>& bind, const TokenizerConfig& cfg,
                                        typename Graph<T>::Var base_tokens,
                                        typename Graph<T>::Var z_row, int gh, int gw) {
    int64_t hw = static_cast<int64_t>(gh) * gw;
    typename Graph<T>::Var base = base_tokens;
    if (!base.valid()) base = g.constant(Tensor<T>({hw, cfg.block.dim}));  // x_init: zeros, non-learnable
    auto z = g.add_rowvec(z_row, bind("tok.dec.slot"));
    auto x = g.concat_rows(base, z);
    auto pos = detail::grid_positions(gh, gw, 1);
    RopePlan plan = make_rope_plan(2, cfg.block.heads, cfg.block.head_dim());
    for (int b = 0; b < cfg.decoder_blocks; ++b) {
        auto blk = bind_block(bind, "tok.dec.blk" + std::to_string(b));
        x = block_self(g, x, blk, cfg.block.heads, nullptr, &plan, pos);
    }
    return g.slice_rows(x, 0, hw);  // [HW, D]
}

// mean squared error over all grid entries
template <typename T>
typename Graph<T>::Var tokenizer_loss(Graph<T>& g, typename Graph<T>::Var x_hat, const Tensor<T>& x) {
    return g.mse(x_hat, x);
}

struct TokenizerTrainConfig {
    int iters = 800;
    int batch = 8;
    double lr_peak = 1e-3;
    double warmup_fraction = 0.1;
    double weight_decay = 1e-4;
    double clip_norm = 1e-2;
    double dt_min = 1.0 / 25.0;
    double dt_max = 1.0 / 3.0;
    uint64_t seed = 0;
};

struct TrainLog {
    std::vector<double> losses;
    double initial_loss = 0.0;
    double final_loss = 0.0;
};

class Tokenizer {
public:
    Tokenizer(TokenizerConfig cfg, uint64_t init_seed);
    Tokenizer(TokenizerConfig cfg, ParamSet<float> params);

    const TokenizerConfig& config() const { return cfg_; }
    const ParamSet<float>& params() const { return params_; }
    ParamSet<float>& params() { return params_; }

    DeltaToken encode_frame(const FeatureGrid& cur) const;
    FeatureGrid decode_frame(const DeltaToken& z, int gh = -1, int gw = -1) const;
    DeltaToken encode_delta(const FeatureGrid& prev, const FeatureGrid& cur,
                            bool prev_is_black = false) const;
    FeatureGrid decode_delta(const FeatureGrid& prev, const DeltaToken& z) const;

    // Delta mode: black-frame prepend, token i encodes grid_{i-1} -> grid_i.
    // Frame mode: one absolute frame token per grid.
    std::vector<DeltaToken> encode_sequence(const FeatureSequence& seq, const FeatureGrid& black) const;

private:
    TokenizerConfig cfg_;
    ParamSet<float> params_;
};

// Teacher-forced reconstruction training on frame pairs at the uniform
// timestamp offsets also used for predictor training.
TrainLog train_tokenizer(Tokenizer& tok, const std::vector<FeatureSequence>& feats,
                         const TokenizerTrainConfig& cfg);

// offset in frames for a sampled dt at the sequence frame rate, at least 1
int rounded_offset_frames(double dt, double fps);

// Lazy cache of encoded tokens over a fixed embedded dataset (training and
// eval create many repeated pairs).
class TokenCache {
public:
    TokenCache(const Tokenizer& tok, const std::vector<FeatureSequence>* feats, FeatureGrid black);

    // prev = -1 means the black frame
    const Tensor<float>& delta(int seq, int prev, int cur);
    const Tensor<float>& frame(int seq, int idx);
    const FeatureGrid& black() const { return black_; }
    const Tokenizer& tokenizer() const { return tok_; }

private:
    const Tokenizer& tok_;
    const std::vector<FeatureSequence>* feats_;
    FeatureGrid black_;
    std::map<std::tuple<int, int, int>, Tensor<float>> delta_;
    std::map<std::pair<int, int>, Tensor<float>> frame_;
};

}  // namespace dw
