#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "deltaworld/predictor.hpp"
#include "deltaworld/tokenizer.hpp"

namespace dw {

// Analytic multiply-accumulate accounting. Convention: dense matmul terms
// only (projections, attention scores and mixing, MLPs, the patch
// embedding); softmax, norms, rotary rotations, activations, biases and
// residual adds are excluded. 1 MAC = 2 FLOPs when a FLOPs column is
// reported. The closed forms mirror the forward implementations exactly, so
// the instrumented counter must agree to the MAC.

uint64_t count_linear(int64_t rows, int64_t out, int64_t in);

// pre-norm self-attention block over seq_len tokens:
//   4*N*D^2 (q,k,v,o) + 2*N^2*D (scores + mixing) + 2*N*D*mlp_hidden
uint64_t count_block(const BlockConfig& cfg, int64_t seq_len);

// query-stream block: nq rows attending to nc context slots plus self
uint64_t count_query_block(const BlockConfig& cfg, int64_t nq, int64_t nc);

uint64_t count_backbone_frame(int frame_size);
uint64_t count_tokenizer_encode(const TokenizerConfig& cfg, int gh, int gw);
uint64_t count_tokenizer_decode(const TokenizerConfig& cfg, int gh, int gw);

// one autoregressive step: context self-attention pass plus one query row
uint64_t count_predictor_token_step(const PredictorConfig& cfg, int ctx_tokens);
// one spatial step: context frames*HW tokens, HW query rows
uint64_t count_predictor_spatial_step(const PredictorConfig& cfg, int ctx_frames, int gh, int gw);

struct FlopsReport {
    struct Row {
        std::string component;
        bool per_sample = false;  // false: shared once across the K samples
        uint64_t macs = 0;
    };
    std::vector<Row> rows;
    PredictorVariant variant = PredictorVariant::delta;
    int k = 1;
    int context_frames = 4;
    int rollout_steps = 3;
    int frame_size = 64;

    uint64_t shared_macs() const;
    uint64_t per_sample_macs() const;
    uint64_t total_macs() const { return shared_macs() + static_cast<uint64_t>(k) * per_sample_macs(); }
    static uint64_t flops(uint64_t macs) { return 2 * macs; }
};

// Component rows for a K-sample rollout. Backbone and tokenizer encoder run
// once per context frame and are shared across samples; the predictor and
// tokenizer decoder run per sample per step. The black-frame features are a
// precomputed constant and are not counted.
FlopsReport pipeline_breakdown(PredictorVariant variant, int k, int context_frames,
                               int rollout_steps, int frame_size, const TokenizerConfig& tok_cfg,
                               const PredictorConfig& pred_cfg);

struct CounterCheck {
    std::string component;
    uint64_t analytic = 0;
    uint64_t measured = 0;
    bool match() const { return analytic == measured; }
};

// Instruments real forward passes with the MAC counter and compares them to
// the closed forms.
std::vector<CounterCheck> verify_against_counter(int frame_size, const TokenizerConfig& tok_cfg,
                                                 const PredictorConfig& delta_cfg,
                                                 const PredictorConfig& spatial_cfg);

std::string format_flops_table(const FlopsReport& report);
std::string flops_csv(const FlopsReport& report);

}  // namespace dw
