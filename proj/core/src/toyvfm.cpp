#include "deltaworld/toyvfm.hpp"

#include <cmath>

#include "deltaworld/graph.hpp"
#include "deltaworld/rng.hpp"

namespace dw {

namespace {

// gaussian matrix with rows orthonormalized by Gram-Schmidt
Tensor<float> orthonormal_rows(int64_t rows, int64_t cols, Rng& rng) {
    Tensor<double> m({rows, cols});
    for (auto& x : m.v) x = rng.normal();
    for (int64_t i = 0; i < rows; ++i) {
        double* ri = m.row_ptr(i);
        for (int64_t j = 0; j < i; ++j) {
            const double* rj = m.row_ptr(j);
            double dot = 0;
            for (int64_t c = 0; c < cols; ++c) dot += ri[c] * rj[c];
            for (int64_t c = 0; c < cols; ++c) ri[c] -= dot * rj[c];
        }
        double norm = 0;
        for (int64_t c = 0; c < cols; ++c) norm += ri[c] * ri[c];
        norm = std::sqrt(norm);
        for (int64_t c = 0; c < cols; ++c) ri[c] /= norm;
    }
    return m.cast<float>();
}

}  // namespace

ToyVfm::ToyVfm() {
    Rng rng(kBuildSeed);
    params_.add("vfm.patch.w", {kDim, kPatch * kPatch * 3}, false) =
        orthonormal_rows(kDim, kPatch * kPatch * 3, rng);
    params_.add("vfm.patch.b", {kDim}, false);
    BlockConfig cfg = block_config();
    for (int b = 0; b < kBlocks; ++b) {
        std::string prefix = "vfm.blk" + std::to_string(b);
        init_block_params(params_, prefix, cfg, rng);
        // frozen blocks mix at full strength; near-identity scaling is for
        // trainable stacks
        params_.get(prefix + ".ls1").fill(1.0f);
        params_.get(prefix + ".ls2").fill(1.0f);
    }
    params_.add("vfm.lnf.g", {kDim}, false).fill(1.0f);
    params_.add("vfm.lnf.b", {kDim}, false);
    for (auto& e : params_.entries) e.trainable = false;

    plan_ = make_rope_plan(2, kHeads, kDim / kHeads);
}

FeatureGrid ToyVfm::embed_frame(const float* frame, int frame_size) const {
    if (frame_size <= 0 || frame_size % kPatch != 0)
        throw ShapeError("frame size not divisible by patch size");
    int g = frame_size / kPatch;
    int64_t n = static_cast<int64_t>(g) * g;

    Tensor<float> patches({n, kPatch * kPatch * 3});
    for (int py = 0; py < g; ++py)
        for (int px = 0; px < g; ++px) {
            float* row = patches.row_ptr(py * g + px);
            int o = 0;
            for (int y = 0; y < kPatch; ++y)
                for (int x = 0; x < kPatch; ++x) {
                    const float* p =
                        frame + ((static_cast<size_t>(py * kPatch + y) * frame_size) + (px * kPatch + x)) * 3;
                    row[o++] = p[0];
                    row[o++] = p[1];
                    row[o++] = p[2];
                }
        }

    auto pos = std::make_shared<Tensor<double>>(std::vector<int64_t>{n, 2});
    for (int py = 0; py < g; ++py)
        for (int px = 0; px < g; ++px) {
            pos->at(py * g + px, 0) = py;
            pos->at(py * g + px, 1) = px;
        }

    Graph<float> gr;
    gr.grad_enabled = false;
    ParamBinder<float> bind(gr, params_);
    auto x = gr.linear(gr.constant(std::move(patches)), bind("vfm.patch.w"), bind("vfm.patch.b"));
    for (int b = 0; b < kBlocks; ++b) {
        auto blk = bind_block(bind, "vfm.blk" + std::to_string(b));
        x = block_self(gr, x, blk, kHeads, nullptr, &plan_, pos);
    }
    x = gr.layernorm(x, bind("vfm.lnf.g"), bind("vfm.lnf.b"));

    FeatureGrid out;
    out.gh = g;
    out.gw = g;
    out.dim = kDim;
    out.tokens = gr.val(x);
    return out;
}

FeatureSequence ToyVfm::embed_sequence(const VideoSequence& seq) const {
    FeatureSequence fs;
    fs.timestamps = seq.timestamps;
    fs.grids.reserve(static_cast<size_t>(seq.frame_count()));
    for (int t = 0; t < seq.frame_count(); ++t)
        fs.grids.push_back(embed_frame(seq.frame_ptr(t), seq.side()));
    return fs;
}

FeatureGrid ToyVfm::black_frame_grid(int frame_size) const {
    std::vector<float> black(static_cast<size_t>(frame_size) * frame_size * 3, 0.0f);
    return embed_frame(black.data(), frame_size);
}

std::vector<FeatureSequence> embed_dataset(const ToyVfm& vfm, const std::vector<VideoSequence>& seqs) {
    std::vector<FeatureSequence> out;
    out.reserve(seqs.size());
    for (const auto& s : seqs) out.push_back(vfm.embed_sequence(s));
    return out;
}

double feature_variance(const std::vector<FeatureSequence>& feats) {
    double sum = 0, sum2 = 0;
    int64_t n = 0;
    for (const auto& fs : feats)
        for (const auto& g : fs.grids)
            for (float x : g.tokens.v) {
                sum += x;
                sum2 += static_cast<double>(x) * x;
                ++n;
            }
    if (n == 0) return 0.0;
    double mean = sum / static_cast<double>(n);
    return sum2 / static_cast<double>(n) - mean * mean;
}

}  // namespace dw
