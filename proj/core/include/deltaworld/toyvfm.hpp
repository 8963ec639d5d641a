#pragma once

#include <vector>

#include "deltaworld/nn.hpp"
#include "deltaworld/synthworld.hpp"
#include "deltaworld/tensor.hpp"

namespace dw {

struct FeatureGrid {
    int gh = 0, gw = 0, dim = 0;
    Tensor<float> tokens;  // [gh*gw, dim]
};

struct FeatureSequence {
    std::vector<FeatureGrid> grids;
    std::vector<double> timestamps;
};

// Frozen patch-token extractor standing in for a vision foundation model:
// a linear patch embedding with orthonormal init followed by two frozen
// attention blocks with 2D rotary positions and a final layer normalization.
// Parameters are a pure function of kBuildSeed and are never trained.
class ToyVfm {
public:
    static constexpr int kPatch = 8;
    static constexpr int kDim = 64;
    static constexpr int kHeads = 4;
    static constexpr int kBlocks = 2;
    static constexpr uint64_t kBuildSeed = 0x0DE17A70F00DULL;

    ToyVfm();

    const ParamSet<float>& params() const { return params_; }
    BlockConfig block_config() const { return BlockConfig{kDim, kHeads, 4.0}; }

    // frame is frame_size*frame_size*3 floats, row-major
    FeatureGrid embed_frame(const float* frame, int frame_size) const;
    FeatureSequence embed_sequence(const VideoSequence& seq) const;

    FeatureGrid black_frame_grid(int frame_size) const;

private:
    ParamSet<float> params_;
    RopePlan plan_;
};

std::vector<FeatureSequence> embed_dataset(const ToyVfm& vfm, const std::vector<VideoSequence>& seqs);

// Variance of all feature entries around their global mean (tokenizer
// reconstruction quality is reported relative to this).
double feature_variance(const std::vector<FeatureSequence>& feats);

}  // namespace dw
