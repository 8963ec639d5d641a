#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "deltaworld/errors.hpp"

namespace dw {

enum class Dynamics { deterministic_drift, bimodal_branch, multi_agent };

std::string dynamics_name(Dynamics d);
Dynamics dynamics_from_name(const std::string& s);

// Scene recipe. Rendering is hard-edged (no anti-aliasing) so the label
// masks are exact class oracles. In branching dynamics every object's
// velocity flips sign at branch_time with probability branch_prob; until
// then motion is identical across branches.
struct ScenarioConfig {
    int frame_size = 64;  // pixels, square, divisible by the feature patch size
    int num_objects = 1;
    int static_objects = 0;  // the first static_objects objects never move (scene layout)
    Dynamics dynamics = Dynamics::deterministic_drift;
    double branch_prob = 0.5;
    double fps = 16.0;
    double duration = 2.5;     // seconds
    double branch_time = 0.75; // seconds, branching dynamics only
    double min_speed = 12.0;   // px/s
    double max_speed = 18.0;
    double object_size = 12.0; // square side, px
    std::vector<std::array<float, 3>> palette;  // defaults filled when empty

    int num_frames() const { return static_cast<int>(duration * fps + 0.5); }
    int branch_frame() const { return static_cast<int>(branch_time * fps + 0.5); }
    int moving_objects() const { return num_objects - static_objects; }
    void validate() const;
};

std::vector<std::array<float, 3>> default_palette();

struct ObjectState {
    double x = 0, y = 0;
    double vx = 0, vy = 0;
    bool branched = false;
};

struct LatentFrame {
    std::vector<ObjectState> objects;
};

struct VideoSequence {
    int id = 0;
    uint64_t seed = 0;
    ScenarioConfig config;
    std::vector<double> timestamps;   // strictly increasing, seconds
    std::vector<float> frames;        // T * H * W * 3, values in [0,1]
    std::vector<uint8_t> labels;      // T * H * W, class 0 = background
    std::vector<LatentFrame> trace;   // T

    int frame_count() const { return static_cast<int>(timestamps.size()); }
    int side() const { return config.frame_size; }
    const float* frame_ptr(int t) const {
        return frames.data() + static_cast<size_t>(t) * static_cast<size_t>(side()) * static_cast<size_t>(side()) * 3;
    }
    const uint8_t* label_ptr(int t) const {
        return labels.data() + static_cast<size_t>(t) * static_cast<size_t>(side()) * static_cast<size_t>(side());
    }
};

// Deterministic given (config, seed); byte-identical on repeated calls.
VideoSequence generate_sequence(const ScenarioConfig& config, uint64_t seed);

// n futures sharing frames[0..t_branch] bit-exactly with seq and diverging
// afterward per the dynamics. When n equals the number of enumerable branch
// outcomes (2^num_objects for branching dynamics with an un-passed branch
// point) the outcomes are enumerated exhaustively instead of sampled.
std::vector<VideoSequence> branch_futures(const VideoSequence& seq, int t_branch, int n, uint64_t seed);

void write_dataset(const std::vector<VideoSequence>& sequences, const std::string& dir);
std::vector<VideoSequence> read_dataset(const std::string& dir);

// Mean of pixel centers carrying class_id in frame t, or nullopt if absent.
std::optional<std::array<double, 2>> label_centroid(const VideoSequence& seq, int t, uint8_t class_id);

}  // namespace dw
