#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "deltaworld/nn.hpp"

namespace dw {

// Single-file tensor container: a fixed magic, a JSON manifest with the
// tensor index, then raw float32 little-endian blobs in manifest order.
// Loading then saving is byte-identical.
struct Checkpoint {
    std::string component;  // "tokenizer" | "predictor"
    std::string variant;    // tokenizer mode or training mode
    uint64_t config_hash = 0;
    uint64_t seed = 0;
    int64_t step = 0;
    std::map<std::string, std::string> extra;  // free-form, ordered
    ParamSet<float> params;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace dw
