#include "deltaworld/config.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>

namespace dw {

KvConfig KvConfig::parse_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open config " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parse_text(text, path);
}

KvConfig KvConfig::parse_text(const std::string& text, const std::string& origin) {
    KvConfig kv;
    size_t pos = 0;
    int lineno = 0;
    while (pos < text.size()) {
        size_t end = text.find('\n', pos);
        std::string line = (end == std::string::npos) ? text.substr(pos) : text.substr(pos, end - pos);
        pos = (end == std::string::npos) ? text.size() : end + 1;
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        size_t h = line.find('#');
        if (h != std::string::npos) line = line.substr(0, h);
        size_t a = line.find_first_not_of(" \t");
        if (a == std::string::npos) continue;
        size_t b = line.find_last_not_of(" \t");
        line = line.substr(a, b - a + 1);
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
        std::string key = line.substr(0, eq);
        std::string val = line.substr(eq + 1);
        auto trim = [](std::string& s) {
            size_t x = s.find_first_not_of(" \t");
            size_t y = s.find_last_not_of(" \t");
            s = (x == std::string::npos) ? "" : s.substr(x, y - x + 1);
        };
        trim(key);
        trim(val);
        if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        kv.values_[key] = val;
    }
    return kv;
}

std::string KvConfig::get_str(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

double KvConfig::get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    char* end = nullptr;
    double v = std::strtod(it->second.c_str(), &end);
    if (end == it->second.c_str() || *end != '\0')
        throw ConfigError("bad number for " + key + ": '" + it->second + "'");
    return v;
}

int64_t KvConfig::get_int(const std::string& key, int64_t fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    char* end = nullptr;
    long long v = std::strtoll(it->second.c_str(), &end, 10);
    if (end == it->second.c_str() || *end != '\0')
        throw ConfigError("bad integer for " + key + ": '" + it->second + "'");
    return v;
}

std::string KvConfig::canonical() const {
    std::string out;
    for (const auto& [k, v] : values_) {
        out += k;
        out += " = ";
        out += v;
        out += "\n";
    }
    return out;
}

uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

uint64_t KvConfig::hash() const { return fnv1a64(canonical()); }

ScenarioConfig scenario_from(const KvConfig& kv) {
    ScenarioConfig c;
    c.frame_size = static_cast<int>(kv.get_int("data.frame_size", c.frame_size));
    c.num_objects = static_cast<int>(kv.get_int("data.num_objects", c.num_objects));
    c.static_objects = static_cast<int>(kv.get_int("data.static_objects", c.static_objects));
    c.dynamics = dynamics_from_name(kv.get_str("data.dynamics", dynamics_name(c.dynamics)));
    c.branch_prob = kv.get_double("data.branch_prob", c.branch_prob);
    c.fps = kv.get_double("data.fps", c.fps);
    c.duration = kv.get_double("data.duration", c.duration);
    c.branch_time = kv.get_double("data.branch_time", c.branch_time);
    c.min_speed = kv.get_double("data.min_speed", c.min_speed);
    c.max_speed = kv.get_double("data.max_speed", c.max_speed);
    c.object_size = kv.get_double("data.object_size", c.object_size);
    return c;
}

TokenizerConfig tokenizer_config_from(const KvConfig& kv) {
    TokenizerConfig c;
    c.block.dim = static_cast<int>(kv.get_int("model.dim", c.block.dim));
    c.block.heads = static_cast<int>(kv.get_int("model.heads", c.block.heads));
    c.block.mlp_ratio = kv.get_double("model.mlp_ratio", c.block.mlp_ratio);
    c.encoder_blocks = static_cast<int>(kv.get_int("model.tok_encoder_blocks", c.encoder_blocks));
    c.decoder_blocks = static_cast<int>(kv.get_int("model.tok_decoder_blocks", c.decoder_blocks));
    c.mode = tokenizer_mode_from_name(kv.get_str("model.tok_mode", tokenizer_mode_name(c.mode)));
    int frame_size = static_cast<int>(kv.get_int("data.frame_size", 64));
    c.grid_h = c.grid_w = frame_size / 8;
    return c;
}

PredictorConfig predictor_config_from(const KvConfig& kv) {
    PredictorConfig c;
    c.block.dim = static_cast<int>(kv.get_int("model.dim", c.block.dim));
    c.block.heads = static_cast<int>(kv.get_int("model.heads", c.block.heads));
    c.block.mlp_ratio = kv.get_double("model.mlp_ratio", c.block.mlp_ratio);
    c.blocks = static_cast<int>(kv.get_int("model.pred_blocks", c.blocks));
    c.rope_base = kv.get_double("model.rope_base", c.rope_base);
    c.time_scale = kv.get_double("model.time_scale", c.time_scale);
    c.smooth_l1_beta = kv.get_double("train.smooth_l1_beta", c.smooth_l1_beta);
    return c;
}

TokenizerTrainConfig tokenizer_train_from(const KvConfig& kv) {
    TokenizerTrainConfig c;
    c.iters = static_cast<int>(kv.get_int("train.iters", c.iters));
    c.batch = static_cast<int>(kv.get_int("train.batch", c.batch));
    c.lr_peak = kv.get_double("train.lr", c.lr_peak);
    c.warmup_fraction = kv.get_double("train.warmup_fraction", c.warmup_fraction);
    c.weight_decay = kv.get_double("train.weight_decay", 1e-4);
    c.clip_norm = kv.get_double("train.clip_norm", 1e-2);
    c.dt_min = kv.get_double("train.dt_min", c.dt_min);
    c.dt_max = kv.get_double("train.dt_max", c.dt_max);
    c.seed = static_cast<uint64_t>(kv.get_int("train.seed", 0));
    return c;
}

PredictorTrainConfig predictor_train_from(const KvConfig& kv) {
    PredictorTrainConfig c;
    c.iters = static_cast<int>(kv.get_int("train.iters", c.iters));
    c.batch = static_cast<int>(kv.get_int("train.batch", c.batch));
    c.seq_len = static_cast<int>(kv.get_int("train.seq_len", c.seq_len));
    c.k_train = static_cast<int>(kv.get_int("train.k_train", c.k_train));
    c.lr_peak = kv.get_double("train.lr", c.lr_peak);
    c.warmup_fraction = kv.get_double("train.warmup_fraction", c.warmup_fraction);
    c.weight_decay = kv.get_double("train.weight_decay", c.weight_decay);
    c.dt_min = kv.get_double("train.dt_min", c.dt_min);
    c.dt_max = kv.get_double("train.dt_max", c.dt_max);
    c.query_mu = kv.get_double("train.query_mu", c.query_mu);
    c.query_sigma = kv.get_double("train.query_sigma", c.query_sigma);
    c.finetune_iters = static_cast<int>(kv.get_int("train.finetune_iters", c.finetune_iters));
    c.finetune_lr_factor = kv.get_double("train.finetune_lr_factor", c.finetune_lr_factor);
    c.seed = static_cast<uint64_t>(kv.get_int("train.seed", 0));
    return c;
}

std::string tokenizer_signature(const TokenizerConfig& cfg) {
    char buf[192];
    std::snprintf(buf, sizeof buf, "tokenizer dim=%d heads=%d ratio=%g enc=%d dec=%d mode=%s grid=%dx%d",
                  cfg.block.dim, cfg.block.heads, cfg.block.mlp_ratio, cfg.encoder_blocks,
                  cfg.decoder_blocks, tokenizer_mode_name(cfg.mode).c_str(), cfg.grid_h, cfg.grid_w);
    return buf;
}

std::string predictor_signature(const PredictorConfig& cfg) {
    char buf[192];
    std::snprintf(buf, sizeof buf,
                  "predictor dim=%d heads=%d ratio=%g blocks=%d variant=%s base=%g tscale=%g",
                  cfg.block.dim, cfg.block.heads, cfg.block.mlp_ratio, cfg.blocks,
                  predictor_variant_name(cfg.variant).c_str(), cfg.rope_base, cfg.time_scale);
    return buf;
}

}  // namespace dw
