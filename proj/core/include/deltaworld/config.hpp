#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "deltaworld/errors.hpp"
#include "deltaworld/bom.hpp"
#include "deltaworld/synthworld.hpp"
#include "deltaworld/tokenizer.hpp"

namespace dw {

// Flat dotted-key configuration: "section.key = value" lines, '#' comments.
// Later assignments override earlier ones; command line --set entries are
// applied after the file, so precedence is flags > file > defaults.
class KvConfig {
public:
    static KvConfig parse_file(const std::string& path);
    static KvConfig parse_text(const std::string& text, const std::string& origin);

    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string get_str(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    int64_t get_int(const std::string& key, int64_t fallback) const;

    // sorted "key = value" lines; the basis of the config hash
    std::string canonical() const;
    uint64_t hash() const;  // FNV-1a 64 of canonical()

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

uint64_t fnv1a64(const std::string& s);

// typed views over a KvConfig
ScenarioConfig scenario_from(const KvConfig& kv);
TokenizerConfig tokenizer_config_from(const KvConfig& kv);
PredictorConfig predictor_config_from(const KvConfig& kv);
TokenizerTrainConfig tokenizer_train_from(const KvConfig& kv);
PredictorTrainConfig predictor_train_from(const KvConfig& kv);

// compatibility signatures hashed into checkpoints; loading a checkpoint
// whose signature differs from the current run's model keys is an error
std::string tokenizer_signature(const TokenizerConfig& cfg);
std::string predictor_signature(const PredictorConfig& cfg);

}  // namespace dw
