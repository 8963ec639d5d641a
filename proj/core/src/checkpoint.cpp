#include "deltaworld/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "deltaworld/errors.hpp"

namespace dw {

namespace {

constexpr char kMagic[8] = {'D', 'W', 'C', 'K', 'P', 'T', '1', '\n'};

void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

uint64_t get_u64(const std::string& s, size_t off) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(s[off + i])) << (8 * i);
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    nlohmann::json manifest;
    manifest["component"] = ckpt.component;
    manifest["variant"] = ckpt.variant;
    manifest["config_hash"] = ckpt.config_hash;
    manifest["seed"] = ckpt.seed;
    manifest["step"] = ckpt.step;
    manifest["extra"] = ckpt.extra;
    nlohmann::json tensors = nlohmann::json::array();
    uint64_t offset = 0;
    for (const auto& e : ckpt.params.entries) {
        nlohmann::json t;
        t["name"] = e.name;
        t["shape"] = e.value.shape;
        t["offset"] = offset;
        t["count"] = e.value.numel();
        t["trainable"] = e.trainable;
        tensors.push_back(std::move(t));
        offset += static_cast<uint64_t>(e.value.numel()) * 4;
    }
    manifest["tensors"] = std::move(tensors);
    std::string mtext = manifest.dump();

    std::string out;
    out.append(kMagic, sizeof kMagic);
    put_u64(out, mtext.size());
    out += mtext;
    for (const auto& e : ckpt.params.entries)
        for (float x : e.value.v) {
            uint32_t u;
            std::memcpy(&u, &x, 4);
            for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xFF));
        }

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write checkpoint " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("short write on checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint " + path);
    std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (data.size() < sizeof kMagic + 8 || std::memcmp(data.data(), kMagic, sizeof kMagic) != 0)
        throw IoError(path + ": not a checkpoint file");
    uint64_t msize = get_u64(data, sizeof kMagic);
    size_t mstart = sizeof kMagic + 8;
    if (mstart + msize > data.size()) throw IoError(path + ": truncated manifest");

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(data.substr(mstart, msize));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path + ": bad manifest: " + e.what());
    }

    Checkpoint ckpt;
    ckpt.component = manifest.at("component").get<std::string>();
    ckpt.variant = manifest.at("variant").get<std::string>();
    ckpt.config_hash = manifest.at("config_hash").get<uint64_t>();
    ckpt.seed = manifest.at("seed").get<uint64_t>();
    ckpt.step = manifest.at("step").get<int64_t>();
    if (manifest.contains("extra"))
        ckpt.extra = manifest.at("extra").get<std::map<std::string, std::string>>();

    size_t blob0 = mstart + msize;
    for (const auto& t : manifest.at("tensors")) {
        std::string name = t.at("name").get<std::string>();
        std::vector<int64_t> shape = t.at("shape").get<std::vector<int64_t>>();
        uint64_t offset = t.at("offset").get<uint64_t>();
        int64_t count = t.at("count").get<int64_t>();
        bool trainable = t.at("trainable").get<bool>();
        if (Tensor<float>::numel_of(shape) != count) throw IoError(path + ": shape/count mismatch for " + name);
        size_t start = blob0 + offset;
        if (start + static_cast<size_t>(count) * 4 > data.size())
            throw IoError(path + ": truncated tensor " + name);
        Tensor<float>& dst = ckpt.params.add(name, shape, trainable);
        for (int64_t i = 0; i < count; ++i) {
            uint32_t u = 0;
            for (int b = 0; b < 4; ++b)
                u |= static_cast<uint32_t>(static_cast<unsigned char>(data[start + static_cast<size_t>(i) * 4 + static_cast<size_t>(b)]))
                     << (8 * b);
            std::memcpy(&dst.v[static_cast<size_t>(i)], &u, 4);
        }
    }
    return ckpt;
}

}  // namespace dw
