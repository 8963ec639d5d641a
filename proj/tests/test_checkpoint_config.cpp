#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "deltaworld/checkpoint.hpp"
#include "deltaworld/config.hpp"

using namespace dw;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), {});
}

fs::path tmpfile(const std::string& name) {
    return fs::temp_directory_path() / ("dw_ckpt_" + name + "_" + std::to_string(::getpid()));
}

}  // namespace

TEST_CASE("checkpoint round trip is byte-identical and preserves everything") {
    Checkpoint ck;
    ck.component = "tokenizer";
    ck.variant = "delta";
    ck.config_hash = 0xDEADBEEFCAFEF00DULL;
    ck.seed = 42;
    ck.step = 800;
    ck.extra["mode"] = "delta";
    ck.extra["dim"] = "64";
    Rng rng(3);
    ck.params.add("a.w", {4, 3});
    for (auto& x : ck.params.get("a.w").v) x = static_cast<float>(rng.normal());
    ck.params.add("a.b", {4}, false);

    fs::path p1 = tmpfile("rt1"), p2 = tmpfile("rt2");
    save_checkpoint(p1.string(), ck);
    Checkpoint back = load_checkpoint(p1.string());
    CHECK(back.component == ck.component);
    CHECK(back.variant == ck.variant);
    CHECK(back.config_hash == ck.config_hash);
    CHECK(back.seed == ck.seed);
    CHECK(back.step == ck.step);
    CHECK(back.extra == ck.extra);
    REQUIRE(back.params.entries.size() == 2);
    CHECK(back.params.get("a.w").v == ck.params.get("a.w").v);
    CHECK(back.params.entries[1].trainable == false);

    save_checkpoint(p2.string(), back);
    CHECK(slurp(p1) == slurp(p2));
    fs::remove(p1);
    fs::remove(p2);
}

TEST_CASE("corrupt checkpoints fail loudly") {
    fs::path p = tmpfile("bad");
    {
        std::ofstream f(p, std::ios::binary);
        f << "not a checkpoint at all";
    }
    CHECK_THROWS_AS(load_checkpoint(p.string()), IoError);

    Checkpoint ck;
    ck.component = "predictor";
    ck.params.add("w", {8});
    save_checkpoint(p.string(), ck);
    fs::resize_file(p, fs::file_size(p) - 7);
    CHECK_THROWS_AS(load_checkpoint(p.string()), IoError);
    fs::remove(p);
    CHECK_THROWS_AS(load_checkpoint(p.string()), IoError);
}

TEST_CASE("kv config: parsing, precedence, canonical form, hashing") {
    KvConfig kv = KvConfig::parse_text(
        "# comment\n"
        "data.frame_size = 32\n"
        "train.lr = 1e-3\n"
        "data.dynamics = bimodal-branch\n",
        "inline");
    CHECK(kv.get_int("data.frame_size", 0) == 32);
    CHECK(kv.get_double("train.lr", 0) == 1e-3);
    CHECK(kv.get_str("data.dynamics", "") == "bimodal-branch");
    CHECK(kv.get_int("missing.key", 7) == 7);

    uint64_t h0 = kv.hash();
    kv.set("data.frame_size", "64");  // override wins
    CHECK(kv.get_int("data.frame_size", 0) == 64);
    CHECK(kv.hash() != h0);

    // canonical form is sorted and stable
    KvConfig kv2 = KvConfig::parse_text("b.x = 1\na.y = 2\n", "inline");
    CHECK(kv2.canonical() == "a.y = 2\nb.x = 1\n");
    CHECK(kv2.hash() == KvConfig::parse_text("a.y = 2\nb.x = 1\n", "inline").hash());

    CHECK_THROWS_AS(KvConfig::parse_text("no equals sign\n", "inline"), ConfigError);
    CHECK_THROWS_AS(kv.get_int("data.dynamics", 0), ConfigError);
}

TEST_CASE("typed views pick up keys and defaults") {
    KvConfig kv = KvConfig::parse_text(
        "data.frame_size = 32\n"
        "data.dynamics = bimodal-branch\n"
        "model.pred_blocks = 2\n"
        "train.k_train = 4\n",
        "inline");
    ScenarioConfig sc = scenario_from(kv);
    CHECK(sc.frame_size == 32);
    CHECK(sc.dynamics == Dynamics::bimodal_branch);
    TokenizerConfig tc = tokenizer_config_from(kv);
    CHECK(tc.grid_h == 4);
    PredictorConfig pc = predictor_config_from(kv);
    CHECK(pc.blocks == 2);
    PredictorTrainConfig ptc = predictor_train_from(kv);
    CHECK(ptc.k_train == 4);
    CHECK(ptc.seq_len == 8);  // default
}

TEST_CASE("model signatures separate incompatible configurations") {
    TokenizerConfig a, b;
    b.mode = TokenizerMode::frame;
    CHECK(tokenizer_signature(a) != tokenizer_signature(b));
    TokenizerConfig c = a;
    c.grid_h = c.grid_w = 4;
    CHECK(tokenizer_signature(a) != tokenizer_signature(c));

    PredictorConfig p, q;
    q.variant = PredictorVariant::spatial;
    CHECK(predictor_signature(p) != predictor_signature(q));
    CHECK(fnv1a64(predictor_signature(p)) != fnv1a64(predictor_signature(q)));
}
