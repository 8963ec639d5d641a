#include "deltaworld/cli.hpp"

#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "deltaworld/checkpoint.hpp"
#include "deltaworld/config.hpp"
#include "deltaworld/evalharness.hpp"
#include "deltaworld/flops.hpp"
#include "deltaworld/plot.hpp"

namespace dw {

namespace fs = std::filesystem;

namespace {

// relative outputs land under $DELTAWORLD_OUT when it is set
std::string resolve_out(const std::string& path) {
    const char* root = std::getenv("DELTAWORLD_OUT");
    if (!root || !*root || path.empty() || fs::path(path).is_absolute()) return path;
    return (fs::path(root) / path).string();
}

std::string hash_hex(uint64_t h) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "0x%016" PRIx64, h);
    return buf;
}

std::string provenance_line(const KvConfig& kv, uint64_t seed) {
    return "config_hash=" + hash_hex(kv.hash()) + " seed=" + std::to_string(seed);
}

KvConfig merge_config(const std::string& config_path, const std::vector<std::string>& sets) {
    KvConfig kv;
    if (!config_path.empty()) kv = KvConfig::parse_file(config_path);
    for (const auto& s : sets) {
        size_t eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
        kv.set(s.substr(0, eq), s.substr(eq + 1));
    }
    return kv;
}

struct LoadedData {
    std::vector<VideoSequence> seqs;
    std::vector<FeatureSequence> feats;
    int frame_size = 0;
    int num_classes = 0;
};

LoadedData load_embedded(const ToyVfm& vfm, const std::string& dir) {
    LoadedData d;
    d.seqs = read_dataset(dir);
    if (d.seqs.empty()) throw ConfigError("dataset " + dir + " is empty");
    d.feats = embed_dataset(vfm, d.seqs);
    d.frame_size = d.seqs[0].side();
    d.num_classes = d.seqs[0].config.num_objects + 1;
    return d;
}

void append_vfm_params(ParamSet<float>& ps, const ToyVfm& vfm) {
    for (const auto& e : vfm.params().entries) {
        ps.add(e.name, e.value.shape, false);
        ps.get(e.name) = e.value;
    }
}

void verify_vfm_params(const ParamSet<float>& ps, const ToyVfm& vfm, const std::string& what) {
    for (const auto& e : vfm.params().entries) {
        if (!ps.has(e.name)) throw ConfigError(what + ": missing frozen extractor tensor " + e.name);
        if (ps.get(e.name).v != e.value.v)
            throw ConfigError(what + ": frozen extractor differs from this build");
    }
}

ParamSet<float> strip_vfm(const ParamSet<float>& ps) {
    ParamSet<float> out;
    for (const auto& e : ps.entries)
        if (e.name.rfind("vfm.", 0) != 0) {
            out.add(e.name, e.value.shape, e.trainable);
            out.get(e.name) = e.value;
        }
    return out;
}

TokenizerConfig tokenizer_config_from_extra(const Checkpoint& ck) {
    auto get = [&](const std::string& k) {
        auto it = ck.extra.find(k);
        if (it == ck.extra.end()) throw IoError("tokenizer checkpoint missing field " + k);
        return it->second;
    };
    TokenizerConfig cfg;
    cfg.block.dim = std::atoi(get("dim").c_str());
    cfg.block.heads = std::atoi(get("heads").c_str());
    cfg.block.mlp_ratio = std::atof(get("mlp_ratio").c_str());
    cfg.encoder_blocks = std::atoi(get("encoder_blocks").c_str());
    cfg.decoder_blocks = std::atoi(get("decoder_blocks").c_str());
    cfg.mode = tokenizer_mode_from_name(get("mode"));
    cfg.grid_h = std::atoi(get("grid_h").c_str());
    cfg.grid_w = std::atoi(get("grid_w").c_str());
    return cfg;
}

PredictorConfig predictor_config_from_extra(const Checkpoint& ck) {
    auto get = [&](const std::string& k) {
        auto it = ck.extra.find(k);
        if (it == ck.extra.end()) throw IoError("predictor checkpoint missing field " + k);
        return it->second;
    };
    PredictorConfig cfg;
    cfg.block.dim = std::atoi(get("dim").c_str());
    cfg.block.heads = std::atoi(get("heads").c_str());
    cfg.block.mlp_ratio = std::atof(get("mlp_ratio").c_str());
    cfg.blocks = std::atoi(get("blocks").c_str());
    cfg.variant = predictor_variant_from_name(get("variant"));
    cfg.rope_base = std::atof(get("rope_base").c_str());
    cfg.time_scale = std::atof(get("time_scale").c_str());
    cfg.smooth_l1_beta = std::atof(get("smooth_l1_beta").c_str());
    return cfg;
}

Tokenizer load_tokenizer(const ToyVfm& vfm, const std::string& path, TrainMode mode) {
    Checkpoint ck = load_checkpoint(path);
    if (ck.component != "tokenizer") throw ConfigError(path + " is not a tokenizer checkpoint");
    TokenizerConfig cfg = tokenizer_config_from_extra(ck);
    uint64_t expect = fnv1a64(tokenizer_signature(cfg));
    if (expect != ck.config_hash)
        throw ConfigError(path + ": config hash mismatch (" + hash_hex(ck.config_hash) + " vs " +
                          hash_hex(expect) + ")");
    verify_vfm_params(ck.params, vfm, path);
    TokenizerMode want =
        (variant_of(mode) == PredictorVariant::frame) ? TokenizerMode::frame : TokenizerMode::delta;
    if (cfg.mode != want)
        throw ConfigError(path + ": tokenizer mode " + tokenizer_mode_name(cfg.mode) +
                          " does not match training mode " + train_mode_name(mode));
    return Tokenizer(cfg, strip_vfm(ck.params));
}

void write_text(const std::string& path, const std::string& text) {
    fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path);
    f << text;
}

std::string g9(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

// ---- subcommand bodies ----

int cmd_gen_data(const KvConfig& kv, const std::string& out_dir) {
    ScenarioConfig sc = scenario_from(kv);
    int count = static_cast<int>(kv.get_int("data.count", 16));
    uint64_t seed = static_cast<uint64_t>(kv.get_int("data.seed", 0));
    std::vector<VideoSequence> seqs;
    seqs.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        VideoSequence s = generate_sequence(sc, seed + static_cast<uint64_t>(i));
        s.id = i;
        seqs.push_back(std::move(s));
    }
    std::string dir = resolve_out(out_dir);
    write_dataset(seqs, dir);
    write_text((fs::path(dir) / "provenance.txt").string(),
               provenance_line(kv, seed) + "\ncommand=gen-data\n" + kv.canonical());
    std::cout << "wrote " << count << " sequences to " << dir << "\n";
    return 0;
}

int cmd_train_tokenizer(const KvConfig& kv, const std::string& data_dir, const std::string& out_path,
                        const std::string& log_path) {
    ToyVfm vfm;
    LoadedData data = load_embedded(vfm, data_dir);
    TokenizerConfig cfg = tokenizer_config_from(kv);
    cfg.grid_h = cfg.grid_w = data.frame_size / ToyVfm::kPatch;
    TokenizerTrainConfig tc = tokenizer_train_from(kv);

    Tokenizer tok(cfg, hash_mix(tc.seed, 0x70CULL));
    TrainLog log = train_tokenizer(tok, data.feats, tc);

    if (!log_path.empty()) {
        std::string csv = "# " + provenance_line(kv, tc.seed) + "\nstep,loss\n";
        for (size_t i = 0; i < log.losses.size(); ++i)
            csv += std::to_string(i) + "," + g9(log.losses[i]) + "\n";
        write_text(resolve_out(log_path), csv);
    }

    Checkpoint ck;
    ck.component = "tokenizer";
    ck.variant = tokenizer_mode_name(cfg.mode);
    ck.config_hash = fnv1a64(tokenizer_signature(cfg));
    ck.seed = tc.seed;
    ck.step = tc.iters;
    ck.extra["dim"] = std::to_string(cfg.block.dim);
    ck.extra["heads"] = std::to_string(cfg.block.heads);
    ck.extra["mlp_ratio"] = g9(cfg.block.mlp_ratio);
    ck.extra["encoder_blocks"] = std::to_string(cfg.encoder_blocks);
    ck.extra["decoder_blocks"] = std::to_string(cfg.decoder_blocks);
    ck.extra["mode"] = tokenizer_mode_name(cfg.mode);
    ck.extra["grid_h"] = std::to_string(cfg.grid_h);
    ck.extra["grid_w"] = std::to_string(cfg.grid_w);
    ck.extra["final_loss"] = g9(log.final_loss);
    ck.extra["run_config_hash"] = hash_hex(kv.hash());
    ck.params = tok.params();
    append_vfm_params(ck.params, vfm);
    save_checkpoint(resolve_out(out_path), ck);
    std::cout << "tokenizer " << ck.variant << ": loss " << g9(log.initial_loss) << " -> "
              << g9(log.final_loss) << ", saved " << resolve_out(out_path) << "\n";
    return 0;
}

int cmd_train_predictor(const KvConfig& kv, const std::string& data_dir, const std::string& mode_name,
                        const std::string& tokenizer_path, const std::string& out_path,
                        const std::string& log_path, const std::string& init_from) {
    TrainMode mode = train_mode_from_name(mode_name);
    ToyVfm vfm;
    LoadedData data = load_embedded(vfm, data_dir);

    std::optional<Tokenizer> tok;
    std::optional<TokenCache> cache;
    if (variant_of(mode) != PredictorVariant::spatial) {
        if (tokenizer_path.empty())
            throw ConfigError("mode " + mode_name + " needs --tokenizer");
        tok.emplace(load_tokenizer(vfm, tokenizer_path, mode));
        int grid = data.frame_size / ToyVfm::kPatch;
        if (tok->config().grid_h != grid)
            throw ConfigError("tokenizer grid " + std::to_string(tok->config().grid_h) +
                              " does not match dataset grid " + std::to_string(grid));
        cache.emplace(*tok, &data.feats, vfm.black_frame_grid(data.frame_size));
    }

    PredictorConfig pcfg = predictor_config_from(kv);
    pcfg.variant = variant_of(mode);
    PredictorTrainConfig tcfg = predictor_train_from(kv);
    tcfg.log_csv = log_path.empty() ? "" : resolve_out(log_path);
    tcfg.log_header = provenance_line(kv, tcfg.seed) + " mode=" + mode_name;

    std::optional<ParamSet<float>> init;
    if (!init_from.empty()) {
        Checkpoint prev = load_checkpoint(init_from);
        if (prev.component != "predictor")
            throw ConfigError(init_from + " is not a predictor checkpoint");
        uint64_t expect = fnv1a64(predictor_signature(pcfg));
        if (prev.config_hash != expect)
            throw ConfigError(init_from + ": config hash mismatch (" + hash_hex(prev.config_hash) +
                              " vs " + hash_hex(expect) + ")");
        verify_vfm_params(prev.params, vfm, init_from);
        init = strip_vfm(prev.params);
    }

    PredictorTrainResult res = train_predictor(mode, data.feats, cache ? &*cache : nullptr, pcfg,
                                               tcfg, init ? &*init : nullptr);

    Checkpoint ck;
    ck.component = "predictor";
    ck.variant = mode_name;
    ck.config_hash = fnv1a64(predictor_signature(res.model));
    ck.seed = tcfg.seed;
    ck.step = tcfg.iters + tcfg.finetune_iters;
    ck.extra["dim"] = std::to_string(res.model.block.dim);
    ck.extra["heads"] = std::to_string(res.model.block.heads);
    ck.extra["mlp_ratio"] = g9(res.model.block.mlp_ratio);
    ck.extra["blocks"] = std::to_string(res.model.blocks);
    ck.extra["variant"] = predictor_variant_name(res.model.variant);
    ck.extra["rope_base"] = g9(res.model.rope_base);
    ck.extra["time_scale"] = g9(res.model.time_scale);
    ck.extra["smooth_l1_beta"] = g9(res.model.smooth_l1_beta);
    ck.extra["mode"] = mode_name;
    ck.extra["k_train"] = std::to_string(tcfg.k_train);
    ck.extra["final_loss"] = g9(res.log.final_loss);
    ck.extra["run_config_hash"] = hash_hex(kv.hash());
    if (tok) ck.extra["tokenizer_config_hash"] = hash_hex(fnv1a64(tokenizer_signature(tok->config())));
    ck.params = res.params;
    append_vfm_params(ck.params, vfm);
    save_checkpoint(resolve_out(out_path), ck);
    std::cout << "predictor " << mode_name << ": loss " << g9(res.log.initial_loss) << " -> "
              << g9(res.log.final_loss) << ", saved " << resolve_out(out_path) << "\n";
    return 0;
}

struct LoadedPredictor {
    PredictorRuntime runtime;
    std::string mode;
    int k_train = 0;
};

LoadedPredictor load_predictor(const ToyVfm& vfm, const std::string& path) {
    Checkpoint ck = load_checkpoint(path);
    if (ck.component != "predictor") throw ConfigError(path + " is not a predictor checkpoint");
    PredictorConfig cfg = predictor_config_from_extra(ck);
    uint64_t expect = fnv1a64(predictor_signature(cfg));
    if (expect != ck.config_hash)
        throw ConfigError(path + ": config hash mismatch (" + hash_hex(ck.config_hash) + " vs " +
                          hash_hex(expect) + ")");
    verify_vfm_params(ck.params, vfm, path);
    LoadedPredictor lp;
    lp.runtime.cfg = cfg;
    lp.runtime.params = strip_vfm(ck.params);
    lp.mode = ck.variant;
    auto it = ck.extra.find("k_train");
    if (it != ck.extra.end()) lp.k_train = std::atoi(it->second.c_str());
    return lp;
}

EvalProtocol protocol_from(const KvConfig& kv) {
    EvalProtocol proto;
    proto.context_frames = static_cast<int>(kv.get_int("eval.context", proto.context_frames));
    proto.stride_s = kv.get_double("eval.stride", proto.stride_s);
    proto.k_eval = static_cast<int>(kv.get_int("eval.k", proto.k_eval));
    proto.query_mu = kv.get_double("eval.query_mu", proto.query_mu);
    proto.query_sigma = kv.get_double("eval.query_sigma", proto.query_sigma);
    proto.seed = static_cast<uint64_t>(kv.get_int("eval.seed", 0));
    return proto;
}

int cmd_eval(const KvConfig& kv, const std::string& data_dir, const std::string& head_data_dir,
             const std::string& predictor_path, const std::string& tokenizer_path,
             const std::string& out_dir) {
    ToyVfm vfm;
    LoadedData eval_data = load_embedded(vfm, data_dir);
    LoadedPredictor model = load_predictor(vfm, predictor_path);

    std::optional<Tokenizer> tok;
    if (model.runtime.cfg.variant != PredictorVariant::spatial) {
        if (tokenizer_path.empty()) throw ConfigError("token-variant eval needs --tokenizer");
        TrainMode tmode = model.runtime.cfg.variant == PredictorVariant::frame ? TrainMode::bom_frame
                                                                               : TrainMode::bom_delta;
        tok.emplace(load_tokenizer(vfm, tokenizer_path, tmode));
    }

    LoadedData head_data =
        head_data_dir.empty() ? load_embedded(vfm, data_dir) : load_embedded(vfm, head_data_dir);
    TaskHeadTrainConfig hc;
    hc.iters = static_cast<int>(kv.get_int("eval.head_iters", 300));
    hc.seed = static_cast<uint64_t>(kv.get_int("eval.seed", 0));
    TaskHead head = train_task_head(head_data.feats, head_data.seqs, head_data.num_classes, hc);

    EvalProtocol proto = protocol_from(kv);
    if (model.mode.rfind("disc-", 0) == 0) proto.use_learned_query = true;
    EvalSummary summary = evaluate(model.runtime, tok ? &*tok : nullptr, vfm, eval_data.seqs,
                                   eval_data.feats, head, proto);

    std::string dir = resolve_out(out_dir);
    fs::create_directories(dir);
    std::string prov = provenance_line(kv, proto.seed);
    {
        std::string csv = "# " + prov + "\n";
        csv += "seq_id,horizon,k,best,mean,copy_last,present,best_feature_loss,mean_feature_loss\n";
        for (const auto& r : summary.rows)
            csv += std::to_string(r.seq_id) + "," + r.horizon + "," + std::to_string(r.k) + "," +
                   g9(r.best) + "," + g9(r.mean) + "," + g9(r.copy_last) + "," + g9(r.present) +
                   "," + g9(r.best_feature_loss) + "," + g9(r.mean_feature_loss) + "\n";
        write_text((fs::path(dir) / "metrics.csv").string(), csv);
    }
    {
        nlohmann::json j;
        j["config_hash"] = hash_hex(kv.hash());
        j["seed"] = proto.seed;
        j["mode"] = model.mode;
        j["k_eval"] = proto.k_eval;
        j["mid"] = {{"best_miou", summary.best_miou},
                    {"mean_miou", summary.mean_miou},
                    {"copy_last_miou", summary.copy_last_miou},
                    {"present_miou", summary.present_miou},
                    {"best_feature_loss", summary.best_feature_loss},
                    {"mean_feature_loss", summary.mean_feature_loss}};
        j["short"] = {{"best_miou", summary.short_best_miou}, {"mean_miou", summary.short_mean_miou}};
        write_text((fs::path(dir) / "summary.json").string(), j.dump(2) + "\n");
    }
    {
        std::string csv = "# " + prov + "\nlabel,best,mean,copy_last,present\n";
        csv += model.mode + "," + g9(summary.best_miou) + "," + g9(summary.mean_miou) + "," +
               g9(summary.copy_last_miou) + "," + g9(summary.present_miou) + "\n";
        write_text((fs::path(dir) / "plotdata_bars.csv").string(), csv);
    }
    std::cout << "eval " << model.mode << " mid: best " << g9(summary.best_miou) << " mean "
              << g9(summary.mean_miou) << " copy-last " << g9(summary.copy_last_miou) << " present "
              << g9(summary.present_miou) << "\n";
    return 0;
}

int cmd_flops(const KvConfig& kv, const std::string& variant_name, int k, int context, int steps,
              int frame_size, const std::string& out_dir) {
    PredictorVariant variant = predictor_variant_from_name(variant_name);
    TokenizerConfig tok_cfg = tokenizer_config_from(kv);
    PredictorConfig pred_cfg = predictor_config_from(kv);
    pred_cfg.variant = variant;
    FlopsReport rep = pipeline_breakdown(variant, k, context, steps, frame_size, tok_cfg, pred_cfg);
    std::string table = format_flops_table(rep);
    std::cout << table;
    if (!out_dir.empty()) {
        std::string dir = resolve_out(out_dir);
        fs::create_directories(dir);
        write_text((fs::path(dir) / "flops.txt").string(), table);
        write_text((fs::path(dir) / "flops.csv").string(),
                   "# " + provenance_line(kv, 0) + "\n" + flops_csv(rep));
    }
    return 0;
}

int cmd_sweep(const KvConfig& kv, const std::string& data_dir, const std::string& eval_data_dir,
              const std::string& tokenizer_path, const std::string& out_dir,
              std::vector<int> train_ks, std::vector<int> eval_ks) {
    ToyVfm vfm;
    LoadedData train_data = load_embedded(vfm, data_dir);
    LoadedData eval_data = load_embedded(vfm, eval_data_dir);
    Tokenizer tok = load_tokenizer(vfm, tokenizer_path, TrainMode::bom_delta);
    TokenCache cache(tok, &train_data.feats, vfm.black_frame_grid(train_data.frame_size));

    TaskHeadTrainConfig hc;
    hc.iters = static_cast<int>(kv.get_int("eval.head_iters", 300));
    TaskHead head = train_task_head(train_data.feats, train_data.seqs, train_data.num_classes, hc);

    PredictorConfig pcfg = predictor_config_from(kv);
    PredictorTrainConfig tcfg = predictor_train_from(kv);
    EvalProtocol proto = protocol_from(kv);

    if (train_ks.empty()) train_ks = {1, 4, 16};
    if (eval_ks.empty()) eval_ks = {1, 4, 16};
    SweepResult res = sweep_k(train_ks, eval_ks, train_data.feats, &cache, pcfg, tcfg, tok, vfm,
                              eval_data.seqs, eval_data.feats, head, proto);

    std::string dir = resolve_out(out_dir);
    fs::create_directories(dir);
    std::string csv = "# " + provenance_line(kv, tcfg.seed) + "\n";
    csv += "train_k,eval_k,best_miou,mean_miou,best_feature_loss\n";
    for (const auto& c : res.cells)
        csv += std::to_string(c.train_k) + "," + std::to_string(c.eval_k) + "," + g9(c.best_miou) +
               "," + g9(c.mean_miou) + "," + g9(c.best_feature_loss) + "\n";
    write_text((fs::path(dir) / "grid.csv").string(), csv);
    std::cout << "sweep grid written to " << (fs::path(dir) / "grid.csv").string() << "\n";
    return 0;
}

struct CsvTable {
    std::vector<std::string> comments;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

CsvTable read_csv(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    CsvTable t;
    std::string line;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            t.comments.push_back(line);
            continue;
        }
        std::vector<std::string> cells;
        size_t pos = 0;
        while (true) {
            size_t c = line.find(',', pos);
            cells.push_back(line.substr(pos, c == std::string::npos ? std::string::npos : c - pos));
            if (c == std::string::npos) break;
            pos = c + 1;
        }
        if (t.header.empty())
            t.header = cells;
        else
            t.rows.push_back(cells);
    }
    if (t.header.empty()) throw IoError(path + ": empty csv");
    return t;
}

int cmd_plot(const KvConfig& kv, const std::string& kind, const std::string& in_path,
             const std::string& out_path, const std::string& metric) {
    CsvTable t = read_csv(in_path);
    std::map<std::string, std::string> chunks;
    chunks["config_hash"] = hash_hex(kv.hash());
    for (const auto& c : t.comments) chunks["source"] = c;

    std::string png = resolve_out(out_path);
    fs::path csv_copy = fs::path(png);
    csv_copy.replace_extension(".csv");

    if (kind == "bars") {
        std::vector<BarGroup> groups;
        double copy_last = 0, present = 0;
        for (const auto& r : t.rows) {
            if (r.size() < 5) throw IoError(in_path + ": bars csv needs label,best,mean,copy_last,present");
            groups.push_back({r[0], std::atof(r[1].c_str()), std::atof(r[2].c_str())});
            copy_last = std::atof(r[3].c_str());
            present = std::atof(r[4].c_str());
        }
        if (groups.empty()) throw IoError(in_path + ": no data rows");
        Image img = render_bar_chart("BEST/MEAN MIOU", groups, copy_last, present, "MIOU");
        write_png(png, img, chunks);
    } else if (kind == "heatmap") {
        // pivot a sweep grid: rows = eval_k (descending), cols = train_k
        std::vector<int> tks, eks;
        std::map<std::pair<int, int>, double> val;
        int col = 2;
        for (size_t i = 0; i < t.header.size(); ++i)
            if (t.header[i] == metric) col = static_cast<int>(i);
        for (const auto& r : t.rows) {
            int tk = std::atoi(r[0].c_str()), ek = std::atoi(r[1].c_str());
            if (std::find(tks.begin(), tks.end(), tk) == tks.end()) tks.push_back(tk);
            if (std::find(eks.begin(), eks.end(), ek) == eks.end()) eks.push_back(ek);
            val[{tk, ek}] = std::atof(r[static_cast<size_t>(col)].c_str());
        }
        std::sort(tks.begin(), tks.end());
        std::sort(eks.begin(), eks.end(), std::greater<>());
        std::vector<std::vector<double>> grid;
        std::vector<std::string> row_labels, col_labels;
        for (int ek : eks) {
            row_labels.push_back("K=" + std::to_string(ek));
            std::vector<double> row;
            for (int tk : tks) row.push_back(val.count({tk, ek}) ? val[{tk, ek}] : 0.0);
            grid.push_back(std::move(row));
        }
        for (int tk : tks) col_labels.push_back("K=" + std::to_string(tk));
        Image img = render_heatmap(metric, col_labels, row_labels, grid);
        write_png(png, img, chunks);
    } else {
        throw ConfigError("unknown plot kind: " + kind);
    }

    // the plotted data rides along for headless diffing
    std::string csv_out;
    for (const auto& c : t.comments) csv_out += c + "\n";
    csv_out += "# " + provenance_line(kv, 0) + "\n";
    for (size_t i = 0; i < t.header.size(); ++i) csv_out += (i ? "," : "") + t.header[i];
    csv_out += "\n";
    for (const auto& r : t.rows) {
        for (size_t i = 0; i < r.size(); ++i) csv_out += (i ? "," : "") + r[i];
        csv_out += "\n";
    }
    write_text(csv_copy.string(), csv_out);
    std::cout << "wrote " << png << " and " << csv_copy.string() << "\n";
    return 0;
}

std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    size_t pos = 0;
    while (pos < s.size()) {
        size_t c = s.find(',', pos);
        out.push_back(std::atoi(s.substr(pos, c == std::string::npos ? std::string::npos : c - pos).c_str()));
        if (c == std::string::npos) break;
        pos = c + 1;
    }
    return out;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"delta-token video world model workbench"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> sets;
    app.add_option("--config", config_path, "configuration file (key = value lines)");
    app.add_option("--set", sets, "override a configuration key (key=value)");

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic video dataset");
    gen->fallthrough();
    std::string gen_out;
    gen->add_option("--out", gen_out, "output dataset directory")->required();

    auto* ttok = app.add_subcommand("train-tokenizer", "train a frame or delta tokenizer");
    ttok->fallthrough();
    std::string ttok_data, ttok_out, ttok_mode, ttok_log;
    ttok->add_option("--data", ttok_data, "training dataset directory")->required();
    ttok->add_option("--out", ttok_out, "output checkpoint path")->required();
    ttok->add_option("--mode", ttok_mode, "tokenizer mode: frame|delta");
    ttok->add_option("--log", ttok_log, "per-step loss csv");

    auto* tpred = app.add_subcommand("train-predictor", "train a future predictor");
    tpred->fallthrough();
    std::string tp_data, tp_out, tp_mode, tp_tok, tp_log, tp_init;
    tpred->add_option("--data", tp_data, "training dataset directory")->required();
    tpred->add_option("--out", tp_out, "output checkpoint path")->required();
    tpred->add_option("--mode", tp_mode,
                      "disc-spatial|bom-spatial|bom-frame|bom-delta|disc-delta")->required();
    tpred->add_option("--tokenizer", tp_tok, "tokenizer checkpoint (frame/delta modes)");
    tpred->add_option("--log", tp_log, "per-step metrics csv");
    tpred->add_option("--init-from", tp_init, "resume from a predictor checkpoint");

    auto* ev = app.add_subcommand("eval", "dense-forecasting evaluation");
    ev->fallthrough();
    std::string ev_data, ev_head_data, ev_pred, ev_tok, ev_out;
    ev->add_option("--data", ev_data, "evaluation dataset directory")->required();
    ev->add_option("--head-data", ev_head_data, "task-head training dataset (defaults to --data)");
    ev->add_option("--predictor", ev_pred, "predictor checkpoint")->required();
    ev->add_option("--tokenizer", ev_tok, "tokenizer checkpoint (token variants)");
    ev->add_option("--out", ev_out, "output directory")->required();

    auto* fl = app.add_subcommand("flops", "analytic cost breakdown");
    fl->fallthrough();
    std::string fl_variant = "delta", fl_out;
    int fl_k = 20, fl_ctx = 4, fl_steps = 3, fl_fs = 64;
    fl->add_option("--variant", fl_variant, "spatial|frame|delta");
    fl->add_option("--k", fl_k, "samples");
    fl->add_option("--context", fl_ctx, "context frames");
    fl->add_option("--steps", fl_steps, "rollout steps");
    fl->add_option("--frame-size", fl_fs, "frame side, pixels");
    fl->add_option("--out", fl_out, "output directory");

    auto* sw = app.add_subcommand("sweep", "train-K x eval-K grid");
    sw->fallthrough();
    std::string sw_data, sw_eval, sw_tok, sw_out, sw_tks, sw_eks;
    sw->add_option("--data", sw_data, "training dataset")->required();
    sw->add_option("--eval-data", sw_eval, "evaluation dataset")->required();
    sw->add_option("--tokenizer", sw_tok, "delta tokenizer checkpoint")->required();
    sw->add_option("--out", sw_out, "output directory")->required();
    sw->add_option("--train-ks", sw_tks, "comma-separated train query counts");
    sw->add_option("--eval-ks", sw_eks, "comma-separated eval query counts");

    auto* pl = app.add_subcommand("plot", "render charts from metric csvs");
    pl->fallthrough();
    std::string pl_kind, pl_in, pl_out, pl_metric = "best_miou";
    pl->add_option("--kind", pl_kind, "bars|heatmap")->required();
    pl->add_option("--in", pl_in, "input csv")->required();
    pl->add_option("--out", pl_out, "output png")->required();
    pl->add_option("--metric", pl_metric, "heatmap metric column");

    try {
        app.parse(argc, argv);
        KvConfig kv = merge_config(config_path, sets);
        if (gen->parsed()) return cmd_gen_data(kv, gen_out);
        if (ttok->parsed()) {
            if (!ttok_mode.empty()) kv.set("model.tok_mode", ttok_mode);
            return cmd_train_tokenizer(kv, ttok_data, ttok_out, ttok_log);
        }
        if (tpred->parsed()) return cmd_train_predictor(kv, tp_data, tp_mode, tp_tok, tp_out, tp_log, tp_init);
        if (ev->parsed()) return cmd_eval(kv, ev_data, ev_head_data, ev_pred, ev_tok, ev_out);
        if (fl->parsed()) return cmd_flops(kv, fl_variant, fl_k, fl_ctx, fl_steps, fl_fs, fl_out);
        if (sw->parsed())
            return cmd_sweep(kv, sw_data, sw_eval, sw_tok, sw_out, parse_int_list(sw_tks),
                             parse_int_list(sw_eks));
        if (pl->parsed()) return cmd_plot(kv, pl_kind, pl_in, pl_out, pl_metric);
        return 1;
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::cerr << "error: usage: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

int run_cli(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.push_back("deltaworld");
    for (const auto& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace dw
