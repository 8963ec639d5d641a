#include "deltaworld/synthworld.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "deltaworld/rng.hpp"

namespace dw {

namespace fs = std::filesystem;

std::string dynamics_name(Dynamics d) {
    switch (d) {
        case Dynamics::deterministic_drift: return "deterministic-drift";
        case Dynamics::bimodal_branch: return "bimodal-branch";
        case Dynamics::multi_agent: return "multi-agent";
    }
    throw ConfigError("unknown dynamics enum");
}

Dynamics dynamics_from_name(const std::string& s) {
    if (s == "deterministic-drift") return Dynamics::deterministic_drift;
    if (s == "bimodal-branch") return Dynamics::bimodal_branch;
    if (s == "multi-agent") return Dynamics::multi_agent;
    throw ConfigError("unknown dynamics: " + s);
}

std::vector<std::array<float, 3>> default_palette() {
    return {
        {1.00f, 0.15f, 0.15f}, {0.15f, 1.00f, 0.20f}, {0.20f, 0.35f, 1.00f},
        {1.00f, 0.90f, 0.10f}, {1.00f, 0.20f, 1.00f}, {0.10f, 0.90f, 0.90f},
        {1.00f, 0.60f, 0.10f}, {0.60f, 0.20f, 0.90f},
    };
}

void ScenarioConfig::validate() const {
    if (frame_size <= 0 || frame_size % 8 != 0)
        throw ConfigError("frame_size must be a positive multiple of the patch size (8)");
    if (num_objects < 1) throw ConfigError("num_objects must be >= 1");
    if (static_objects < 0 || static_objects > num_objects)
        throw ConfigError("static_objects must be in [0, num_objects]");
    if (dynamics != Dynamics::deterministic_drift && moving_objects() < 1)
        throw ConfigError("branching dynamics needs at least one moving object");
    if (branch_prob < 0.0 || branch_prob > 1.0) throw ConfigError("branch_prob must be in [0,1]");
    if (fps <= 0.0) throw ConfigError("fps must be > 0");
    if (duration <= 0.0 || num_frames() < 1) throw ConfigError("duration must cover at least one frame");
    if (min_speed < 0.0 || max_speed < min_speed) throw ConfigError("invalid speed range");
    if (object_size <= 0.0 || object_size >= frame_size) throw ConfigError("invalid object_size");
    size_t colors = palette.empty() ? default_palette().size() : palette.size();
    if (static_cast<size_t>(num_objects) > colors)
        throw ConfigError("num_objects exceeds palette size");
    if (dynamics != Dynamics::deterministic_drift &&
        (branch_time < 0.0 || branch_frame() >= num_frames()))
        throw ConfigError("branch_time outside the sequence");
}

namespace {

bool is_branching(Dynamics d) { return d != Dynamics::deterministic_drift; }

struct Kinematics {
    std::vector<ObjectState> init;
};

// Initial placement. Branching objects move horizontally and are positioned
// so the pre-branch leg ends at the horizontal center: both post-branch modes
// then stay in frame without wall bounces, keeping the future modes cleanly
// separated for the oracle.
Kinematics draw_kinematics(const ScenarioConfig& cfg, uint64_t seed) {
    Rng rng(hash_mix(seed, 0xA11CEULL));
    double half = cfg.object_size / 2.0;
    double lo = half + 1.0, hi = cfg.frame_size - half - 1.0;
    Kinematics kin;
    for (int i = 0; i < cfg.num_objects; ++i) {
        ObjectState s;
        double speed = rng.uniform(cfg.min_speed, cfg.max_speed);
        bool is_static = i < cfg.static_objects;
        if (is_branching(cfg.dynamics) && !is_static) {
            double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
            s.vx = sign * speed;
            s.vy = 0.0;
            s.x = cfg.frame_size / 2.0 - s.vx * cfg.branch_time;
            s.y = rng.uniform(lo, hi);
        } else {
            double ang = rng.uniform(0.0, 6.283185307179586);
            s.vx = speed * std::cos(ang);
            s.vy = speed * std::sin(ang);
            s.x = rng.uniform(lo, hi);
            s.y = rng.uniform(lo, hi);
        }
        if (is_static) s.vx = s.vy = 0.0;
        kin.init.push_back(s);
    }
    return kin;
}

void reflect(double& p, double& v, double lo, double hi) {
    if (p < lo) {
        p = 2.0 * lo - p;
        v = -v;
    } else if (p > hi) {
        p = 2.0 * hi - p;
        v = -v;
    }
}

void render_frame(const ScenarioConfig& cfg, const std::vector<ObjectState>& objs,
                  const std::vector<std::array<float, 3>>& palette, float* frame, uint8_t* label) {
    int s = cfg.frame_size;
    std::memset(frame, 0, static_cast<size_t>(s) * static_cast<size_t>(s) * 3 * sizeof(float));
    std::memset(label, 0, static_cast<size_t>(s) * static_cast<size_t>(s));
    double half = cfg.object_size / 2.0;
    for (size_t i = 0; i < objs.size(); ++i) {
        const auto& o = objs[i];
        const auto& col = palette[i % palette.size()];
        int x0 = std::max(0, static_cast<int>(std::floor(o.x - half)));
        int x1 = std::min(s - 1, static_cast<int>(std::ceil(o.x + half)));
        int y0 = std::max(0, static_cast<int>(std::floor(o.y - half)));
        int y1 = std::min(s - 1, static_cast<int>(std::ceil(o.y + half)));
        for (int y = y0; y <= y1; ++y) {
            if (std::abs(y + 0.5 - o.y) >= half) continue;
            for (int x = x0; x <= x1; ++x) {
                if (std::abs(x + 0.5 - o.x) >= half) continue;
                size_t px = static_cast<size_t>(y) * static_cast<size_t>(s) + static_cast<size_t>(x);
                frame[px * 3 + 0] = col[0];
                frame[px * 3 + 1] = col[1];
                frame[px * 3 + 2] = col[2];
                label[px] = static_cast<uint8_t>(i + 1);
            }
        }
    }
}

VideoSequence generate_with_decisions(const ScenarioConfig& cfg, uint64_t seed,
                                      const std::vector<bool>* forced_flips) {
    cfg.validate();
    VideoSequence seq;
    seq.seed = seed;
    seq.config = cfg;
    if (seq.config.palette.empty()) seq.config.palette = default_palette();

    int t_count = cfg.num_frames();
    int s = cfg.frame_size;
    Kinematics kin = draw_kinematics(cfg, seed);

    // one decision per moving object
    std::vector<bool> flips(static_cast<size_t>(cfg.moving_objects()), false);
    if (is_branching(cfg.dynamics)) {
        if (forced_flips) {
            flips = *forced_flips;
        } else {
            Rng rng(hash_mix(seed, 0xB4A7C4ULL));
            for (auto&& f : flips) f = rng.bernoulli(cfg.branch_prob);
        }
    }

    seq.timestamps.resize(static_cast<size_t>(t_count));
    seq.frames.resize(static_cast<size_t>(t_count) * static_cast<size_t>(s) * static_cast<size_t>(s) * 3);
    seq.labels.resize(static_cast<size_t>(t_count) * static_cast<size_t>(s) * static_cast<size_t>(s));
    seq.trace.resize(static_cast<size_t>(t_count));

    double half = cfg.object_size / 2.0;
    double lo = half, hi = s - half;
    int branch_frame = cfg.branch_frame();
    std::vector<ObjectState> objs = kin.init;
    for (int t = 0; t < t_count; ++t) {
        if (t > 0) {
            for (size_t i = 0; i < objs.size(); ++i) {
                auto& o = objs[i];
                bool flip = is_branching(cfg.dynamics) && t - 1 == branch_frame &&
                            static_cast<int>(i) >= cfg.static_objects &&
                            flips[i - static_cast<size_t>(cfg.static_objects)];
                if (flip && !o.branched) {
                    o.vx = -o.vx;
                    o.vy = -o.vy;
                    o.branched = true;
                }
                o.x += o.vx / cfg.fps;
                o.y += o.vy / cfg.fps;
                reflect(o.x, o.vx, lo, hi);
                reflect(o.y, o.vy, lo, hi);
            }
        }
        seq.timestamps[static_cast<size_t>(t)] = static_cast<double>(t) / cfg.fps;
        seq.trace[static_cast<size_t>(t)].objects = objs;
        render_frame(seq.config, objs, seq.config.palette,
                     seq.frames.data() + static_cast<size_t>(t) * static_cast<size_t>(s) * static_cast<size_t>(s) * 3,
                     seq.labels.data() + static_cast<size_t>(t) * static_cast<size_t>(s) * static_cast<size_t>(s));
    }
    return seq;
}

}  // namespace

VideoSequence generate_sequence(const ScenarioConfig& config, uint64_t seed) {
    return generate_with_decisions(config, seed, nullptr);
}

std::vector<VideoSequence> branch_futures(const VideoSequence& seq, int t_branch, int n, uint64_t seed) {
    if (t_branch < 0 || t_branch >= seq.frame_count())
        throw ConfigError("branch_futures: t_branch out of range");
    if (n < 1) throw ConfigError("branch_futures: n must be >= 1");
    const ScenarioConfig& cfg = seq.config;

    // The flip applies on the step out of branch_frame, so frames up to and
    // including branch_frame are branch-independent. Once the prefix extends
    // past it the outcome is fixed by the observed sequence.
    bool branch_open = is_branching(cfg.dynamics) && cfg.branch_frame() >= t_branch;

    std::vector<VideoSequence> futures;
    futures.reserve(static_cast<size_t>(n));
    int moving = cfg.moving_objects();
    if (!branch_open) {
        std::vector<bool> fixed(static_cast<size_t>(moving), false);
        if (is_branching(cfg.dynamics))
            for (int i = 0; i < moving; ++i)
                fixed[static_cast<size_t>(i)] =
                    seq.trace.back().objects[static_cast<size_t>(cfg.static_objects + i)].branched;
        for (int j = 0; j < n; ++j)
            futures.push_back(generate_with_decisions(cfg, seq.seed,
                                                      is_branching(cfg.dynamics) ? &fixed : nullptr));
        return futures;
    }

    uint64_t combos = 1ULL << static_cast<unsigned>(moving);
    if (static_cast<uint64_t>(n) == combos) {
        for (uint64_t bits = 0; bits < combos; ++bits) {
            std::vector<bool> flips(static_cast<size_t>(moving));
            for (int i = 0; i < moving; ++i)
                flips[static_cast<size_t>(i)] = (bits >> static_cast<unsigned>(i)) & 1ULL;
            futures.push_back(generate_with_decisions(cfg, seq.seed, &flips));
        }
        return futures;
    }
    for (int j = 0; j < n; ++j) {
        Rng rng(hash_mix(seed, static_cast<uint64_t>(j)));
        std::vector<bool> flips(static_cast<size_t>(moving));
        for (int i = 0; i < moving; ++i) flips[static_cast<size_t>(i)] = rng.bernoulli(cfg.branch_prob);
        futures.push_back(generate_with_decisions(cfg, seq.seed, &flips));
    }
    return futures;
}

std::optional<std::array<double, 2>> label_centroid(const VideoSequence& seq, int t, uint8_t class_id) {
    int s = seq.side();
    const uint8_t* lab = seq.label_ptr(t);
    double sx = 0, sy = 0;
    int64_t count = 0;
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x)
            if (lab[y * s + x] == class_id) {
                sx += x + 0.5;
                sy += y + 0.5;
                ++count;
            }
    if (count == 0) return std::nullopt;
    return std::array<double, 2>{sx / static_cast<double>(count), sy / static_cast<double>(count)};
}

// ---- dataset container ----

namespace {

std::string hexf(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%a", x);
    return buf;
}

void write_f32_le(std::ofstream& out, const float* data, size_t count) {
    std::vector<unsigned char> buf(count * 4);
    for (size_t i = 0; i < count; ++i) {
        uint32_t u;
        std::memcpy(&u, &data[i], 4);
        buf[i * 4 + 0] = static_cast<unsigned char>(u & 0xFF);
        buf[i * 4 + 1] = static_cast<unsigned char>((u >> 8) & 0xFF);
        buf[i * 4 + 2] = static_cast<unsigned char>((u >> 16) & 0xFF);
        buf[i * 4 + 3] = static_cast<unsigned char>((u >> 24) & 0xFF);
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

std::vector<float> read_f32_le(const fs::path& p, size_t expected_count) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot open " + p.string());
    std::vector<unsigned char> buf(expected_count * 4 + 1);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    size_t got = static_cast<size_t>(in.gcount());
    if (got != expected_count * 4)
        throw IoError(p.string() + ": expected " + std::to_string(expected_count * 4) + " bytes, found " +
                      std::to_string(got));
    std::vector<float> out(expected_count);
    for (size_t i = 0; i < expected_count; ++i) {
        uint32_t u = static_cast<uint32_t>(buf[i * 4 + 0]) | (static_cast<uint32_t>(buf[i * 4 + 1]) << 8) |
                     (static_cast<uint32_t>(buf[i * 4 + 2]) << 16) |
                     (static_cast<uint32_t>(buf[i * 4 + 3]) << 24);
        std::memcpy(&out[i], &u, 4);
    }
    return out;
}

// Line scanner that reports byte offsets in parse errors.
struct LineScanner {
    std::string text;
    size_t pos = 0;
    std::string path;

    explicit LineScanner(const fs::path& p) : path(p.string()) {
        std::ifstream in(p, std::ios::binary);
        if (!in) throw IoError("cannot open " + path);
        text.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }

    bool eof() const { return pos >= text.size(); }

    [[noreturn]] void fail(const std::string& msg, size_t at) const {
        throw IoError(path + ": parse error at byte " + std::to_string(at) + ": " + msg);
    }

    // next non-empty line; offset_out = byte offset of line start
    std::optional<std::string> next_line(size_t* offset_out = nullptr) {
        while (pos < text.size()) {
            size_t start = pos;
            size_t end = text.find('\n', pos);
            std::string line = (end == std::string::npos) ? text.substr(pos) : text.substr(pos, end - pos);
            pos = (end == std::string::npos) ? text.size() : end + 1;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            if (offset_out) *offset_out = start;
            return line;
        }
        return std::nullopt;
    }

    std::string expect_line(const std::string& what) {
        size_t at = pos;
        auto l = next_line(&at);
        if (!l) fail("unexpected end of file, expected " + what, text.size());
        return *l;
    }

    // "key = value"
    std::pair<std::string, std::string> expect_kv(const std::string& key) {
        size_t at = pos;
        std::string line = expect_line(key + " = ...");
        size_t eq = line.find(" = ");
        if (eq == std::string::npos) fail("expected 'key = value', got '" + line + "'", at);
        std::string k = line.substr(0, eq), v = line.substr(eq + 3);
        if (!key.empty() && k != key) fail("expected key '" + key + "', got '" + k + "'", at);
        return {k, v};
    }

    double expect_double(const std::string& key) {
        size_t at = pos;
        auto [k, v] = expect_kv(key);
        char* endp = nullptr;
        double x = std::strtod(v.c_str(), &endp);
        if (endp == v.c_str() || *endp != '\0') fail("bad number for " + key + ": '" + v + "'", at);
        return x;
    }

    int64_t expect_int(const std::string& key) {
        size_t at = pos;
        auto [k, v] = expect_kv(key);
        char* endp = nullptr;
        long long x = std::strtoll(v.c_str(), &endp, 10);
        if (endp == v.c_str() || *endp != '\0') fail("bad integer for " + key + ": '" + v + "'", at);
        return x;
    }
};

void write_scenario(std::ofstream& out, const ScenarioConfig& c) {
    out << "frame_size = " << c.frame_size << "\n";
    out << "num_objects = " << c.num_objects << "\n";
    out << "static_objects = " << c.static_objects << "\n";
    out << "dynamics = " << dynamics_name(c.dynamics) << "\n";
    out << "branch_prob = " << hexf(c.branch_prob) << "\n";
    out << "fps = " << hexf(c.fps) << "\n";
    out << "duration = " << hexf(c.duration) << "\n";
    out << "branch_time = " << hexf(c.branch_time) << "\n";
    out << "min_speed = " << hexf(c.min_speed) << "\n";
    out << "max_speed = " << hexf(c.max_speed) << "\n";
    out << "object_size = " << hexf(c.object_size) << "\n";
    out << "palette =";
    for (const auto& col : c.palette)
        out << " " << hexf(col[0]) << ":" << hexf(col[1]) << ":" << hexf(col[2]);
    out << "\n";
}

ScenarioConfig read_scenario(LineScanner& sc) {
    ScenarioConfig c;
    c.frame_size = static_cast<int>(sc.expect_int("frame_size"));
    c.num_objects = static_cast<int>(sc.expect_int("num_objects"));
    c.static_objects = static_cast<int>(sc.expect_int("static_objects"));
    c.dynamics = dynamics_from_name(sc.expect_kv("dynamics").second);
    c.branch_prob = sc.expect_double("branch_prob");
    c.fps = sc.expect_double("fps");
    c.duration = sc.expect_double("duration");
    c.branch_time = sc.expect_double("branch_time");
    c.min_speed = sc.expect_double("min_speed");
    c.max_speed = sc.expect_double("max_speed");
    c.object_size = sc.expect_double("object_size");
    size_t at = sc.pos;
    auto [k, v] = sc.expect_kv("palette");
    c.palette.clear();
    size_t p = 0;
    while (p < v.size()) {
        while (p < v.size() && v[p] == ' ') ++p;
        if (p >= v.size()) break;
        size_t end = v.find(' ', p);
        std::string trip = v.substr(p, end == std::string::npos ? std::string::npos : end - p);
        p = (end == std::string::npos) ? v.size() : end + 1;
        std::array<float, 3> col{};
        size_t c0 = trip.find(':'), c1 = trip.rfind(':');
        if (c0 == std::string::npos || c1 == c0) sc.fail("bad palette triplet '" + trip + "'", at);
        col[0] = std::strtof(trip.substr(0, c0).c_str(), nullptr);
        col[1] = std::strtof(trip.substr(c0 + 1, c1 - c0 - 1).c_str(), nullptr);
        col[2] = std::strtof(trip.substr(c1 + 1).c_str(), nullptr);
        c.palette.push_back(col);
    }
    return c;
}

}  // namespace

void write_dataset(const std::vector<VideoSequence>& sequences, const std::string& dir) {
    fs::create_directories(dir);
    std::ofstream man(fs::path(dir) / "manifest.txt", std::ios::binary);
    if (!man) throw IoError("cannot write manifest in " + dir);
    man << "deltaworld-dataset v1\n";
    man << "count = " << sequences.size() << "\n";
    for (const auto& seq : sequences) {
        man << "[seq]\n";
        man << "id = " << seq.id << "\n";
        man << "seed = " << seq.seed << "\n";
        man << "T = " << seq.frame_count() << "\n";
        man << "fps = " << hexf(seq.config.fps) << "\n";
        write_scenario(man, seq.config);

        int t_count = seq.frame_count();
        int s = seq.side();
        std::string base = "seq_" + std::to_string(seq.id);
        {
            std::ofstream fr(fs::path(dir) / (base + ".frames.f32le"), std::ios::binary);
            write_f32_le(fr, seq.frames.data(), seq.frames.size());
        }
        {
            std::ofstream lb(fs::path(dir) / (base + ".labels.u8"), std::ios::binary);
            lb.write(reinterpret_cast<const char*>(seq.labels.data()),
                     static_cast<std::streamsize>(seq.labels.size()));
        }
        {
            std::ofstream tr(fs::path(dir) / (base + ".trace.txt"), std::ios::binary);
            tr << "T = " << t_count << "\n";
            for (int t = 0; t < t_count; ++t)
                tr << "ts " << t << " " << hexf(seq.timestamps[static_cast<size_t>(t)]) << "\n";
            for (int t = 0; t < t_count; ++t)
                for (size_t i = 0; i < seq.trace[static_cast<size_t>(t)].objects.size(); ++i) {
                    const auto& o = seq.trace[static_cast<size_t>(t)].objects[i];
                    tr << "obj " << t << " " << i << " " << hexf(o.x) << " " << hexf(o.y) << " "
                       << hexf(o.vx) << " " << hexf(o.vy) << " " << (o.branched ? 1 : 0) << "\n";
                }
        }
        (void)s;
    }
}

std::vector<VideoSequence> read_dataset(const std::string& dir) {
    LineScanner sc(fs::path(dir) / "manifest.txt");
    {
        size_t at = sc.pos;
        std::string magic = sc.expect_line("header");
        if (magic != "deltaworld-dataset v1") sc.fail("bad header '" + magic + "'", at);
    }
    int64_t count = sc.expect_int("count");
    if (count < 0) sc.fail("negative count", 0);

    std::vector<VideoSequence> out;
    out.reserve(static_cast<size_t>(count));
    for (int64_t sidx = 0; sidx < count; ++sidx) {
        size_t at = sc.pos;
        std::string tag = sc.expect_line("[seq]");
        if (tag != "[seq]") sc.fail("expected [seq], got '" + tag + "'", at);
        VideoSequence seq;
        seq.id = static_cast<int>(sc.expect_int("id"));
        seq.seed = static_cast<uint64_t>(sc.expect_int("seed"));
        int64_t t_count = sc.expect_int("T");
        (void)sc.expect_double("fps");
        seq.config = read_scenario(sc);

        int s = seq.config.frame_size;
        size_t px = static_cast<size_t>(t_count) * static_cast<size_t>(s) * static_cast<size_t>(s);
        std::string base = "seq_" + std::to_string(seq.id);
        seq.frames = read_f32_le(fs::path(dir) / (base + ".frames.f32le"), px * 3);
        {
            fs::path lp = fs::path(dir) / (base + ".labels.u8");
            std::ifstream in(lp, std::ios::binary);
            if (!in) throw IoError("cannot open " + lp.string());
            seq.labels.resize(px + 1);
            in.read(reinterpret_cast<char*>(seq.labels.data()), static_cast<std::streamsize>(px + 1));
            if (static_cast<size_t>(in.gcount()) != px)
                throw IoError(lp.string() + ": expected " + std::to_string(px) + " bytes, found " +
                              std::to_string(in.gcount()));
            seq.labels.resize(px);
        }
        {
            LineScanner tr(fs::path(dir) / (base + ".trace.txt"));
            int64_t tt = tr.expect_int("T");
            if (tt != t_count) tr.fail("trace length mismatch", 0);
            seq.timestamps.resize(static_cast<size_t>(t_count));
            seq.trace.assign(static_cast<size_t>(t_count), {});
            for (int64_t t = 0; t < t_count; ++t) {
                size_t lat = tr.pos;
                std::string line = tr.expect_line("ts");
                int ti = 0;
                char buf[64];
                if (std::sscanf(line.c_str(), "ts %d %63s", &ti, buf) != 2 || ti != t)
                    tr.fail("bad ts line '" + line + "'", lat);
                seq.timestamps[static_cast<size_t>(t)] = std::strtod(buf, nullptr);
            }
            for (int64_t t = 0; t < t_count; ++t)
                seq.trace[static_cast<size_t>(t)].objects.resize(static_cast<size_t>(seq.config.num_objects));
            for (int64_t rec = 0; rec < t_count * seq.config.num_objects; ++rec) {
                size_t lat = tr.pos;
                std::string line = tr.expect_line("obj");
                int t = 0, i = 0, br = 0;
                char bx[64], by[64], bvx[64], bvy[64];
                if (std::sscanf(line.c_str(), "obj %d %d %63s %63s %63s %63s %d", &t, &i, bx, by, bvx,
                                bvy, &br) != 7 ||
                    t < 0 || t >= t_count || i < 0 || i >= seq.config.num_objects)
                    tr.fail("bad obj line '" + line + "'", lat);
                auto& o = seq.trace[static_cast<size_t>(t)].objects[static_cast<size_t>(i)];
                o.x = std::strtod(bx, nullptr);
                o.y = std::strtod(by, nullptr);
                o.vx = std::strtod(bvx, nullptr);
                o.vy = std::strtod(bvy, nullptr);
                o.branched = br != 0;
            }
        }
        out.push_back(std::move(seq));
    }
    return out;
}

}  // namespace dw
