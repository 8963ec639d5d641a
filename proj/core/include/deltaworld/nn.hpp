#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "deltaworld/graph.hpp"
#include "deltaworld/rng.hpp"
#include "deltaworld/rope.hpp"
#include "deltaworld/tensor.hpp"

namespace dw {

struct BlockConfig {
    int dim = 64;
    int heads = 4;
    double mlp_ratio = 4.0;

    int head_dim() const {
        if (dim % heads != 0) throw ShapeError("dim not divisible by heads");
        return dim / heads;
    }
    int mlp_hidden() const { return static_cast<int>(dim * mlp_ratio); }
};

constexpr double kInitSigma = 0.02;
constexpr double kInitClip = 2.0;  // in sigmas
constexpr double kLayerScaleInit = 1e-5;

// Named tensor store with a fixed entry order (checkpoint and gradient order).
template <typename T>
struct ParamSet {
    struct Entry {
        std::string name;
        Tensor<T> value;
        bool trainable = true;
    };

    std::vector<Entry> entries;
    std::unordered_map<std::string, int> index;

    Tensor<T>& add(const std::string& name, std::vector<int64_t> shape, bool trainable = true) {
        if (index.count(name)) throw ShapeError("duplicate param: " + name);
        index[name] = static_cast<int>(entries.size());
        entries.push_back(Entry{name, Tensor<T>(std::move(shape)), trainable});
        return entries.back().value;
    }

    bool has(const std::string& name) const { return index.count(name) != 0; }

    Tensor<T>& get(const std::string& name) {
        auto it = index.find(name);
        if (it == index.end()) throw ShapeError("missing param: " + name);
        return entries[static_cast<size_t>(it->second)].value;
    }
    const Tensor<T>& get(const std::string& name) const {
        auto it = index.find(name);
        if (it == index.end()) throw ShapeError("missing param: " + name);
        return entries[static_cast<size_t>(it->second)].value;
    }

    void set_trainable(const std::string& name, bool t) {
        entries[static_cast<size_t>(index.at(name))].trainable = t;
    }

    int64_t num_params() const {
        int64_t n = 0;
        for (const auto& e : entries) n += e.value.numel();
        return n;
    }

    template <typename U>
    ParamSet<U> cast() const {
        ParamSet<U> out;
        for (const auto& e : entries) {
            out.index[e.name] = static_cast<int>(out.entries.size());
            out.entries.push_back({e.name, e.value.template cast<U>(), e.trainable});
        }
        return out;
    }
};

template <typename T>
Tensor<T> trunc_normal_tensor(std::vector<int64_t> shape, double sigma, Rng& rng) {
    Tensor<T> t(std::move(shape));
    for (auto& x : t.v) x = static_cast<T>(rng.trunc_normal(sigma, kInitClip));
    return t;
}

// weight ~ truncated normal(0.02), bias zero
template <typename T>
void init_linear(ParamSet<T>& ps, const std::string& name, int64_t out, int64_t in, Rng& rng) {
    ps.add(name + ".w", {out, in});
    ps.get(name + ".w") = trunc_normal_tensor<T>({out, in}, kInitSigma, rng);
    ps.add(name + ".b", {out});
}

template <typename T>
void init_block_params(ParamSet<T>& ps, const std::string& prefix, const BlockConfig& cfg, Rng& rng) {
    int64_t d = cfg.dim;
    int64_t m = cfg.mlp_hidden();
    ps.add(prefix + ".ln1.g", {d}).fill(T(1));
    ps.add(prefix + ".ln1.b", {d});
    init_linear(ps, prefix + ".attn.q", d, d, rng);
    init_linear(ps, prefix + ".attn.k", d, d, rng);
    init_linear(ps, prefix + ".attn.v", d, d, rng);
    init_linear(ps, prefix + ".attn.o", d, d, rng);
    ps.add(prefix + ".ls1", {d}).fill(T(kLayerScaleInit));
    ps.add(prefix + ".ln2.g", {d}).fill(T(1));
    ps.add(prefix + ".ln2.b", {d});
    init_linear(ps, prefix + ".mlp.1", m, d, rng);
    init_linear(ps, prefix + ".mlp.2", d, m, rng);
    ps.add(prefix + ".ls2", {d}).fill(T(kLayerScaleInit));
}

// Binds ParamSet entries into a graph once each, so shared weights get one
// node and gradients accumulate correctly. force_frozen binds everything as
// constants (frozen tokenizer under a training predictor, eval passes).
template <typename T>
class ParamBinder {
public:
    using Var = typename Graph<T>::Var;

    ParamBinder(Graph<T>& g, const ParamSet<T>& ps, bool force_frozen = false)
        : g_(g), ps_(ps), frozen_(force_frozen) {}

    Var operator()(const std::string& name) {
        int idx = ps_.index.at(name);
        auto it = bound_.find(idx);
        if (it != bound_.end()) return it->second;
        const auto& e = ps_.entries[static_cast<size_t>(idx)];
        Var v = (!frozen_ && e.trainable) ? g_.param(e.value) : g_.constant(e.value);
        bound_[idx] = v;
        return v;
    }

    // grads indexed like ps.entries; accumulates += for batch averaging
    void collect(std::vector<Tensor<T>>& grads) const {
        for (const auto& [idx, var] : bound_) {
            if (!g_.needs_grad(var)) continue;
            auto& dst = grads[static_cast<size_t>(idx)];
            const auto& src = g_.grad(var);
            if (dst.numel() == 0) dst = Tensor<T>(src.shape);
            for (size_t i = 0; i < src.v.size(); ++i) dst.v[i] += src.v[i];
        }
    }

private:
    Graph<T>& g_;
    const ParamSet<T>& ps_;
    bool frozen_;
    std::unordered_map<int, Var> bound_;
};

template <typename T>
struct BlockVars {
    using Var = typename Graph<T>::Var;
    Var ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ls1;
    Var ln2_g, ln2_b, w1, b1, w2, b2, ls2;
};

template <typename T>
BlockVars<T> bind_block(ParamBinder<T>& bind, const std::string& prefix) {
    BlockVars<T> b;
    b.ln1_g = bind(prefix + ".ln1.g");
    b.ln1_b = bind(prefix + ".ln1.b");
    b.wq = bind(prefix + ".attn.q.w");
    b.bq = bind(prefix + ".attn.q.b");
    b.wk = bind(prefix + ".attn.k.w");
    b.bk = bind(prefix + ".attn.k.b");
    b.wv = bind(prefix + ".attn.v.w");
    b.bv = bind(prefix + ".attn.v.b");
    b.wo = bind(prefix + ".attn.o.w");
    b.bo = bind(prefix + ".attn.o.b");
    b.ls1 = bind(prefix + ".ls1");
    b.ln2_g = bind(prefix + ".ln2.g");
    b.ln2_b = bind(prefix + ".ln2.b");
    b.w1 = bind(prefix + ".mlp.1.w");
    b.b1 = bind(prefix + ".mlp.1.b");
    b.w2 = bind(prefix + ".mlp.2.w");
    b.b2 = bind(prefix + ".mlp.2.b");
    b.ls2 = bind(prefix + ".ls2");
    return b;
}

template <typename T>
struct AttnKV {
    typename Graph<T>::Var k, v;  // rope-applied keys and values of the block input
};

using Positions = std::shared_ptr<const Tensor<double>>;

// Pre-norm residual block, both residual branches scaled by Layer Scale.
// When kv_out is given, the block's key/value projections (what a parallel
// query stream attends to at this depth) are exposed.
template <typename T>
typename Graph<T>::Var block_self(Graph<T>& g, typename Graph<T>::Var x, const BlockVars<T>& p,
                                  int heads, Mask mask, const RopePlan* plan, Positions pos,
                                  AttnKV<T>* kv_out = nullptr) {
    auto h = g.layernorm(x, p.ln1_g, p.ln1_b);
    auto q = g.linear(h, p.wq, p.bq);
    auto k = g.linear(h, p.wk, p.bk);
    auto v = g.linear(h, p.wv, p.bv);
    if (plan) {
        q = g.rope(q, *plan, pos);
        k = g.rope(k, *plan, pos);
    }
    if (kv_out) {
        kv_out->k = k;
        kv_out->v = v;
    }
    auto a = g.attention(q, k, v, mask, heads);
    x = g.add(x, g.mul_rowvec(g.linear(a, p.wo, p.bo), p.ls1));
    auto h2 = g.layernorm(x, p.ln2_g, p.ln2_b);
    auto m = g.linear(g.gelu(g.linear(h2, p.w1, p.b1)), p.w2, p.b2);
    return g.add(x, g.mul_rowvec(m, p.ls2));
}

// Query-stream block: rows attend to the context block's keys/values plus
// their own slot, never to other query rows.
template <typename T>
typename Graph<T>::Var block_query(Graph<T>& g, typename Graph<T>::Var xq, const BlockVars<T>& p,
                                   int heads, const AttnKV<T>& ctx, Mask mask_qc,
                                   const RopePlan* plan, Positions pos_q) {
    auto h = g.layernorm(xq, p.ln1_g, p.ln1_b);
    auto q = g.linear(h, p.wq, p.bq);
    auto ks = g.linear(h, p.wk, p.bk);
    auto vs = g.linear(h, p.wv, p.bv);
    if (plan) {
        q = g.rope(q, *plan, pos_q);
        ks = g.rope(ks, *plan, pos_q);
    }
    auto a = g.cross_self_attention(q, ctx.k, ctx.v, ks, vs, mask_qc, heads);
    xq = g.add(xq, g.mul_rowvec(g.linear(a, p.wo, p.bo), p.ls1));
    auto h2 = g.layernorm(xq, p.ln2_g, p.ln2_b);
    auto m = g.linear(g.gelu(g.linear(h2, p.w1, p.b1)), p.w2, p.b2);
    return g.add(xq, g.mul_rowvec(m, p.ls2));
}

// ---- plain-value losses (eval paths, no tape) ----

template <typename T>
double smooth_l1_value(const Tensor<T>& a, const Tensor<T>& b, double beta) {
    check_same_shape(a, b, "smooth_l1_value");
    double s = 0;
    for (size_t i = 0; i < a.v.size(); ++i) {
        double d = static_cast<double>(a.v[i]) - static_cast<double>(b.v[i]);
        double ad = std::abs(d);
        s += (ad < beta) ? 0.5 * d * d / beta : ad - 0.5 * beta;
    }
    return s / static_cast<double>(a.numel());
}

template <typename T>
double mse_value(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "mse_value");
    double s = 0;
    for (size_t i = 0; i < a.v.size(); ++i) {
        double d = static_cast<double>(a.v[i]) - static_cast<double>(b.v[i]);
        s += d * d;
    }
    return s / static_cast<double>(a.numel());
}

// ---- optimizer ----

struct AdamWConfig {
    double lr_peak = 1e-3;
    int64_t warmup_steps = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    double clip_norm = 0.0;  // <= 0 disables clipping
};

// Decoupled-weight-decay adaptive-moment update with linear warmup to the
// peak rate and a constant rate thereafter. Global gradient-norm clipping is
// applied before the update when enabled.
template <typename T>
class AdamW {
public:
    AdamW(ParamSet<T>& ps, AdamWConfig cfg) : ps_(ps), cfg_(cfg) {
        m_.reserve(ps.entries.size());
        v_.reserve(ps.entries.size());
        for (const auto& e : ps.entries) {
            m_.push_back(Tensor<T>(e.value.shape));
            v_.push_back(Tensor<T>(e.value.shape));
        }
    }

    double lr_at(int64_t s) const {
        if (cfg_.warmup_steps > 0 && s < cfg_.warmup_steps)
            return cfg_.lr_peak * static_cast<double>(s) / static_cast<double>(cfg_.warmup_steps);
        return cfg_.lr_peak;
    }

    // grads are indexed like ps.entries; missing (empty) grads are treated as zero
    void step(std::vector<Tensor<T>>& grads) {
        ++step_;
        if (cfg_.clip_norm > 0) {
            double norm2 = 0;
            for (size_t i = 0; i < ps_.entries.size(); ++i) {
                if (!ps_.entries[i].trainable || grads[i].numel() == 0) continue;
                for (T gv : grads[i].v) norm2 += static_cast<double>(gv) * static_cast<double>(gv);
            }
            double norm = std::sqrt(norm2);
            if (norm > cfg_.clip_norm) {
                T s = static_cast<T>(cfg_.clip_norm / norm);
                for (size_t i = 0; i < ps_.entries.size(); ++i) {
                    if (!ps_.entries[i].trainable || grads[i].numel() == 0) continue;
                    for (auto& gv : grads[i].v) gv *= s;
                }
            }
        }
        double lr = lr_at(step_);
        T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
        double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        for (size_t i = 0; i < ps_.entries.size(); ++i) {
            auto& e = ps_.entries[i];
            if (!e.trainable) continue;
            bool has_grad = grads[i].numel() != 0;
            for (size_t j = 0; j < e.value.v.size(); ++j) {
                T gv = has_grad ? grads[i].v[j] : T(0);
                auto& m = m_[i].v[j];
                auto& v = v_[i].v[j];
                m = b1 * m + (T(1) - b1) * gv;
                v = b2 * v + (T(1) - b2) * gv * gv;
                double mh = static_cast<double>(m) / bc1;
                double vh = static_cast<double>(v) / bc2;
                double upd = lr * (mh / (std::sqrt(vh) + cfg_.eps)) +
                             lr * cfg_.weight_decay * static_cast<double>(e.value.v[j]);
                e.value.v[j] = static_cast<T>(static_cast<double>(e.value.v[j]) - upd);
            }
        }
    }

    int64_t steps_done() const { return step_; }

private:
    ParamSet<T>& ps_;
    AdamWConfig cfg_;
    int64_t step_ = 0;
    std::vector<Tensor<T>> m_, v_;
};

}  // namespace dw
