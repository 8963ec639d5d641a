#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

#include "deltaworld/rope.hpp"
#include "deltaworld/tensor.hpp"

namespace dw {

struct GradError : std::runtime_error {
    explicit GradError(const std::string& msg) : std::runtime_error("grad: " + msg) {}
};

// Multiply-accumulate counter for dense matmul terms (attention scores and
// mixing included, elementwise/softmax/norm excluded). Forward passes only.
struct MacCounter {
    static inline thread_local bool enabled = false;
    static inline thread_local uint64_t macs = 0;

    static void reset() { macs = 0; }
    static void add(uint64_t m) {
        if (enabled) macs += m;
    }
};

struct MacScope {
    MacScope() {
        MacCounter::enabled = true;
        MacCounter::reset();
    }
    ~MacScope() { MacCounter::enabled = false; }
    uint64_t macs() const { return MacCounter::macs; }
};

using Mask = std::shared_ptr<const Tensor<uint8_t>>;  // nonzero = attend allowed

// Reverse-mode tape over tensors. Nodes are created in topological order, so
// backward is a reverse sweep over creation order. With grad_enabled=false the
// tape stores values only (used for the candidate-selection pass and eval).
template <typename T>
class Graph {
public:
    struct Var {
        int32_t id = -1;
        bool valid() const { return id >= 0; }
    };

    bool grad_enabled = true;

    const Tensor<T>& val(Var x) const { return nodes_[check(x)].value; }
    Tensor<T>& grad(Var x) { return nodes_[check(x)].grad; }
    bool needs_grad(Var x) const { return nodes_[check(x)].needs_grad; }

    Var constant(Tensor<T> t) { return push(std::move(t), false, {}); }

    Var param(const Tensor<T>& t) { return push(Tensor<T>(t), grad_enabled, {}); }

    // ---- elementwise ----

    Var add(Var a, Var b) {
        check_same_shape(val(a), val(b), "add");
        Tensor<T> out = val(a);
        const Tensor<T>& bv = val(b);
        for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += bv.v[i];
        return make(std::move(out), {a, b}, [this, a, b](Var y) {
            accumulate(a, grad(y).v);
            accumulate(b, grad(y).v);
        });
    }

    Var sub(Var a, Var b) {
        check_same_shape(val(a), val(b), "sub");
        Tensor<T> out = val(a);
        const Tensor<T>& bv = val(b);
        for (size_t i = 0; i < out.v.size(); ++i) out.v[i] -= bv.v[i];
        return make(std::move(out), {a, b}, [this, a, b](Var y) {
            accumulate(a, grad(y).v);
            auto& gb = grad(b);
            const auto& gy = grad(y);
            if (needs_grad(b))
                for (size_t i = 0; i < gb.v.size(); ++i) gb.v[i] -= gy.v[i];
        });
    }

    Var mul(Var a, Var b) {
        check_same_shape(val(a), val(b), "mul");
        Tensor<T> out = val(a);
        const Tensor<T>& bv = val(b);
        for (size_t i = 0; i < out.v.size(); ++i) out.v[i] *= bv.v[i];
        return make(std::move(out), {a, b}, [this, a, b](Var y) {
            const auto& gy = grad(y);
            if (needs_grad(a)) {
                auto& ga = grad(a);
                const auto& bv2 = val(b);
                for (size_t i = 0; i < ga.v.size(); ++i) ga.v[i] += gy.v[i] * bv2.v[i];
            }
            if (needs_grad(b)) {
                auto& gb = grad(b);
                const auto& av2 = val(a);
                for (size_t i = 0; i < gb.v.size(); ++i) gb.v[i] += gy.v[i] * av2.v[i];
            }
        });
    }

    Var scale(Var a, T c) {
        Tensor<T> out = val(a);
        for (auto& x : out.v) x *= c;
        return make(std::move(out), {a}, [this, a, c](Var y) {
            auto& ga = grad(a);
            const auto& gy = grad(y);
            for (size_t i = 0; i < ga.v.size(); ++i) ga.v[i] += c * gy.v[i];
        });
    }

    // x[N,D] + b[D] broadcast over rows
    Var add_rowvec(Var x, Var b) {
        const Tensor<T>& xv = val(x);
        const Tensor<T>& bv = val(b);
        if (xv.cols() != bv.numel()) throw ShapeError("add_rowvec: width mismatch");
        Tensor<T> out = xv;
        int64_t n = xv.rows(), d = xv.cols();
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < d; ++j) out.v[static_cast<size_t>(i * d + j)] += bv.v[static_cast<size_t>(j)];
        return make(std::move(out), {x, b}, [this, x, b, n, d](Var y) {
            const auto& gy = grad(y);
            accumulate(x, gy.v);
            if (needs_grad(b)) {
                auto& gb = grad(b);
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < d; ++j) gb.v[static_cast<size_t>(j)] += gy.v[static_cast<size_t>(i * d + j)];
            }
        });
    }

    // x[N,D] * s[D] broadcast over rows (Layer Scale)
    Var mul_rowvec(Var x, Var s) {
        const Tensor<T>& xv = val(x);
        const Tensor<T>& sv = val(s);
        if (xv.cols() != sv.numel()) throw ShapeError("mul_rowvec: width mismatch");
        Tensor<T> out = xv;
        int64_t n = xv.rows(), d = xv.cols();
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < d; ++j) out.v[static_cast<size_t>(i * d + j)] *= sv.v[static_cast<size_t>(j)];
        return make(std::move(out), {x, s}, [this, x, s, n, d](Var y) {
            const auto& gy = grad(y);
            if (needs_grad(x)) {
                auto& gx = grad(x);
                const auto& sv2 = val(s);
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < d; ++j)
                        gx.v[static_cast<size_t>(i * d + j)] += gy.v[static_cast<size_t>(i * d + j)] * sv2.v[static_cast<size_t>(j)];
            }
            if (needs_grad(s)) {
                auto& gs = grad(s);
                const auto& xv2 = val(x);
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < d; ++j)
                        gs.v[static_cast<size_t>(j)] += gy.v[static_cast<size_t>(i * d + j)] * xv2.v[static_cast<size_t>(i * d + j)];
            }
        });
    }

    // broadcast a vector [D] to [n, D] rows
    Var broadcast_row(Var q, int64_t n) {
        const Tensor<T>& qv = val(q);
        int64_t d = qv.numel();
        Tensor<T> out({n, d});
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < d; ++j) out.v[static_cast<size_t>(i * d + j)] = qv.v[static_cast<size_t>(j)];
        return make(std::move(out), {q}, [this, q, n, d](Var y) {
            auto& gq = grad(q);
            const auto& gy = grad(y);
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < d; ++j) gq.v[static_cast<size_t>(j)] += gy.v[static_cast<size_t>(i * d + j)];
        });
    }

    // ---- matmul family (MAC-counted) ----

    // x[N,K] . w[M,K]^T -> [N,M]
    Var matmul_nt(Var x, Var w) {
        const Tensor<T>& xv = val(x);
        const Tensor<T>& wv = val(w);
        if (xv.cols() != wv.cols()) throw ShapeError("matmul_nt: inner dim");
        int64_t n = xv.rows(), k = xv.cols(), m = wv.rows();
        MacCounter::add(static_cast<uint64_t>(n) * static_cast<uint64_t>(m) * static_cast<uint64_t>(k));
        Tensor<T> out({n, m});
        for (int64_t i = 0; i < n; ++i) {
            const T* xr = xv.row_ptr(i);
            T* orow = out.row_ptr(i);
            for (int64_t j = 0; j < m; ++j) {
                const T* wr = wv.row_ptr(j);
                T acc = 0;
                for (int64_t l = 0; l < k; ++l) acc += xr[l] * wr[l];
                orow[j] = acc;
            }
        }
        return make(std::move(out), {x, w}, [this, x, w, n, k, m](Var y) {
            const auto& gy = grad(y);
            if (needs_grad(x)) {
                auto& gx = grad(x);
                const auto& wv2 = val(w);
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < m; ++j) {
                        T g = gy.v[static_cast<size_t>(i * m + j)];
                        if (g == T(0)) continue;
                        const T* wr = wv2.row_ptr(j);
                        T* gxr = gx.row_ptr(i);
                        for (int64_t l = 0; l < k; ++l) gxr[l] += g * wr[l];
                    }
            }
            if (needs_grad(w)) {
                auto& gw = grad(w);
                const auto& xv2 = val(x);
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < m; ++j) {
                        T g = gy.v[static_cast<size_t>(i * m + j)];
                        if (g == T(0)) continue;
                        const T* xr = xv2.row_ptr(i);
                        T* gwr = gw.row_ptr(j);
                        for (int64_t l = 0; l < k; ++l) gwr[l] += g * xr[l];
                    }
            }
        });
    }

    // y = x . W^T + b with W[M,K], b[M]
    Var linear(Var x, Var w, Var b) { return add_rowvec(matmul_nt(x, w), b); }

    // ---- normalization / activation ----

    Var layernorm(Var x, Var g, Var b, T eps = T(1e-5)) {
        const Tensor<T>& xv = val(x);
        int64_t n = xv.rows(), d = xv.cols();
        if (val(g).numel() != d || val(b).numel() != d) throw ShapeError("layernorm: affine dims");
        Tensor<T> out({n, d});
        auto xhat = std::make_shared<Tensor<T>>(std::vector<int64_t>{n, d});
        auto rstd = std::make_shared<std::vector<T>>(static_cast<size_t>(n));
        const Tensor<T>& gv = val(g);
        const Tensor<T>& bv = val(b);
        for (int64_t i = 0; i < n; ++i) {
            const T* xr = xv.row_ptr(i);
            T mean = 0;
            for (int64_t j = 0; j < d; ++j) mean += xr[j];
            mean /= static_cast<T>(d);
            T var = 0;
            for (int64_t j = 0; j < d; ++j) {
                T c = xr[j] - mean;
                var += c * c;
            }
            var /= static_cast<T>(d);
            T rs = T(1) / std::sqrt(var + eps);
            (*rstd)[static_cast<size_t>(i)] = rs;
            for (int64_t j = 0; j < d; ++j) {
                T xh = (xr[j] - mean) * rs;
                xhat->v[static_cast<size_t>(i * d + j)] = xh;
                out.v[static_cast<size_t>(i * d + j)] = xh * gv.v[static_cast<size_t>(j)] + bv.v[static_cast<size_t>(j)];
            }
        }
        return make(std::move(out), {x, g, b}, [this, x, g, b, n, d, xhat, rstd](Var y) {
            const auto& gy = grad(y);
            const auto& gv2 = val(g);
            if (needs_grad(g)) {
                auto& gg = grad(g);
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < d; ++j)
                        gg.v[static_cast<size_t>(j)] +=
                            gy.v[static_cast<size_t>(i * d + j)] * xhat->v[static_cast<size_t>(i * d + j)];
            }
            if (needs_grad(b)) {
                auto& gb = grad(b);
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < d; ++j) gb.v[static_cast<size_t>(j)] += gy.v[static_cast<size_t>(i * d + j)];
            }
            if (needs_grad(x)) {
                auto& gx = grad(x);
                for (int64_t i = 0; i < n; ++i) {
                    T sum_dy = 0, sum_dy_xh = 0;
                    for (int64_t j = 0; j < d; ++j) {
                        T dyj = gy.v[static_cast<size_t>(i * d + j)] * gv2.v[static_cast<size_t>(j)];
                        sum_dy += dyj;
                        sum_dy_xh += dyj * xhat->v[static_cast<size_t>(i * d + j)];
                    }
                    T rs = (*rstd)[static_cast<size_t>(i)];
                    for (int64_t j = 0; j < d; ++j) {
                        T dyj = gy.v[static_cast<size_t>(i * d + j)] * gv2.v[static_cast<size_t>(j)];
                        T xh = xhat->v[static_cast<size_t>(i * d + j)];
                        gx.v[static_cast<size_t>(i * d + j)] +=
                            rs * (dyj - (sum_dy + xh * sum_dy_xh) / static_cast<T>(d));
                    }
                }
            }
        });
    }

    Var gelu(Var x) {
        const Tensor<T>& xv = val(x);
        Tensor<T> out = xv;
        constexpr T inv_sqrt2 = T(0.70710678118654752440);
        for (auto& u : out.v) u = u * T(0.5) * (T(1) + std::erf(u * inv_sqrt2));
        return make(std::move(out), {x}, [this, x](Var y) {
            auto& gx = grad(x);
            const auto& gy = grad(y);
            const auto& xv2 = val(x);
            constexpr T is2 = T(0.70710678118654752440);
            constexpr T inv_sqrt2pi = T(0.39894228040143267794);
            for (size_t i = 0; i < gx.v.size(); ++i) {
                T u = xv2.v[i];
                T cdf = T(0.5) * (T(1) + std::erf(u * is2));
                T pdf = inv_sqrt2pi * std::exp(T(-0.5) * u * u);
                gx.v[i] += gy.v[i] * (cdf + u * pdf);
            }
        });
    }

    // ---- rotary positions ----

    // positions: [N, plan.axes] doubles, one row per token
    Var rope(Var x, const RopePlan& plan, std::shared_ptr<const Tensor<double>> positions) {
        const Tensor<T>& xv = val(x);
        if (positions->rows() != xv.rows() || positions->cols() != plan.axes)
            throw ShapeError("rope: positions shape");
        if (xv.cols() != static_cast<int64_t>(plan.heads) * plan.head_dim) throw ShapeError("rope: dim");
        Tensor<T> out = xv;
        rope_rotate<T>(plan, *positions, out, /*inverse=*/false);
        return make(std::move(out), {x}, [this, x, plan, positions](Var y) {
            Tensor<T> gin = grad(y);
            rope_rotate<T>(plan, *positions, gin, /*inverse=*/true);
            accumulate(x, gin.v);
        });
    }

    // ---- attention ----

    // Softmax attention over all (query, key) pairs, multi-head on the last
    // dim. mask may be empty (all allowed); a fully masked query row yields a
    // zero context contribution. Scores for masked pairs are computed then
    // discarded, so the MAC count covers the dense score/mix matmuls.
    Var attention(Var q, Var k, Var v, Mask mask, int heads) {
        const Tensor<T>&qv = val(q), &kv = val(k), &vv = val(v);
        int64_t nq = qv.rows(), nk = kv.rows(), d = qv.cols();
        if (kv.cols() != d || vv.cols() != d || vv.rows() != nk) throw ShapeError("attention: dims");
        if (d % heads != 0) throw ShapeError("attention: heads");
        if (mask && (mask->rows() != nq || mask->cols() != nk)) throw ShapeError("attention: mask");
        int64_t dh = d / heads;
        T sc = T(1) / std::sqrt(static_cast<T>(dh));
        MacCounter::add(2ULL * static_cast<uint64_t>(nq) * static_cast<uint64_t>(nk) * static_cast<uint64_t>(d));

        auto w = std::make_shared<Tensor<T>>(std::vector<int64_t>{heads, nq, nk});
        Tensor<T> out({nq, d});
        std::vector<T> srow(static_cast<size_t>(nk));
        for (int h = 0; h < heads; ++h) {
            int64_t off = h * dh;
            for (int64_t i = 0; i < nq; ++i) {
                const T* qr = qv.row_ptr(i) + off;
                const uint8_t* mr = mask ? mask->row_ptr(i) : nullptr;
                T mx = -std::numeric_limits<T>::infinity();
                for (int64_t j = 0; j < nk; ++j) {
                    const T* kr = kv.row_ptr(j) + off;
                    T acc = 0;
                    for (int64_t l = 0; l < dh; ++l) acc += qr[l] * kr[l];
                    acc *= sc;
                    if (mr && !mr[j]) acc = -std::numeric_limits<T>::infinity();
                    srow[static_cast<size_t>(j)] = acc;
                    if (acc > mx) mx = acc;
                }
                T denom = 0;
                if (mx == -std::numeric_limits<T>::infinity()) {
                    for (int64_t j = 0; j < nk; ++j) w->at(h, i, j) = T(0);
                } else {
                    for (int64_t j = 0; j < nk; ++j) {
                        T e = (srow[static_cast<size_t>(j)] == -std::numeric_limits<T>::infinity())
                                  ? T(0)
                                  : std::exp(srow[static_cast<size_t>(j)] - mx);
                        w->at(h, i, j) = e;
                        denom += e;
                    }
                    T inv = T(1) / denom;
                    for (int64_t j = 0; j < nk; ++j) w->at(h, i, j) *= inv;
                }
                T* orow = out.row_ptr(i) + off;
                for (int64_t j = 0; j < nk; ++j) {
                    T wj = w->at(h, i, j);
                    const T* vr = vv.row_ptr(j) + off;
                    for (int64_t l = 0; l < dh; ++l) orow[l] += wj * vr[l];
                }
            }
        }
        return make(std::move(out), {q, k, v}, [this, q, k, v, w, heads, dh, nq, nk, sc](Var y) {
            const auto& gy = grad(y);
            const auto&qv2 = val(q), &kv2 = val(k), &vv2 = val(v);
            bool gq = needs_grad(q), gk = needs_grad(k), gv_ = needs_grad(v);
            std::vector<T> dwrow(static_cast<size_t>(nk));
            for (int h = 0; h < heads; ++h) {
                int64_t off = h * dh;
                for (int64_t i = 0; i < nq; ++i) {
                    const T* go = gy.row_ptr(i) + off;
                    T wdots = 0;
                    for (int64_t j = 0; j < nk; ++j) {
                        T wj = w->at(h, i, j);
                        const T* vr = vv2.row_ptr(j) + off;
                        T dwj = 0;
                        for (int64_t l = 0; l < dh; ++l) dwj += go[l] * vr[l];
                        if (gv_ && wj != T(0)) {
                            T* gvr = grad(v).row_ptr(j) + off;
                            for (int64_t l = 0; l < dh; ++l) gvr[l] += wj * go[l];
                        }
                        dwrow[static_cast<size_t>(j)] = dwj;
                        wdots += wj * dwj;
                    }
                    for (int64_t j = 0; j < nk; ++j) {
                        T wj = w->at(h, i, j);
                        if (wj == T(0)) continue;
                        T ds = sc * wj * (dwrow[static_cast<size_t>(j)] - wdots);
                        if (gq) {
                            T* gqr = grad(q).row_ptr(i) + off;
                            const T* kr = kv2.row_ptr(j) + off;
                            for (int64_t l = 0; l < dh; ++l) gqr[l] += ds * kr[l];
                        }
                        if (gk) {
                            T* gkr = grad(k).row_ptr(j) + off;
                            const T* qr = qv2.row_ptr(i) + off;
                            for (int64_t l = 0; l < dh; ++l) gkr[l] += ds * qr[l];
                        }
                    }
                }
            }
        });
    }

    // Attention where query row i attends to the shared context rows allowed
    // by mask[i, :] plus its own (k_self[i], v_self[i]) slot. Used by the
    // predictor's query stream: hypotheses never see each other.
    Var cross_self_attention(Var q, Var kc, Var vc, Var ks, Var vs, Mask mask, int heads) {
        const Tensor<T>&qv = val(q), &kcv = val(kc), &vcv = val(vc), &ksv = val(ks), &vsv = val(vs);
        int64_t nq = qv.rows(), nc = kcv.rows(), d = qv.cols();
        if (ksv.rows() != nq || vsv.rows() != nq || vcv.rows() != nc) throw ShapeError("cross_self: rows");
        if (kcv.cols() != d || vcv.cols() != d || ksv.cols() != d || vsv.cols() != d)
            throw ShapeError("cross_self: dims");
        if (mask && (mask->rows() != nq || mask->cols() != nc)) throw ShapeError("cross_self: mask");
        int64_t dh = d / heads;
        T sc = T(1) / std::sqrt(static_cast<T>(dh));
        MacCounter::add(2ULL * static_cast<uint64_t>(nq) * static_cast<uint64_t>(nc + 1) * static_cast<uint64_t>(d));

        auto w = std::make_shared<Tensor<T>>(std::vector<int64_t>{heads, nq, nc + 1});
        Tensor<T> out({nq, d});
        std::vector<T> srow(static_cast<size_t>(nc + 1));
        for (int h = 0; h < heads; ++h) {
            int64_t off = h * dh;
            for (int64_t i = 0; i < nq; ++i) {
                const T* qr = qv.row_ptr(i) + off;
                const uint8_t* mr = mask ? mask->row_ptr(i) : nullptr;
                T mx = -std::numeric_limits<T>::infinity();
                for (int64_t j = 0; j < nc; ++j) {
                    const T* kr = kcv.row_ptr(j) + off;
                    T acc = 0;
                    for (int64_t l = 0; l < dh; ++l) acc += qr[l] * kr[l];
                    acc *= sc;
                    if (mr && !mr[j]) acc = -std::numeric_limits<T>::infinity();
                    srow[static_cast<size_t>(j)] = acc;
                    if (acc > mx) mx = acc;
                }
                {
                    const T* kr = ksv.row_ptr(i) + off;
                    T acc = 0;
                    for (int64_t l = 0; l < dh; ++l) acc += qr[l] * kr[l];
                    acc *= sc;
                    srow[static_cast<size_t>(nc)] = acc;
                    if (acc > mx) mx = acc;
                }
                T denom = 0;
                for (int64_t j = 0; j <= nc; ++j) {
                    T e = (srow[static_cast<size_t>(j)] == -std::numeric_limits<T>::infinity())
                              ? T(0)
                              : std::exp(srow[static_cast<size_t>(j)] - mx);
                    w->at(h, i, j) = e;
                    denom += e;
                }
                T inv = T(1) / denom;
                T* orow = out.row_ptr(i) + off;
                for (int64_t j = 0; j < nc; ++j) {
                    T wj = (w->at(h, i, j) *= inv);
                    const T* vr = vcv.row_ptr(j) + off;
                    for (int64_t l = 0; l < dh; ++l) orow[l] += wj * vr[l];
                }
                T wself = (w->at(h, i, nc) *= inv);
                const T* vr = vsv.row_ptr(i) + off;
                for (int64_t l = 0; l < dh; ++l) orow[l] += wself * vr[l];
            }
        }
        return make(std::move(out), {q, kc, vc, ks, vs},
                    [this, q, kc, vc, ks, vs, w, heads, dh, nq, nc, sc](Var y) {
                        const auto& gy = grad(y);
                        const auto&qv2 = val(q), &kcv2 = val(kc), &vcv2 = val(vc);
                        const auto&ksv2 = val(ks), &vsv2 = val(vs);
                        std::vector<T> dwrow(static_cast<size_t>(nc + 1));
                        for (int h = 0; h < heads; ++h) {
                            int64_t off = h * dh;
                            for (int64_t i = 0; i < nq; ++i) {
                                const T* go = gy.row_ptr(i) + off;
                                T wdots = 0;
                                for (int64_t j = 0; j <= nc; ++j) {
                                    T wj = w->at(h, i, j);
                                    const T* vr = (j < nc) ? vcv2.row_ptr(j) + off : vsv2.row_ptr(i) + off;
                                    T dwj = 0;
                                    for (int64_t l = 0; l < dh; ++l) dwj += go[l] * vr[l];
                                    if (wj != T(0)) {
                                        Var vt = (j < nc) ? vc : vs;
                                        if (needs_grad(vt)) {
                                            T* gvr = (j < nc) ? grad(vc).row_ptr(j) + off : grad(vs).row_ptr(i) + off;
                                            for (int64_t l = 0; l < dh; ++l) gvr[l] += wj * go[l];
                                        }
                                    }
                                    dwrow[static_cast<size_t>(j)] = dwj;
                                    wdots += wj * dwj;
                                }
                                for (int64_t j = 0; j <= nc; ++j) {
                                    T wj = w->at(h, i, j);
                                    if (wj == T(0)) continue;
                                    T ds = sc * wj * (dwrow[static_cast<size_t>(j)] - wdots);
                                    const T* kr = (j < nc) ? kcv2.row_ptr(j) + off : ksv2.row_ptr(i) + off;
                                    if (needs_grad(q)) {
                                        T* gqr = grad(q).row_ptr(i) + off;
                                        for (int64_t l = 0; l < dh; ++l) gqr[l] += ds * kr[l];
                                    }
                                    Var kt = (j < nc) ? kc : ks;
                                    if (needs_grad(kt)) {
                                        T* gkr = (j < nc) ? grad(kc).row_ptr(j) + off : grad(ks).row_ptr(i) + off;
                                        const T* qr = qv2.row_ptr(i) + off;
                                        for (int64_t l = 0; l < dh; ++l) gkr[l] += ds * qr[l];
                                    }
                                }
                            }
                        }
                    });
    }

    // ---- shape ops ----

    Var concat_rows(Var a, Var b) {
        const Tensor<T>&av = val(a), &bv = val(b);
        if (av.cols() != bv.cols()) throw ShapeError("concat_rows: width");
        int64_t d = av.cols(), na = av.rows(), nb = bv.rows();
        Tensor<T> out({na + nb, d});
        std::copy(av.v.begin(), av.v.end(), out.v.begin());
        std::copy(bv.v.begin(), bv.v.end(), out.v.begin() + av.v.size());
        return make(std::move(out), {a, b}, [this, a, b, na, nb, d](Var y) {
            const auto& gy = grad(y);
            if (needs_grad(a)) {
                auto& ga = grad(a);
                for (size_t i = 0; i < ga.v.size(); ++i) ga.v[i] += gy.v[i];
            }
            if (needs_grad(b)) {
                auto& gb = grad(b);
                size_t base = static_cast<size_t>(na * d);
                for (size_t i = 0; i < gb.v.size(); ++i) gb.v[i] += gy.v[base + i];
            }
        });
    }

    Var slice_rows(Var a, int64_t r0, int64_t r1) {
        const Tensor<T>& av = val(a);
        if (r0 < 0 || r1 > av.rows() || r0 > r1) throw ShapeError("slice_rows: range");
        int64_t d = av.cols();
        Tensor<T> out({r1 - r0, d});
        std::copy(av.v.begin() + r0 * d, av.v.begin() + r1 * d, out.v.begin());
        return make(std::move(out), {a}, [this, a, r0, d](Var y) {
            auto& ga = grad(a);
            const auto& gy = grad(y);
            size_t base = static_cast<size_t>(r0 * d);
            for (size_t i = 0; i < gy.v.size(); ++i) ga.v[base + i] += gy.v[i];
        });
    }

    // ---- reductions / losses ----

    Var mean_all(Var a) {
        const Tensor<T>& av = val(a);
        T s = 0;
        for (T x : av.v) s += x;
        T n = static_cast<T>(av.numel());
        Tensor<T> out({1});
        out.v[0] = s / n;
        return make(std::move(out), {a}, [this, a, n](Var y) {
            auto& ga = grad(a);
            T g = grad(y).v[0] / n;
            for (auto& x : ga.v) x += g;
        });
    }

    Var sum_all(Var a) {
        const Tensor<T>& av = val(a);
        T s = 0;
        for (T x : av.v) s += x;
        Tensor<T> out({1});
        out.v[0] = s;
        return make(std::move(out), {a}, [this, a](Var y) {
            auto& ga = grad(a);
            T g = grad(y).v[0];
            for (auto& x : ga.v) x += g;
        });
    }

    Var add_n(const std::vector<Var>& xs) {
        if (xs.empty()) throw ShapeError("add_n: empty");
        Var acc = xs[0];
        for (size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
        return acc;
    }

    // mean-reduced smooth L1 against a constant target
    Var smooth_l1(Var pred, const Tensor<T>& target, T beta) {
        const Tensor<T>& pv = val(pred);
        check_same_shape(pv, target, "smooth_l1");
        auto tgt = std::make_shared<Tensor<T>>(target);
        T n = static_cast<T>(pv.numel());
        T s = 0;
        for (size_t i = 0; i < pv.v.size(); ++i) {
            T dlt = pv.v[i] - tgt->v[i];
            T a = std::abs(dlt);
            s += (a < beta) ? T(0.5) * dlt * dlt / beta : a - T(0.5) * beta;
        }
        Tensor<T> out({1});
        out.v[0] = s / n;
        return make(std::move(out), {pred}, [this, pred, tgt, beta, n](Var y) {
            auto& gp = grad(pred);
            const auto& pv2 = val(pred);
            T g = grad(y).v[0] / n;
            for (size_t i = 0; i < gp.v.size(); ++i) {
                T dlt = pv2.v[i] - tgt->v[i];
                T d = (std::abs(dlt) < beta) ? dlt / beta : (dlt > T(0) ? T(1) : (dlt < T(0) ? T(-1) : T(0)));
                gp.v[i] += g * d;
            }
        });
    }

    // mean squared error against a constant target
    Var mse(Var pred, const Tensor<T>& target) {
        const Tensor<T>& pv = val(pred);
        check_same_shape(pv, target, "mse");
        auto tgt = std::make_shared<Tensor<T>>(target);
        T n = static_cast<T>(pv.numel());
        T s = 0;
        for (size_t i = 0; i < pv.v.size(); ++i) {
            T dlt = pv.v[i] - tgt->v[i];
            s += dlt * dlt;
        }
        Tensor<T> out({1});
        out.v[0] = s / n;
        return make(std::move(out), {pred}, [this, pred, tgt, n](Var y) {
            auto& gp = grad(pred);
            const auto& pv2 = val(pred);
            T g = grad(y).v[0] / n;
            for (size_t i = 0; i < gp.v.size(); ++i) gp.v[i] += g * T(2) * (pv2.v[i] - tgt->v[i]);
        });
    }

    // value passes through, gradient does not
    Var detach(Var a) { return push(Tensor<T>(val(a)), false, {}); }

    // ---- backward ----

    void backward(Var loss) {
        if (!grad_enabled) throw GradError("backward on a no-grad tape");
        Node& ln = nodes_[check(loss)];
        if (ln.value.numel() != 1) throw GradError("loss must be scalar");
        if (!ln.needs_grad) return;
        ln.grad.v[0] = T(1);
        for (int32_t i = static_cast<int32_t>(nodes_.size()) - 1; i >= 0; --i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (n.needs_grad && n.back) n.back(Var{i});
        }
    }

    size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        std::function<void(Var)> back;
        bool needs_grad = false;
    };

    std::vector<Node> nodes_;

    int32_t check(Var x) const {
        if (!x.valid() || static_cast<size_t>(x.id) >= nodes_.size()) throw GradError("bad var");
        return x.id;
    }

    Var push(Tensor<T> value, bool needs, std::function<void(Var)> back) {
        Node n;
        n.value = std::move(value);
        n.needs_grad = needs;
        if (needs) {
            n.grad = Tensor<T>(n.value.shape);
            n.back = std::move(back);
        }
        nodes_.push_back(std::move(n));
        return Var{static_cast<int32_t>(nodes_.size()) - 1};
    }

    Var make(Tensor<T> value, std::initializer_list<Var> inputs, std::function<void(Var)> back) {
        bool needs = false;
        if (grad_enabled)
            for (Var in : inputs) needs = needs || nodes_[check(in)].needs_grad;
        return push(std::move(value), needs, needs ? std::move(back) : std::function<void(Var)>{});
    }

    void accumulate(Var x, const std::vector<T>& g) {
        if (!needs_grad(x)) return;
        auto& gx = grad(x);
        for (size_t i = 0; i < gx.v.size(); ++i) gx.v[i] += g[i];
    }
};

}  // namespace dw
