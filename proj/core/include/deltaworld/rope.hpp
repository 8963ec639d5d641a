#pragma once

#include <array>
#include <cmath>
#include <stdexcept>

#include "deltaworld/tensor.hpp"

namespace dw {

// Axial rotary position encoding. Each head keeps its last dims unrotated;
// the rotated budget (3/4 of head_dim) is split evenly across axes, floored
// to an even pair count per axis. At head_dim 16 this gives 4+4+4 (+4
// unrotated) for 3 axes, 6+6 for 2, and 12 for 1.
struct RopePlan {
    int heads = 0;
    int head_dim = 0;
    int axes = 0;
    std::array<int, 3> rot_dims{0, 0, 0};
    double base = 100.0;
    std::array<double, 3> pos_scale{1.0, 1.0, 1.0};

    int rotated_total() const {
        int s = 0;
        for (int a = 0; a < axes; ++a) s += rot_dims[static_cast<size_t>(a)];
        return s;
    }
};

inline RopePlan make_rope_plan(int axes, int heads, int head_dim, double base = 100.0,
                               std::array<double, 3> pos_scale = {1.0, 1.0, 1.0}) {
    if (axes < 1 || axes > 3) throw ShapeError("rope: axes must be 1..3");
    RopePlan p;
    p.heads = heads;
    p.head_dim = head_dim;
    p.axes = axes;
    p.base = base;
    p.pos_scale = pos_scale;
    int budget = (3 * head_dim) / 4;
    int per_axis = budget / axes;
    per_axis -= per_axis % 2;
    for (int a = 0; a < axes; ++a) p.rot_dims[static_cast<size_t>(a)] = per_axis;
    if (p.rotated_total() > head_dim) throw ShapeError("rope: split exceeds head_dim");
    return p;
}

// In-place rotation of x[N, heads*head_dim]; inverse applies the transpose
// (used for the gradient). positions is [N, axes].
template <typename T>
void rope_rotate(const RopePlan& p, const Tensor<double>& positions, Tensor<T>& x, bool inverse) {
    int64_t n = x.rows();
    int64_t d = x.cols();
    if (d != static_cast<int64_t>(p.heads) * p.head_dim) throw ShapeError("rope: width");
    for (int64_t i = 0; i < n; ++i) {
        T* row = x.row_ptr(i);
        for (int h = 0; h < p.heads; ++h) {
            T* hd = row + static_cast<int64_t>(h) * p.head_dim;
            int off = 0;
            for (int a = 0; a < p.axes; ++a) {
                int rd = p.rot_dims[static_cast<size_t>(a)];
                int pairs = rd / 2;
                double pos = positions.at(i, a) * p.pos_scale[static_cast<size_t>(a)];
                for (int pr = 0; pr < pairs; ++pr) {
                    double theta = pos * std::pow(p.base, -2.0 * pr / rd);
                    if (inverse) theta = -theta;
                    T c = static_cast<T>(std::cos(theta));
                    T s = static_cast<T>(std::sin(theta));
                    T x0 = hd[off + 2 * pr];
                    T x1 = hd[off + 2 * pr + 1];
                    hd[off + 2 * pr] = x0 * c - x1 * s;
                    hd[off + 2 * pr + 1] = x0 * s + x1 * c;
                }
                off += rd;
            }
        }
    }
}

}  // namespace dw
