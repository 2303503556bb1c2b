#pragma once

// Reverse-mode autodiff over TensorT. Ops append one backward closure per
// forward call to a TapeT; TapeT::backward replays them in reverse
// construction order, which is a valid topological order by construction.

#include <algorithm>
#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "camcal/kernels.hpp"
#include "camcal/tensor.hpp"

namespace camcal::ad {

template <typename T>
class TapeT {
public:
    explicit TapeT(bool recording = true) : recording_(recording) {}

    bool recording() const { return recording_; }
    size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    void record(std::function<void()> backward_fn) {
        nodes_.push_back(std::move(backward_fn));
    }

    // Seeds d(loss)/d(loss) = 1 and visits every node exactly once in
    // reverse order, accumulating into requires_grad leaves.
    void backward(const VarT<T>& loss) {
        if (loss->numel() != 1)
            throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                        shape_str(loss->shape));
        if (!loss->requires_grad)
            throw std::invalid_argument("backward: loss does not participate in the tape");
        loss->grad[0] = T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

private:
    std::vector<std::function<void()>> nodes_;
    bool recording_;
};

namespace detail {

template <typename T>
inline bool track(const TapeT<T>& tape, std::initializer_list<const VarT<T>*> inputs) {
    if (!tape.recording()) return false;
    for (const auto* v : inputs)
        if ((*v)->requires_grad) return true;
    return false;
}

template <typename T>
inline VarT<T> out_like(Shape shape, bool tracked) {
    return make_var<T>(std::move(shape), tracked);
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

}  // namespace detail

// ---- elementwise -----------------------------------------------------

template <typename T>
VarT<T> add(TapeT<T>& tape, const VarT<T>& a, const VarT<T>& b) {
    detail::require(a->shape == b->shape, "add: shape mismatch " + shape_str(a->shape) +
                                              " vs " + shape_str(b->shape));
    const bool tracked = detail::track(tape, {&a, &b});
    auto out = detail::out_like<T>(a->shape, tracked);
    for (int64_t i = 0; i < a->numel(); ++i) out->data[i] = a->data[i] + b->data[i];
    if (tracked)
        tape.record([a, b, out] {
            if (a->requires_grad)
                for (int64_t i = 0; i < a->numel(); ++i) a->grad[i] += out->grad[i];
            if (b->requires_grad)
                for (int64_t i = 0; i < b->numel(); ++i) b->grad[i] += out->grad[i];
        });
    return out;
}

template <typename T>
VarT<T> mul(TapeT<T>& tape, const VarT<T>& a, const VarT<T>& b) {
    detail::require(a->shape == b->shape, "mul: shape mismatch " + shape_str(a->shape) +
                                              " vs " + shape_str(b->shape));
    const bool tracked = detail::track(tape, {&a, &b});
    auto out = detail::out_like<T>(a->shape, tracked);
    for (int64_t i = 0; i < a->numel(); ++i) out->data[i] = a->data[i] * b->data[i];
    if (tracked)
        tape.record([a, b, out] {
            if (a->requires_grad)
                for (int64_t i = 0; i < a->numel(); ++i) a->grad[i] += out->grad[i] * b->data[i];
            if (b->requires_grad)
                for (int64_t i = 0; i < b->numel(); ++i) b->grad[i] += out->grad[i] * a->data[i];
        });
    return out;
}

template <typename T>
VarT<T> add_scalar(TapeT<T>& tape, const VarT<T>& a, T s) {
    const bool tracked = detail::track(tape, {&a});
    auto out = detail::out_like<T>(a->shape, tracked);
    for (int64_t i = 0; i < a->numel(); ++i) out->data[i] = a->data[i] + s;
    if (tracked)
        tape.record([a, out] {
            for (int64_t i = 0; i < a->numel(); ++i) a->grad[i] += out->grad[i];
        });
    return out;
}

template <typename T>
VarT<T> scale(TapeT<T>& tape, const VarT<T>& a, T s) {
    const bool tracked = detail::track(tape, {&a});
    auto out = detail::out_like<T>(a->shape, tracked);
    for (int64_t i = 0; i < a->numel(); ++i) out->data[i] = a->data[i] * s;
    if (tracked)
        tape.record([a, out, s] {
            for (int64_t i = 0; i < a->numel(); ++i) a->grad[i] += out->grad[i] * s;
        });
    return out;
}

template <typename T>
VarT<T> relu(TapeT<T>& tape, const VarT<T>& a) {
    const bool tracked = detail::track(tape, {&a});
    auto out = detail::out_like<T>(a->shape, tracked);
    for (int64_t i = 0; i < a->numel(); ++i) out->data[i] = a->data[i] > T(0) ? a->data[i] : T(0);
    if (tracked)
        tape.record([a, out] {
            for (int64_t i = 0; i < a->numel(); ++i)
                if (a->data[i] > T(0)) a->grad[i] += out->grad[i];
        });
    return out;
}

template <typename T>
VarT<T> sigmoid(TapeT<T>& tape, const VarT<T>& a) {
    const bool tracked = detail::track(tape, {&a});
    auto out = detail::out_like<T>(a->shape, tracked);
    for (int64_t i = 0; i < a->numel(); ++i) {
        const T x = a->data[i];
        // Split by sign to keep exp() in the underflow-safe range.
        out->data[i] = x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                                 : std::exp(x) / (T(1) + std::exp(x));
    }
    if (tracked)
        tape.record([a, out] {
            for (int64_t i = 0; i < a->numel(); ++i) {
                const T y = out->data[i];
                a->grad[i] += out->grad[i] * y * (T(1) - y);
            }
        });
    return out;
}

// ---- reductions and reshapes ------------------------------------------

template <typename T>
VarT<T> sum(TapeT<T>& tape, const VarT<T>& a) {
    const bool tracked = detail::track(tape, {&a});
    auto out = detail::out_like<T>(Shape{1}, tracked);
    T acc = 0;
    for (int64_t i = 0; i < a->numel(); ++i) acc += a->data[i];
    out->data[0] = acc;
    if (tracked)
        tape.record([a, out] {
            for (int64_t i = 0; i < a->numel(); ++i) a->grad[i] += out->grad[0];
        });
    return out;
}

template <typename T>
VarT<T> dot(TapeT<T>& tape, const VarT<T>& a, const VarT<T>& b) {
    detail::require(a->numel() == b->numel(), "dot: length mismatch");
    const bool tracked = detail::track(tape, {&a, &b});
    auto out = detail::out_like<T>(Shape{1}, tracked);
    T acc = 0;
    for (int64_t i = 0; i < a->numel(); ++i) acc += a->data[i] * b->data[i];
    out->data[0] = acc;
    if (tracked)
        tape.record([a, b, out] {
            const T g = out->grad[0];
            if (a->requires_grad)
                for (int64_t i = 0; i < a->numel(); ++i) a->grad[i] += g * b->data[i];
            if (b->requires_grad)
                for (int64_t i = 0; i < b->numel(); ++i) b->grad[i] += g * a->data[i];
        });
    return out;
}

template <typename T>
VarT<T> reshape(TapeT<T>& tape, const VarT<T>& a, Shape new_shape) {
    detail::require(numel_of(new_shape) == a->numel(),
                    "reshape: element count mismatch for " + shape_str(new_shape));
    const bool tracked = detail::track(tape, {&a});
    auto out = detail::out_like<T>(std::move(new_shape), tracked);
    out->data = a->data;
    if (tracked)
        tape.record([a, out] {
            for (int64_t i = 0; i < a->numel(); ++i) a->grad[i] += out->grad[i];
        });
    return out;
}

template <typename T>
VarT<T> transpose2d(TapeT<T>& tape, const VarT<T>& a) {
    detail::require(a->ndim() == 2, "transpose2d: expected rank-2 tensor");
    const int m = a->dim(0), n = a->dim(1);
    const bool tracked = detail::track(tape, {&a});
    auto out = detail::out_like<T>(Shape{n, m}, tracked);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out->data[static_cast<int64_t>(j) * m + i] = a->data[static_cast<int64_t>(i) * n + j];
    if (tracked)
        tape.record([a, out, m, n] {
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    a->grad[static_cast<int64_t>(i) * n + j] += out->grad[static_cast<int64_t>(j) * m + i];
        });
    return out;
}

template <typename T>
VarT<T> select_row(TapeT<T>& tape, const VarT<T>& a, int row) {
    detail::require(a->ndim() == 2, "select_row: expected rank-2 tensor");
    detail::require(row >= 0 && row < a->dim(0), "select_row: row out of range");
    const int n = a->dim(1);
    const bool tracked = detail::track(tape, {&a});
    auto out = detail::out_like<T>(Shape{1, n}, tracked);
    std::copy_n(a->data.begin() + static_cast<int64_t>(row) * n, n, out->data.begin());
    if (tracked)
        tape.record([a, out, row, n] {
            for (int j = 0; j < n; ++j) a->grad[static_cast<int64_t>(row) * n + j] += out->grad[j];
        });
    return out;
}

// ---- linear algebra ----------------------------------------------------

template <typename T>
VarT<T> matmul(TapeT<T>& tape, const VarT<T>& a, const VarT<T>& b,
               bool trans_a = false, bool trans_b = false) {
    detail::require(a->ndim() == 2 && b->ndim() == 2, "matmul: expected rank-2 tensors");
    const int m = trans_a ? a->dim(1) : a->dim(0);
    const int ka = trans_a ? a->dim(0) : a->dim(1);
    const int kb = trans_b ? b->dim(1) : b->dim(0);
    const int n = trans_b ? b->dim(0) : b->dim(1);
    detail::require(ka == kb, "matmul: inner dimension mismatch " + shape_str(a->shape) +
                                  " x " + shape_str(b->shape));
    const bool tracked = detail::track(tape, {&a, &b});
    auto out = detail::out_like<T>(Shape{m, n}, tracked);
    kernels::matmul(a->data.data(), b->data.data(), out->data.data(), m, n, ka,
                    trans_a, trans_b, false);
    if (tracked)
        tape.record([a, b, out, m, n, ka, trans_a, trans_b] {
            // dA = g @ B^T and dB = A^T @ g, adjusted for the transpose flags.
            if (a->requires_grad) {
                if (!trans_a)
                    kernels::matmul(out->grad.data(), b->data.data(), a->grad.data(),
                                    m, ka, n, false, !trans_b, true);
                else
                    kernels::matmul(b->data.data(), out->grad.data(), a->grad.data(),
                                    ka, m, n, trans_b, true, true);
            }
            if (b->requires_grad) {
                if (!trans_b)
                    kernels::matmul(a->data.data(), out->grad.data(), b->grad.data(),
                                    ka, n, m, !trans_a, false, true);
                else
                    kernels::matmul(out->grad.data(), a->data.data(), b->grad.data(),
                                    n, ka, m, true, trans_a, true);
            }
        });
    return out;
}

// ---- convolution stack ---------------------------------------------------

template <typename T>
VarT<T> conv2d(TapeT<T>& tape, const VarT<T>& x, const VarT<T>& w, int stride, int padding) {
    detail::require(x->ndim() == 4 && w->ndim() == 4,
                    "conv2d: expected [N,C,H,W] input and [Co,Ci,kh,kw] kernel");
    detail::require(stride >= 1, "conv2d: stride must be positive");
    detail::require(padding >= 0, "conv2d: padding must be non-negative");
    detail::require(w->dim(1) == x->dim(1),
                    "conv2d: kernel in-channels " + std::to_string(w->dim(1)) +
                        " do not match input channels " + std::to_string(x->dim(1)));
    kernels::Conv2dDims d;
    d.batch = x->dim(0);
    d.in_channels = x->dim(1);
    d.in_h = x->dim(2);
    d.in_w = x->dim(3);
    d.out_channels = w->dim(0);
    d.kernel_h = w->dim(2);
    d.kernel_w = w->dim(3);
    d.stride = stride;
    d.padding = padding;
    detail::require(d.kernel_h <= d.in_h + 2 * padding && d.kernel_w <= d.in_w + 2 * padding,
                    "conv2d: kernel larger than padded input");
    const bool tracked = detail::track(tape, {&x, &w});
    auto out = detail::out_like<T>(Shape{d.batch, d.out_channels, d.out_h(), d.out_w()}, tracked);
    kernels::conv2d_forward(x->data.data(), w->data.data(), out->data.data(), d);
    if (tracked)
        tape.record([x, w, out, d] {
            if (x->requires_grad)
                kernels::conv2d_backward_input(out->grad.data(), w->data.data(),
                                               x->grad.data(), d);
            if (w->requires_grad)
                kernels::conv2d_backward_kernel(x->data.data(), out->grad.data(),
                                                w->grad.data(), d);
        });
    return out;
}

template <typename T>
VarT<T> channel_bias_add(TapeT<T>& tape, const VarT<T>& x, const VarT<T>& b) {
    detail::require(x->ndim() == 4 && b->ndim() == 1 && b->dim(0) == x->dim(1),
                    "channel_bias_add: bias must be [C] matching input channels");
    const int batch = x->dim(0), c = x->dim(1);
    const int64_t plane = static_cast<int64_t>(x->dim(2)) * x->dim(3);
    const bool tracked = detail::track(tape, {&x, &b});
    auto out = detail::out_like<T>(x->shape, tracked);
    for (int n = 0; n < batch; ++n)
        for (int i = 0; i < c; ++i) {
            const int64_t base = (static_cast<int64_t>(n) * c + i) * plane;
            for (int64_t p = 0; p < plane; ++p) out->data[base + p] = x->data[base + p] + b->data[i];
        }
    if (tracked)
        tape.record([x, b, out, batch, c, plane] {
            if (x->requires_grad)
                for (int64_t i = 0; i < x->numel(); ++i) x->grad[i] += out->grad[i];
            if (b->requires_grad)
                for (int i = 0; i < c; ++i) {
                    T acc = 0;
                    for (int n = 0; n < batch; ++n) {
                        const int64_t base = (static_cast<int64_t>(n) * c + i) * plane;
                        for (int64_t p = 0; p < plane; ++p) acc += out->grad[base + p];
                    }
                    b->grad[i] += acc;
                }
        });
    return out;
}

template <typename T>
VarT<T> col_bias_add(TapeT<T>& tape, const VarT<T>& s, const VarT<T>& b) {
    detail::require(s->ndim() == 2 && b->ndim() == 1 && b->dim(0) == s->dim(1),
                    "col_bias_add: bias must be [N] matching score columns");
    const int rows = s->dim(0), cols = s->dim(1);
    const bool tracked = detail::track(tape, {&s, &b});
    auto out = detail::out_like<T>(s->shape, tracked);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j)
            out->data[static_cast<int64_t>(i) * cols + j] =
                s->data[static_cast<int64_t>(i) * cols + j] + b->data[j];
    if (tracked)
        tape.record([s, b, out, rows, cols] {
            if (s->requires_grad)
                for (int64_t i = 0; i < s->numel(); ++i) s->grad[i] += out->grad[i];
            if (b->requires_grad)
                for (int j = 0; j < cols; ++j) {
                    T acc = 0;
                    for (int i = 0; i < rows; ++i) acc += out->grad[static_cast<int64_t>(i) * cols + j];
                    b->grad[j] += acc;
                }
        });
    return out;
}

template <typename T>
VarT<T> global_avg_pool(TapeT<T>& tape, const VarT<T>& x) {
    detail::require(x->ndim() == 4, "global_avg_pool: expected [N,C,H,W]");
    detail::require(x->dim(2) >= 1 && x->dim(3) >= 1, "global_avg_pool: empty spatial extent");
    const int batch = x->dim(0), c = x->dim(1);
    const int64_t plane = static_cast<int64_t>(x->dim(2)) * x->dim(3);
    const bool tracked = detail::track(tape, {&x});
    auto out = detail::out_like<T>(Shape{batch, c}, tracked);
    for (int n = 0; n < batch; ++n)
        for (int i = 0; i < c; ++i) {
            const int64_t base = (static_cast<int64_t>(n) * c + i) * plane;
            T acc = 0;
            for (int64_t p = 0; p < plane; ++p) acc += x->data[base + p];
            out->data[static_cast<int64_t>(n) * c + i] = acc / static_cast<T>(plane);
        }
    if (tracked)
        tape.record([x, out, batch, c, plane] {
            const T inv = T(1) / static_cast<T>(plane);
            for (int n = 0; n < batch; ++n)
                for (int i = 0; i < c; ++i) {
                    const T g = out->grad[static_cast<int64_t>(n) * c + i] * inv;
                    const int64_t base = (static_cast<int64_t>(n) * c + i) * plane;
                    for (int64_t p = 0; p < plane; ++p) x->grad[base + p] += g;
                }
        });
    return out;
}

template <typename T>
VarT<T> maxpool2x2(TapeT<T>& tape, const VarT<T>& x) {
    detail::require(x->ndim() == 4, "maxpool2x2: expected [N,C,H,W]");
    detail::require(x->dim(2) % 2 == 0 && x->dim(3) % 2 == 0,
                    "maxpool2x2: spatial dims must be even, got " + shape_str(x->shape));
    const int batch = x->dim(0), c = x->dim(1), h = x->dim(2), w = x->dim(3);
    const int oh = h / 2, ow = w / 2;
    const bool tracked = detail::track(tape, {&x});
    auto out = detail::out_like<T>(Shape{batch, c, oh, ow}, tracked);
    auto argmax = std::make_shared<std::vector<int64_t>>(out->numel());
    int64_t oi = 0;
    for (int n = 0; n < batch; ++n)
        for (int i = 0; i < c; ++i) {
            const int64_t base = (static_cast<int64_t>(n) * c + i) * h * w;
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox, ++oi) {
                    int64_t best = base + (2 * oy) * w + 2 * ox;
                    T best_v = x->data[best];
                    const int64_t cand[3] = {base + (2 * oy) * w + 2 * ox + 1,
                                             base + (2 * oy + 1) * w + 2 * ox,
                                             base + (2 * oy + 1) * w + 2 * ox + 1};
                    for (int64_t idx : cand)
                        if (x->data[idx] > best_v) {
                            best_v = x->data[idx];
                            best = idx;
                        }
                    out->data[oi] = best_v;
                    (*argmax)[oi] = best;
                }
        }
    if (tracked)
        tape.record([x, out, argmax] {
            for (int64_t i = 0; i < out->numel(); ++i) x->grad[(*argmax)[i]] += out->grad[i];
        });
    return out;
}

// ---- normalization and scoring -------------------------------------------

// Normalizes each trailing-dimension slice to unit norm. Slices whose norm
// is at or below epsilon are scaled by 1/epsilon instead of erroring, so
// transiently zero embeddings stay differentiable.
template <typename T>
VarT<T> l2_normalize(TapeT<T>& tape, const VarT<T>& x, T epsilon = T(1e-12)) {
    detail::require(x->ndim() >= 1, "l2_normalize: expected at least rank-1 tensor");
    const int d = x->shape.back();
    const int64_t rows = x->numel() / d;
    const bool tracked = detail::track(tape, {&x});
    auto out = detail::out_like<T>(x->shape, tracked);
    auto norms = std::make_shared<std::vector<T>>(rows);
    for (int64_t r = 0; r < rows; ++r) {
        const int64_t base = r * d;
        T sq = 0;
        for (int j = 0; j < d; ++j) sq += x->data[base + j] * x->data[base + j];
        const T norm = std::sqrt(sq);
        (*norms)[r] = norm;
        const T denom = norm > epsilon ? norm : epsilon;
        for (int j = 0; j < d; ++j) out->data[base + j] = x->data[base + j] / denom;
    }
    if (tracked)
        tape.record([x, out, norms, d, rows, epsilon] {
            for (int64_t r = 0; r < rows; ++r) {
                const int64_t base = r * d;
                const T norm = (*norms)[r];
                if (norm > epsilon) {
                    T gy = 0;
                    for (int j = 0; j < d; ++j) gy += out->grad[base + j] * out->data[base + j];
                    for (int j = 0; j < d; ++j)
                        x->grad[base + j] += (out->grad[base + j] - gy * out->data[base + j]) / norm;
                } else {
                    for (int j = 0; j < d; ++j) x->grad[base + j] += out->grad[base + j] / epsilon;
                }
            }
        });
    return out;
}

// out[b,c] = s[b,c] * g[c]
template <typename T>
VarT<T> mul_col_vector(TapeT<T>& tape, const VarT<T>& s, const VarT<T>& g) {
    detail::require(s->ndim() == 2 && g->ndim() == 1 && g->dim(0) == s->dim(1),
                    "mul_col_vector: scale must be [N] matching score columns");
    const int rows = s->dim(0), cols = s->dim(1);
    const bool tracked = detail::track(tape, {&s, &g});
    auto out = detail::out_like<T>(s->shape, tracked);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j)
            out->data[static_cast<int64_t>(i) * cols + j] =
                s->data[static_cast<int64_t>(i) * cols + j] * g->data[j];
    if (tracked)
        tape.record([s, g, out, rows, cols] {
            if (s->requires_grad)
                for (int i = 0; i < rows; ++i)
                    for (int j = 0; j < cols; ++j)
                        s->grad[static_cast<int64_t>(i) * cols + j] +=
                            out->grad[static_cast<int64_t>(i) * cols + j] * g->data[j];
            if (g->requires_grad)
                for (int j = 0; j < cols; ++j) {
                    T acc = 0;
                    for (int i = 0; i < rows; ++i)
                        acc += out->grad[static_cast<int64_t>(i) * cols + j] *
                               s->data[static_cast<int64_t>(i) * cols + j];
                    g->grad[j] += acc;
                }
        });
    return out;
}

// out = s * g where g is a learnable scalar (shape [1]).
template <typename T>
VarT<T> mul_scalar_var(TapeT<T>& tape, const VarT<T>& s, const VarT<T>& g) {
    detail::require(g->numel() == 1, "mul_scalar_var: scale must be a scalar tensor");
    const bool tracked = detail::track(tape, {&s, &g});
    auto out = detail::out_like<T>(s->shape, tracked);
    const T gv = g->data[0];
    for (int64_t i = 0; i < s->numel(); ++i) out->data[i] = s->data[i] * gv;
    if (tracked)
        tape.record([s, g, out, gv] {
            if (s->requires_grad)
                for (int64_t i = 0; i < s->numel(); ++i) s->grad[i] += out->grad[i] * gv;
            if (g->requires_grad) {
                T acc = 0;
                for (int64_t i = 0; i < s->numel(); ++i) acc += out->grad[i] * s->data[i];
                g->grad[0] += acc;
            }
        });
    return out;
}

// out[n,c,h,w] = x[n,c,h,w] * m[n,0,h,w]; the single-channel map broadcasts
// over channels (the residual CAM gate).
template <typename T>
VarT<T> scale_by_map(TapeT<T>& tape, const VarT<T>& x, const VarT<T>& m) {
    detail::require(x->ndim() == 4 && m->ndim() == 4 && m->dim(1) == 1 &&
                        m->dim(0) == x->dim(0) && m->dim(2) == x->dim(2) &&
                        m->dim(3) == x->dim(3),
                    "scale_by_map: map must be [N,1,H,W] matching input");
    const int batch = x->dim(0), c = x->dim(1);
    const int64_t plane = static_cast<int64_t>(x->dim(2)) * x->dim(3);
    const bool tracked = detail::track(tape, {&x, &m});
    auto out = detail::out_like<T>(x->shape, tracked);
    for (int n = 0; n < batch; ++n) {
        const T* mp = m->data.data() + static_cast<int64_t>(n) * plane;
        for (int i = 0; i < c; ++i) {
            const int64_t base = (static_cast<int64_t>(n) * c + i) * plane;
            for (int64_t p = 0; p < plane; ++p) out->data[base + p] = x->data[base + p] * mp[p];
        }
    }
    if (tracked)
        tape.record([x, m, out, batch, c, plane] {
            for (int n = 0; n < batch; ++n) {
                const int64_t mbase = static_cast<int64_t>(n) * plane;
                for (int i = 0; i < c; ++i) {
                    const int64_t base = (static_cast<int64_t>(n) * c + i) * plane;
                    if (x->requires_grad)
                        for (int64_t p = 0; p < plane; ++p)
                            x->grad[base + p] += out->grad[base + p] * m->data[mbase + p];
                    if (m->requires_grad)
                        for (int64_t p = 0; p < plane; ++p)
                            m->grad[mbase + p] += out->grad[base + p] * x->data[base + p];
                }
            }
        });
    return out;
}

// Splices per-class score columns into a base score matrix. Each entry of
// `columns` is (class index, [B] or [B,1] tensor) replacing that column of
// `base`; gradient flows to the replacement, not to base, at those columns.
template <typename T>
VarT<T> replace_columns(TapeT<T>& tape, const VarT<T>& base,
                        const std::vector<std::pair<int, VarT<T>>>& columns) {
    detail::require(base->ndim() == 2, "replace_columns: base must be [B,N]");
    const int rows = base->dim(0), cols = base->dim(1);
    bool tracked = detail::track(tape, {&base});
    for (const auto& [c, col] : columns) {
        detail::require(c >= 0 && c < cols, "replace_columns: class index out of range");
        detail::require(col->numel() == rows, "replace_columns: column length mismatch");
        if (tape.recording() && col->requires_grad) tracked = true;
    }
    auto out = detail::out_like<T>(base->shape, tracked);
    out->data = base->data;
    for (const auto& [c, col] : columns)
        for (int i = 0; i < rows; ++i) out->data[static_cast<int64_t>(i) * cols + c] = col->data[i];
    if (tracked) {
        auto cols_copy = columns;
        tape.record([base, out, cols_copy, rows, cols] {
            std::vector<bool> replaced(static_cast<size_t>(cols), false);
            for (const auto& [c, col] : cols_copy) {
                replaced[static_cast<size_t>(c)] = true;
                if (col->requires_grad)
                    for (int i = 0; i < rows; ++i)
                        col->grad[i] += out->grad[static_cast<int64_t>(i) * cols + c];
            }
            if (base->requires_grad)
                for (int i = 0; i < rows; ++i)
                    for (int j = 0; j < cols; ++j)
                        if (!replaced[static_cast<size_t>(j)])
                            base->grad[static_cast<int64_t>(i) * cols + j] +=
                                out->grad[static_cast<int64_t>(i) * cols + j];
        });
    }
    return out;
}

// Mean softmax cross-entropy over the batch. Log-probabilities are computed
// via the max-shifted log-sum-exp, so extreme logits stay finite.
template <typename T>
VarT<T> softmax_cross_entropy(TapeT<T>& tape, const VarT<T>& logits,
                              const std::vector<int>& labels) {
    detail::require(logits->ndim() == 2, "softmax_cross_entropy: logits must be [B,N]");
    const int rows = logits->dim(0), cols = logits->dim(1);
    detail::require(static_cast<int>(labels.size()) == rows,
                    "softmax_cross_entropy: label count does not match batch");
    for (int y : labels)
        detail::require(y >= 0 && y < cols, "softmax_cross_entropy: label out of range");
    const bool tracked = detail::track(tape, {&logits});
    auto out = detail::out_like<T>(Shape{1}, tracked);
    auto probs = std::make_shared<std::vector<T>>(logits->data.size());
    T loss = 0;
    for (int i = 0; i < rows; ++i) {
        const int64_t base = static_cast<int64_t>(i) * cols;
        T mx = logits->data[base];
        for (int j = 1; j < cols; ++j) mx = std::max(mx, logits->data[base + j]);
        T denom = 0;
        for (int j = 0; j < cols; ++j) {
            const T e = std::exp(logits->data[base + j] - mx);
            (*probs)[base + j] = e;
            denom += e;
        }
        for (int j = 0; j < cols; ++j) (*probs)[base + j] /= denom;
        loss -= logits->data[base + labels[static_cast<size_t>(i)]] - mx - std::log(denom);
    }
    out->data[0] = loss / static_cast<T>(rows);
    if (tracked) {
        auto labels_copy = labels;
        tape.record([logits, out, probs, labels_copy, rows, cols] {
            const T g = out->grad[0] / static_cast<T>(rows);
            for (int i = 0; i < rows; ++i) {
                const int64_t base = static_cast<int64_t>(i) * cols;
                for (int j = 0; j < cols; ++j) {
                    T delta = (*probs)[base + j];
                    if (j == labels_copy[static_cast<size_t>(i)]) delta -= T(1);
                    logits->grad[base + j] += g * delta;
                }
            }
        });
    }
    return out;
}

}  // namespace camcal::ad
