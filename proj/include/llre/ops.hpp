#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "llre/tensor.hpp"

// Forward operators with reverse-mode gradients. Every op computes eagerly;
// when a tape is installed and any input requires grad, it records a closure
// that routes d(out) back to its inputs. Feature maps are channel-last.

namespace llre {

namespace detail {

template <typename T>
inline GradTape<T>* active_tape(bool any_requires) {
    GradTape<T>* t = GradTape<T>::current();
    return (t && any_requires) ? t : nullptr;
}

template <typename T>
inline void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <typename T>
inline void require_rank(const Tensor<T>& a, std::size_t r, const char* op) {
    if (a.rank() != r)
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " + shape_str(a.shape()));
}

} // namespace detail

// ---------------------------------------------------------------- elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "add");
    Tensor<T> out(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    for (std::size_t i = 0, n = out.numel(); i < n; ++i) po[i] = pa[i] + pb[i];
    if (auto* tape = detail::active_tape<T>(a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        tape->record(out, [a, b, out]() {
            if (!out.grad_allocated()) return;
            const auto& go = out.grad_view();
            if (a.requires_grad()) {
                auto& ga = a.grad();
                for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
            }
            if (b.requires_grad()) {
                auto& gb = b.grad();
                for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "sub");
    Tensor<T> out(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    for (std::size_t i = 0, n = out.numel(); i < n; ++i) po[i] = pa[i] - pb[i];
    if (auto* tape = detail::active_tape<T>(a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        tape->record(out, [a, b, out]() {
            if (!out.grad_allocated()) return;
            const auto& go = out.grad_view();
            if (a.requires_grad()) {
                auto& ga = a.grad();
                for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
            }
            if (b.requires_grad()) {
                auto& gb = b.grad();
                for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "mul");
    Tensor<T> out(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    for (std::size_t i = 0, n = out.numel(); i < n; ++i) po[i] = pa[i] * pb[i];
    if (auto* tape = detail::active_tape<T>(a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        tape->record(out, [a, b, out]() {
            if (!out.grad_allocated()) return;
            const auto& go = out.grad_view();
            if (a.requires_grad()) {
                auto& ga = a.grad();
                const T* pb2 = b.data();
                for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * pb2[i];
            }
            if (b.requires_grad()) {
                auto& gb = b.grad();
                const T* pa2 = a.data();
                for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * pa2[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "div");
    Tensor<T> out(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    for (std::size_t i = 0, n = out.numel(); i < n; ++i) po[i] = pa[i] / pb[i];
    if (auto* tape = detail::active_tape<T>(a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        tape->record(out, [a, b, out]() {
            if (!out.grad_allocated()) return;
            const auto& go = out.grad_view();
            const T* pa2 = a.data();
            const T* pb2 = b.data();
            if (a.requires_grad()) {
                auto& ga = a.grad();
                for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] / pb2[i];
            }
            if (b.requires_grad()) {
                auto& gb = b.grad();
                for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i] * pa2[i] / (pb2[i] * pb2[i]);
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
    Tensor<T> out(a.shape());
    const T* pa = a.data();
    T* po = out.data();
    for (std::size_t i = 0, n = out.numel(); i < n; ++i) po[i] = pa[i] + c;
    if (auto* tape = detail::active_tape<T>(a.requires_grad())) {
        out.set_requires_grad(true);
        tape->record(out, [a, out]() {
            if (!out.grad_allocated()) return;
            const auto& go = out.grad_view();
            auto& ga = a.grad();
            for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T c) {
    Tensor<T> out(a.shape());
    const T* pa = a.data();
    T* po = out.data();
    for (std::size_t i = 0, n = out.numel(); i < n; ++i) po[i] = pa[i] * c;
    if (auto* tape = detail::active_tape<T>(a.requires_grad())) {
        out.set_requires_grad(true);
        tape->record(out, [a, out, c]() {
            if (!out.grad_allocated()) return;
            const auto& go = out.grad_view();
            auto& ga = a.grad();
            for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * c;
        });
    }
    return out;
}

template <typename T>
Tensor<T> absval(const Tensor<T>& a) {
    Tensor<T> out(a.shape());
    const T* pa = a.data();
    T* po = out.data();
    for (std::size_t i = 0, n = out.numel(); i < n; ++i) po[i] = std::abs(pa[i]);
    if (auto* tape = detail::active_tape<T>(a.requires_grad())) {
        out.set_requires_grad(true);
        tape->record(out, [a, out]() {
            if (!out.grad_allocated()) return;
            const auto& go = out.grad_view();
            auto& ga = a.grad();
            const T* pa2 = a.data();
            for (std::size_t i = 0; i < go.size(); ++i) {
                // subgradient 0 at the kink
                if (pa2[i] > T(0)) ga[i] += go[i];
                else if (pa2[i] < T(0)) ga[i] -= go[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    Tensor<T> out(a.shape());
    const T* pa = a.data();
    T* po = out.data();
    for (std::size_t i = 0, n = out.numel(); i < n; ++i) po[i] = pa[i] > T(0) ? pa[i] : T(0);
    if (auto* tape = detail::active_tape<T>(a.requires_grad())) {
        out.set_requires_grad(true);
        tape->record(out, [a, out]() {
            if (!out.grad_allocated()) return;
            const auto& go = out.grad_view();
            auto& ga = a.grad();
            const T* pa2 = a.data();
            for (std::size_t i = 0; i < go.size(); ++i)
                if (pa2[i] > T(0)) ga[i] += go[i];
        });
    }
    return out;
}

// exact erf form
template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
    constexpr T kInvSqrt2 = T(0.70710678118654752440);
    constexpr T kInvSqrt2Pi = T(0.39894228040143267794);
    Tensor<T> out(a.shape());
    const T* pa = a.data();
    T* po = out.data();
    for (std::size_t i = 0, n = out.numel(); i < n; ++i)
        po[i] = pa[i] * T(0.5) * (T(1) + std::erf(pa[i] * kInvSqrt2));
    if (auto* tape = detail::active_tape<T>(a.requires_grad())) {
        out.set_requires_grad(true);
        tape->record(out, [a, out]() {
            if (!out.grad_allocated()) return;
            const auto& go = out.grad_view();
            auto& ga = a.grad();
            const T* pa2 = a.data();
            for (std::size_t i = 0; i < go.size(); ++i) {
                const T x = pa2[i];
                const T cdf = T(0.5) * (T(1) + std::erf(x * kInvSqrt2));
                const T pdf = kInvSqrt2Pi * std::exp(T(-0.5) * x * x);
                ga[i] += go[i] * (cdf + x * pdf);
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    Tensor<T> out(a.shape());
    const T* pa = a.data();
    T* po = out.data();
    for (std::size_t i = 0, n = out.numel(); i < n; ++i) po[i] = T(1) / (T(1) + std::exp(-pa[i]));
    if (auto* tape = detail::active_tape<T>(a.requires_grad())) {
        out.set_requires_grad(true);
        tape->record(out, [a, out]() {
            if (!out.grad_allocated()) return;
            const auto& go = out.grad_view();
            auto& ga = a.grad();
            const T* po2 = out.data();
            for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * po2[i] * (T(1) - po2[i]);
        });
    }
    return out;
}

// x^p with constant exponent; gradient defined as 0 at x == 0 for p < 1
template <typename T>
Tensor<T> pow_const(const Tensor<T>& a, T p) {
    Tensor<T> out(a.shape());
    const T* pa = a.data();
    T* po = out.data();
    for (std::size_t i = 0, n = out.numel(); i < n; ++i) po[i] = std::pow(pa[i], p);
    if (auto* tape = detail::active_tape<T>(a.requires_grad())) {
        out.set_requires_grad(true);
        tape->record(out, [a, out, p]() {
            if (!out.grad_allocated()) return;
            const auto& go = out.grad_view();
            auto& ga = a.grad();
            const T* pa2 = a.data();
            for (std::size_t i = 0; i < go.size(); ++i) {
                if (pa2[i] == T(0)) continue;
                ga[i] += go[i] * p * std::pow(pa2[i], p - T(1));
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------- reductions

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
    T s = T(0);
    const T* pa = a.data();
    for (std::size_t i = 0, n = a.numel(); i < n; ++i) s += pa[i];
    Tensor<T> out = Tensor<T>::scalar(s);
    if (auto* tape = detail::active_tape<T>(a.requires_grad())) {
        out.set_requires_grad(true);
        tape->record(out, [a, out]() {
            if (!out.grad_allocated()) return;
            const T g = out.grad_view()[0];
            auto& ga = a.grad();
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
        });
    }
    return out;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
    const std::size_t n = a.numel();
    T s = T(0);
    const T* pa = a.data();
    for (std::size_t i = 0; i < n; ++i) s += pa[i];
    Tensor<T> out = Tensor<T>::scalar(s / static_cast<T>(n));
    if (auto* tape = detail::active_tape<T>(a.requires_grad())) {
        out.set_requires_grad(true);
        tape->record(out, [a, out, n]() {
            if (!out.grad_allocated()) return;
            const T g = out.grad_view()[0] / static_cast<T>(n);
            auto& ga = a.grad();
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
        });
    }
    return out;
}

// mean over the two leading spatial axes: [H,W,C] -> [C]
template <typename T>
Tensor<T> spatial_mean(const Tensor<T>& x) {
    detail::require_rank(x, 3, "spatial_mean");
    const std::size_t hw = x.extent(0) * x.extent(1);
    const std::size_t c = x.extent(2);
    Tensor<T> out({c});
    const T* px = x.data();
    T* po = out.data();
    for (std::size_t n = 0; n < hw; ++n)
        for (std::size_t j = 0; j < c; ++j) po[j] += px[n * c + j];
    const T inv = T(1) / static_cast<T>(hw);
    for (std::size_t j = 0; j < c; ++j) po[j] *= inv;
    if (auto* tape = detail::active_tape<T>(x.requires_grad())) {
        out.set_requires_grad(true);
        tape->record(out, [x, out, hw, c, inv]() {
            if (!out.grad_allocated()) return;
            const auto& go = out.grad_view();
            auto& gx = x.grad();
            for (std::size_t n = 0; n < hw; ++n)
                for (std::size_t j = 0; j < c; ++j) gx[n * c + j] += go[j] * inv;
        });
    }
    return out;
}

// ------------------------------------------------------------ linear algebra

namespace detail {

template <typename T>
Tensor<T> linear_impl(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* b) {
    if (x.rank() < 1) throw ShapeError("linear: input must have rank >= 1");
    require_rank(w, 2, "linear weight");
    const std::size_t ci = x.shape().back();
    const std::size_t co = w.extent(1);
    if (w.extent(0) != ci)
        throw ShapeError("linear: input channels " + std::to_string(ci) + " vs weight " + shape_str(w.shape()));
    if (b && (b->rank() != 1 || b->extent(0) != co))
        throw ShapeError("linear: bias " + shape_str(b->shape()) + " for " + std::to_string(co) + " outputs");
    const std::size_t n = x.numel() / ci;

    Shape oshape = x.shape();
    oshape.back() = co;
    Tensor<T> out(oshape);
    const T* px = x.data();
    const T* pw = w.data();
    T* po = out.data();
    if (b) {
        const T* pb = b->data();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < co; ++j) po[i * co + j] = pb[j];
    }
    for (std::size_t i = 0; i < n; ++i) {
        const T* xr = px + i * ci;
        T* orow = po + i * co;
        for (std::size_t k = 0; k < ci; ++k) {
            const T xv = xr[k];
            const T* wr = pw + k * co;
            for (std::size_t j = 0; j < co; ++j) orow[j] += xv * wr[j];
        }
    }

    const bool any = x.requires_grad() || w.requires_grad() || (b && b->requires_grad());
    if (auto* tape = active_tape<T>(any)) {
        out.set_requires_grad(true);
        Tensor<T> bias = b ? *b : Tensor<T>();
        const bool has_bias = b != nullptr;
        tape->record(out, [x, w, bias, has_bias, out, n, ci, co]() {
            if (!out.grad_allocated()) return;
            const auto& go = out.grad_view();
            const T* px2 = x.data();
            const T* pw2 = w.data();
            if (x.requires_grad()) {
                auto& gx = x.grad();
                for (std::size_t i = 0; i < n; ++i) {
                    const T* gr = go.data() + i * co;
                    T* gxr = gx.data() + i * ci;
                    for (std::size_t k = 0; k < ci; ++k) {
                        const T* wr = pw2 + k * co;
                        T acc = T(0);
                        for (std::size_t j = 0; j < co; ++j) acc += gr[j] * wr[j];
                        gxr[k] += acc;
                    }
                }
            }
            if (w.requires_grad()) {
                auto& gw = w.grad();
                for (std::size_t i = 0; i < n; ++i) {
                    const T* xr = px2 + i * ci;
                    const T* gr = go.data() + i * co;
                    for (std::size_t k = 0; k < ci; ++k) {
                        const T xv = xr[k];
                        T* gwr = gw.data() + k * co;
                        for (std::size_t j = 0; j < co; ++j) gwr[j] += xv * gr[j];
                    }
                }
            }
            if (has_bias && bias.requires_grad()) {
                auto& gb = bias.grad();
                for (std::size_t i = 0; i < n; ++i) {
                    const T* gr = go.data() + i * co;
                    for (std::size_t j = 0; j < co; ++j) gb[j] += gr[j];
                }
            }
        });
    }
    return out;
}

} // namespace detail

// affine map on the trailing axis
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w) {
    return detail::linear_impl(x, w, static_cast<const Tensor<T>*>(nullptr));
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    return detail::linear_impl(x, w, &b);
}

// pointwise convolution over a [H,W,Cin] map
template <typename T>
Tensor<T> conv1x1(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    detail::require_rank(x, 3, "conv1x1");
    return detail::linear_impl(x, w, &b);
}

// 3x3 depth-wise convolution, zero padding of one pixel, no cross-channel mixing
template <typename T>
Tensor<T> dwconv3x3(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& b) {
    detail::require_rank(x, 3, "dwconv3x3");
    const std::size_t h = x.extent(0), w = x.extent(1), c = x.extent(2);
    if (k.rank() != 3 || k.extent(0) != 3 || k.extent(1) != 3 || k.extent(2) != c)
        throw ShapeError("dwconv3x3: kernel " + shape_str(k.shape()) + " for " + std::to_string(c) + " channels");
    if (b.rank() != 1 || b.extent(0) != c)
        throw ShapeError("dwconv3x3: bias " + shape_str(b.shape()) + " for " + std::to_string(c) + " channels");

    Tensor<T> out({h, w, c});
    const T* px = x.data();
    const T* pk = k.data();
    const T* pb = b.data();
    T* po = out.data();
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t xw = 0; xw < w; ++xw) {
            T* orow = po + (y * w + xw) * c;
            for (std::size_t j = 0; j < c; ++j) orow[j] = pb[j];
            for (int dy = -1; dy <= 1; ++dy) {
                const long yy = static_cast<long>(y) + dy;
                if (yy < 0 || yy >= static_cast<long>(h)) continue;
                for (int dx = -1; dx <= 1; ++dx) {
                    const long xx = static_cast<long>(xw) + dx;
                    if (xx < 0 || xx >= static_cast<long>(w)) continue;
                    const T* xr = px + (static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)) * c;
                    const T* kr = pk + ((dy + 1) * 3 + (dx + 1)) * c;
                    for (std::size_t j = 0; j < c; ++j) orow[j] += xr[j] * kr[j];
                }
            }
        }
    }

    if (auto* tape = detail::active_tape<T>(x.requires_grad() || k.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        tape->record(out, [x, k, b, out, h, w, c]() {
            if (!out.grad_allocated()) return;
            const auto& go = out.grad_view();
            const T* px2 = x.data();
            const T* pk2 = k.data();
            const bool gx_on = x.requires_grad();
            const bool gk_on = k.requires_grad();
            T* gx = gx_on ? x.grad().data() : nullptr;
            T* gk = gk_on ? k.grad().data() : nullptr;
            for (std::size_t y = 0; y < h; ++y) {
                for (std::size_t xw = 0; xw < w; ++xw) {
                    const T* gr = go.data() + (y * w + xw) * c;
                    for (int dy = -1; dy <= 1; ++dy) {
                        const long yy = static_cast<long>(y) + dy;
                        if (yy < 0 || yy >= static_cast<long>(h)) continue;
                        for (int dx = -1; dx <= 1; ++dx) {
                            const long xx = static_cast<long>(xw) + dx;
                            if (xx < 0 || xx >= static_cast<long>(w)) continue;
                            const std::size_t xi = (static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)) * c;
                            const std::size_t ki = static_cast<std::size_t>(((dy + 1) * 3 + (dx + 1))) * c;
                            if (gx_on) {
                                const T* kr = pk2 + ki;
                                for (std::size_t j = 0; j < c; ++j) gx[xi + j] += gr[j] * kr[j];
                            }
                            if (gk_on) {
                                const T* xr = px2 + xi;
                                for (std::size_t j = 0; j < c; ++j) gk[ki + j] += gr[j] * xr[j];
                            }
                        }
                    }
                }
            }
            if (b.requires_grad()) {
                auto& gb = b.grad();
                for (std::size_t n = 0; n < h * w; ++n)
                    for (std::size_t j = 0; j < c; ++j) gb[j] += go[n * c + j];
            }
        });
    }
    return out;
}

// per-position normalization over the trailing channel axis, 1/C variance
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& offset, T eps = T(1e-6)) {
    if (x.rank() < 1) throw ShapeError("layer_norm: input must have rank >= 1");
    const std::size_t c = x.shape().back();
    if (gain.rank() != 1 || gain.extent(0) != c || offset.rank() != 1 || offset.extent(0) != c)
        throw ShapeError("layer_norm: gain/offset must be length " + std::to_string(c));
    if (!(eps > T(0))) throw ConfigError("layer_norm: eps must be positive");
    const std::size_t n = x.numel() / c;

    Tensor<T> out(x.shape());
    Tensor<T> xhat(x.shape());     // saved for backward
    Tensor<T> inv_std({n});
    const T* px = x.data();
    const T* pg = gain.data();
    const T* pf = offset.data();
    T* po = out.data();
    T* ph = xhat.data();
    T* ps = inv_std.data();
    for (std::size_t i = 0; i < n; ++i) {
        const T* xr = px + i * c;
        T mean = T(0);
        for (std::size_t j = 0; j < c; ++j) mean += xr[j];
        mean /= static_cast<T>(c);
        T var = T(0);
        for (std::size_t j = 0; j < c; ++j) {
            const T d = xr[j] - mean;
            var += d * d;
        }
        var /= static_cast<T>(c);
        const T inv = T(1) / std::sqrt(var + eps);
        ps[i] = inv;
        T* hr = ph + i * c;
        T* orow = po + i * c;
        for (std::size_t j = 0; j < c; ++j) {
            hr[j] = (xr[j] - mean) * inv;
            orow[j] = hr[j] * pg[j] + pf[j];
        }
    }

    if (auto* tape = detail::active_tape<T>(x.requires_grad() || gain.requires_grad() || offset.requires_grad())) {
        out.set_requires_grad(true);
        tape->record(out, [x, gain, offset, out, xhat, inv_std, n, c]() {
            if (!out.grad_allocated()) return;
            const auto& go = out.grad_view();
            const T* ph2 = xhat.data();
            const T* ps2 = inv_std.data();
            const T* pg2 = gain.data();
            if (x.requires_grad()) {
                auto& gx = x.grad();
                for (std::size_t i = 0; i < n; ++i) {
                    const T* gr = go.data() + i * c;
                    const T* hr = ph2 + i * c;
                    T sum_gg = T(0), sum_ggh = T(0);
                    for (std::size_t j = 0; j < c; ++j) {
                        const T gg = gr[j] * pg2[j];
                        sum_gg += gg;
                        sum_ggh += gg * hr[j];
                    }
                    const T invc = T(1) / static_cast<T>(c);
                    for (std::size_t j = 0; j < c; ++j) {
                        const T gg = gr[j] * pg2[j];
                        gx[i * c + j] += ps2[i] * (gg - invc * sum_gg - hr[j] * invc * sum_ggh);
                    }
                }
            }
            if (gain.requires_grad()) {
                auto& gg = gain.grad();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < c; ++j) gg[j] += go[i * c + j] * ph2[i * c + j];
            }
            if (offset.requires_grad()) {
                auto& gf = offset.grad();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < c; ++j) gf[j] += go[i * c + j];
            }
        });
    }
    return out;
}

// ------------------------------------------------------------- attention ops

// softmax over the position axis of a [N,h] logit map, max-stabilized per head
template <typename T>
Tensor<T> softmax_over_positions(const Tensor<T>& z) {
    detail::require_rank(z, 2, "softmax_over_positions");
    const std::size_t n = z.extent(0), h = z.extent(1);
    if (n < 1) throw ShapeError("softmax_over_positions: empty position axis");
    Tensor<T> out(z.shape());
    const T* pz = z.data();
    T* po = out.data();
    for (std::size_t head = 0; head < h; ++head) {
        T m = pz[head];
        for (std::size_t i = 1; i < n; ++i) m = std::max(m, pz[i * h + head]);
        T s = T(0);
        for (std::size_t i = 0; i < n; ++i) {
            const T e = std::exp(pz[i * h + head] - m);
            po[i * h + head] = e;
            s += e;
        }
        const T inv = T(1) / s;
        for (std::size_t i = 0; i < n; ++i) po[i * h + head] *= inv;
    }
    if (auto* tape = detail::active_tape<T>(z.requires_grad())) {
        out.set_requires_grad(true);
        tape->record(out, [z, out, n, h]() {
            if (!out.grad_allocated()) return;
            const auto& go = out.grad_view();
            const T* py = out.data();
            auto& gz = z.grad();
            for (std::size_t head = 0; head < h; ++head) {
                T dot = T(0);
                for (std::size_t i = 0; i < n; ++i) dot += go[i * h + head] * py[i * h + head];
                for (std::size_t i = 0; i < n; ++i)
                    gz[i * h + head] += py[i * h + head] * (go[i * h + head] - dot);
            }
        });
    }
    return out;
}

// saliency-gate logits: out[n,head] = scale * sum_d Q[n,head,d] * W[head,d]
template <typename T>
Tensor<T> head_project(const Tensor<T>& q, const Tensor<T>& w, T scale) {
    detail::require_rank(q, 3, "head_project");
    const std::size_t n = q.extent(0), h = q.extent(1), d = q.extent(2);
    if (w.rank() != 2 || w.extent(0) != h || w.extent(1) != d)
        throw ShapeError("head_project: gate " + shape_str(w.shape()) + " vs heads " + shape_str(q.shape()));
    Tensor<T> out({n, h});
    const T* pq = q.data();
    const T* pw = w.data();
    T* po = out.data();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t head = 0; head < h; ++head) {
            const T* qr = pq + (i * h + head) * d;
            const T* wr = pw + head * d;
            T acc = T(0);
            for (std::size_t j = 0; j < d; ++j) acc += qr[j] * wr[j];
            po[i * h + head] = acc * scale;
        }
    if (auto* tape = detail::active_tape<T>(q.requires_grad() || w.requires_grad())) {
        out.set_requires_grad(true);
        tape->record(out, [q, w, out, n, h, d, scale]() {
            if (!out.grad_allocated()) return;
            const auto& go = out.grad_view();
            const T* pq2 = q.data();
            const T* pw2 = w.data();
            if (q.requires_grad()) {
                auto& gq = q.grad();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t head = 0; head < h; ++head) {
                        const T g = go[i * h + head] * scale;
                        const T* wr = pw2 + head * d;
                        T* gr = gq.data() + (i * h + head) * d;
                        for (std::size_t j = 0; j < d; ++j) gr[j] += g * wr[j];
                    }
            }
            if (w.requires_grad()) {
                auto& gw = w.grad();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t head = 0; head < h; ++head) {
                        const T g = go[i * h + head] * scale;
                        const T* qr = pq2 + (i * h + head) * d;
                        T* gr = gw.data() + head * d;
                        for (std::size_t j = 0; j < d; ++j) gr[j] += g * qr[j];
                    }
            }
        });
    }
    return out;
}

// attention-weighted accumulation: out[head,d] = sum_n A[n,head] * Q[n,head,d]
template <typename T>
Tensor<T> weighted_context(const Tensor<T>& a, const Tensor<T>& q) {
    detail::require_rank(a, 2, "weighted_context");
    detail::require_rank(q, 3, "weighted_context");
    const std::size_t n = q.extent(0), h = q.extent(1), d = q.extent(2);
    if (a.extent(0) != n || a.extent(1) != h)
        throw ShapeError("weighted_context: map " + shape_str(a.shape()) + " vs " + shape_str(q.shape()));
    Tensor<T> out({h, d});
    const T* pa = a.data();
    const T* pq = q.data();
    T* po = out.data();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t head = 0; head < h; ++head) {
            const T av = pa[i * h + head];
            const T* qr = pq + (i * h + head) * d;
            T* orow = po + head * d;
            for (std::size_t j = 0; j < d; ++j) orow[j] += av * qr[j];
        }
    if (auto* tape = detail::active_tape<T>(a.requires_grad() || q.requires_grad())) {
        out.set_requires_grad(true);
        tape->record(out, [a, q, out, n, h, d]() {
            if (!out.grad_allocated()) return;
            const auto& go = out.grad_view();
            const T* pa2 = a.data();
            const T* pq2 = q.data();
            if (a.requires_grad()) {
                auto& ga = a.grad();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t head = 0; head < h; ++head) {
                        const T* qr = pq2 + (i * h + head) * d;
                        const T* gr = go.data() + head * d;
                        T acc = T(0);
                        for (std::size_t j = 0; j < d; ++j) acc += gr[j] * qr[j];
                        ga[i * h + head] += acc;
                    }
            }
            if (q.requires_grad()) {
                auto& gq = q.grad();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t head = 0; head < h; ++head) {
                        const T av = pa2[i * h + head];
                        const T* gr = go.data() + head * d;
                        T* gqr = gq.data() + (i * h + head) * d;
                        for (std::size_t j = 0; j < d; ++j) gqr[j] += av * gr[j];
                    }
            }
        });
    }
    return out;
}

// one context vector per head multiplies every position: out[n,h,d] = G[h,d]*P[n,h,d]
template <typename T>
Tensor<T> broadcast_mul_heads(const Tensor<T>& g, const Tensor<T>& p) {
    detail::require_rank(g, 2, "broadcast_mul_heads");
    detail::require_rank(p, 3, "broadcast_mul_heads");
    const std::size_t n = p.extent(0), h = p.extent(1), d = p.extent(2);
    if (g.extent(0) != h || g.extent(1) != d)
        throw ShapeError("broadcast_mul_heads: context " + shape_str(g.shape()) + " vs " + shape_str(p.shape()));
    Tensor<T> out(p.shape());
    const T* pg = g.data();
    const T* pp = p.data();
    T* po = out.data();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t head = 0; head < h; ++head) {
            const T* gr = pg + head * d;
            const T* pr = pp + (i * h + head) * d;
            T* orow = po + (i * h + head) * d;
            for (std::size_t j = 0; j < d; ++j) orow[j] = gr[j] * pr[j];
        }
    if (auto* tape = detail::active_tape<T>(g.requires_grad() || p.requires_grad())) {
        out.set_requires_grad(true);
        tape->record(out, [g, p, out, n, h, d]() {
            if (!out.grad_allocated()) return;
            const auto& go = out.grad_view();
            const T* pg2 = g.data();
            const T* pp2 = p.data();
            if (g.requires_grad()) {
                auto& gg = g.grad();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t head = 0; head < h; ++head) {
                        const T* pr = pp2 + (i * h + head) * d;
                        const T* gr = go.data() + (i * h + head) * d;
                        T* ggr = gg.data() + head * d;
                        for (std::size_t j = 0; j < d; ++j) ggr[j] += gr[j] * pr[j];
                    }
            }
            if (p.requires_grad()) {
                auto& gp = p.grad();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t head = 0; head < h; ++head) {
                        const T* cr = pg2 + head * d;
                        const T* gr = go.data() + (i * h + head) * d;
                        T* gpr = gp.data() + (i * h + head) * d;
                        for (std::size_t j = 0; j < d; ++j) gpr[j] += gr[j] * cr[j];
                    }
            }
        });
    }
    return out;
}

// ------------------------------------------------------------ shape plumbing

// slice [c0, c1) of the trailing axis
template <typename T>
Tensor<T> slice_last(const Tensor<T>& x, std::size_t c0, std::size_t c1) {
    if (x.rank() < 1) throw ShapeError("slice_last: rank >= 1 required");
    const std::size_t c = x.shape().back();
    if (!(c0 < c1 && c1 <= c))
        throw ShapeError("slice_last: [" + std::to_string(c0) + "," + std::to_string(c1) + ") of " + std::to_string(c));
    const std::size_t n = x.numel() / c;
    const std::size_t cw = c1 - c0;
    Shape oshape = x.shape();
    oshape.back() = cw;
    Tensor<T> out(oshape);
    const T* px = x.data();
    T* po = out.data();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < cw; ++j) po[i * cw + j] = px[i * c + c0 + j];
    if (auto* tape = detail::active_tape<T>(x.requires_grad())) {
        out.set_requires_grad(true);
        tape->record(out, [x, out, n, c, c0, cw]() {
            if (!out.grad_allocated()) return;
            const auto& go = out.grad_view();
            auto& gx = x.grad();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < cw; ++j) gx[i * c + c0 + j] += go[i * cw + j];
        });
    }
    return out;
}

// concatenate along the trailing axis; leading extents must match
template <typename T>
Tensor<T> concat_last(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != b.rank() || a.rank() < 1) throw ShapeError("concat_last: rank mismatch");
    for (std::size_t i = 0; i + 1 < a.rank(); ++i)
        if (a.extent(i) != b.extent(i))
            throw ShapeError("concat_last: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const std::size_t ca = a.shape().back(), cb = b.shape().back();
    const std::size_t n = a.numel() / ca;
    Shape oshape = a.shape();
    oshape.back() = ca + cb;
    Tensor<T> out(oshape);
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < ca; ++j) po[i * (ca + cb) + j] = pa[i * ca + j];
        for (std::size_t j = 0; j < cb; ++j) po[i * (ca + cb) + ca + j] = pb[i * cb + j];
    }
    if (auto* tape = detail::active_tape<T>(a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        tape->record(out, [a, b, out, n, ca, cb]() {
            if (!out.grad_allocated()) return;
            const auto& go = out.grad_view();
            if (a.requires_grad()) {
                auto& ga = a.grad();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < ca; ++j) ga[i * ca + j] += go[i * (ca + cb) + j];
            }
            if (b.requires_grad()) {
                auto& gb = b.grad();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < cb; ++j) gb[i * cb + j] += go[i * (ca + cb) + ca + j];
            }
        });
    }
    return out;
}

// [H,W,C] -> [H/r, W/r, C*r*r]; subpixels land in row-major order per channel
template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, std::size_t r) {
    detail::require_rank(x, 3, "pixel_unshuffle");
    if (r < 1) throw ShapeError("pixel_unshuffle: factor must be >= 1");
    const std::size_t h = x.extent(0), w = x.extent(1), c = x.extent(2);
    if (h % r != 0 || w % r != 0)
        throw ShapeError("pixel_unshuffle: factor " + std::to_string(r) + " does not divide " + shape_str(x.shape()));
    const std::size_t oh = h / r, ow = w / r, oc = c * r * r;
    Tensor<T> out({oh, ow, oc});
    const T* px = x.data();
    T* po = out.data();
    for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xw = 0; xw < ow; ++xw)
            for (std::size_t j = 0; j < c; ++j)
                for (std::size_t dy = 0; dy < r; ++dy)
                    for (std::size_t dx = 0; dx < r; ++dx)
                        po[(y * ow + xw) * oc + j * r * r + dy * r + dx] =
                            px[((y * r + dy) * w + (xw * r + dx)) * c + j];
    if (auto* tape = detail::active_tape<T>(x.requires_grad())) {
        out.set_requires_grad(true);
        tape->record(out, [x, out, oh, ow, oc, c, w, r]() {
            if (!out.grad_allocated()) return;
            const auto& go = out.grad_view();
            auto& gx = x.grad();
            for (std::size_t y = 0; y < oh; ++y)
                for (std::size_t xw = 0; xw < ow; ++xw)
                    for (std::size_t j = 0; j < c; ++j)
                        for (std::size_t dy = 0; dy < r; ++dy)
                            for (std::size_t dx = 0; dx < r; ++dx)
                                gx[((y * r + dy) * w + (xw * r + dx)) * c + j] +=
                                    go[(y * ow + xw) * oc + j * r * r + dy * r + dx];
        });
    }
    return out;
}

// [H,W,C] -> [H*r, W*r, C/(r*r)]; exact inverse of pixel_unshuffle
template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, std::size_t r) {
    detail::require_rank(x, 3, "pixel_shuffle");
    if (r < 1) throw ShapeError("pixel_shuffle: factor must be >= 1");
    const std::size_t h = x.extent(0), w = x.extent(1), c = x.extent(2);
    if (c % (r * r) != 0)
        throw ShapeError("pixel_shuffle: factor " + std::to_string(r) + "^2 does not divide channels of " + shape_str(x.shape()));
    const std::size_t oc = c / (r * r), oh = h * r, ow = w * r;
    Tensor<T> out({oh, ow, oc});
    const T* px = x.data();
    T* po = out.data();
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xw = 0; xw < w; ++xw)
            for (std::size_t j = 0; j < oc; ++j)
                for (std::size_t dy = 0; dy < r; ++dy)
                    for (std::size_t dx = 0; dx < r; ++dx)
                        po[((y * r + dy) * ow + (xw * r + dx)) * oc + j] =
                            px[(y * w + xw) * c + j * r * r + dy * r + dx];
    if (auto* tape = detail::active_tape<T>(x.requires_grad())) {
        out.set_requires_grad(true);
        tape->record(out, [x, out, h, w, c, oc, ow, r]() {
            if (!out.grad_allocated()) return;
            const auto& go = out.grad_view();
            auto& gx = x.grad();
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t xw = 0; xw < w; ++xw)
                    for (std::size_t j = 0; j < oc; ++j)
                        for (std::size_t dy = 0; dy < r; ++dy)
                            for (std::size_t dx = 0; dx < r; ++dx)
                                gx[(y * w + xw) * c + j * r * r + dy * r + dx] +=
                                    go[((y * r + dy) * ow + (xw * r + dx)) * oc + j];
        });
    }
    return out;
}

// 2x2 mean pooling; spatial extents must be even
template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& x) {
    detail::require_rank(x, 3, "avg_pool2");
    const std::size_t h = x.extent(0), w = x.extent(1), c = x.extent(2);
    if (h % 2 != 0 || w % 2 != 0) throw ShapeError("avg_pool2: odd extents " + shape_str(x.shape()));
    const std::size_t oh = h / 2, ow = w / 2;
    Tensor<T> out({oh, ow, c});
    const T* px = x.data();
    T* po = out.data();
    for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xw = 0; xw < ow; ++xw)
            for (std::size_t j = 0; j < c; ++j)
                po[(y * ow + xw) * c + j] =
                    (px[((2 * y) * w + 2 * xw) * c + j] + px[((2 * y) * w + 2 * xw + 1) * c + j] +
                     px[((2 * y + 1) * w + 2 * xw) * c + j] + px[((2 * y + 1) * w + 2 * xw + 1) * c + j]) *
                    T(0.25);
    if (auto* tape = detail::active_tape<T>(x.requires_grad())) {
        out.set_requires_grad(true);
        tape->record(out, [x, out, oh, ow, w, c]() {
            if (!out.grad_allocated()) return;
            const auto& go = out.grad_view();
            auto& gx = x.grad();
            for (std::size_t y = 0; y < oh; ++y)
                for (std::size_t xw = 0; xw < ow; ++xw)
                    for (std::size_t j = 0; j < c; ++j) {
                        const T g = go[(y * ow + xw) * c + j] * T(0.25);
                        gx[((2 * y) * w + 2 * xw) * c + j] += g;
                        gx[((2 * y) * w + 2 * xw + 1) * c + j] += g;
                        gx[((2 * y + 1) * w + 2 * xw) * c + j] += g;
                        gx[((2 * y + 1) * w + 2 * xw + 1) * c + j] += g;
                    }
        });
    }
    return out;
}

// per-channel gate: out[h,w,c] = x[h,w,c] * a[c]
template <typename T>
Tensor<T> scale_channels(const Tensor<T>& x, const Tensor<T>& a) {
    detail::require_rank(x, 3, "scale_channels");
    const std::size_t c = x.extent(2);
    if (a.rank() != 1 || a.extent(0) != c)
        throw ShapeError("scale_channels: gate " + shape_str(a.shape()) + " vs " + shape_str(x.shape()));
    const std::size_t n = x.extent(0) * x.extent(1);
    Tensor<T> out(x.shape());
    const T* px = x.data();
    const T* pa = a.data();
    T* po = out.data();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) po[i * c + j] = px[i * c + j] * pa[j];
    if (auto* tape = detail::active_tape<T>(x.requires_grad() || a.requires_grad())) {
        out.set_requires_grad(true);
        tape->record(out, [x, a, out, n, c]() {
            if (!out.grad_allocated()) return;
            const auto& go = out.grad_view();
            const T* px2 = x.data();
            const T* pa2 = a.data();
            if (x.requires_grad()) {
                auto& gx = x.grad();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += go[i * c + j] * pa2[j];
            }
            if (a.requires_grad()) {
                auto& ga = a.grad();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < c; ++j) ga[j] += go[i * c + j] * px2[i * c + j];
            }
        });
    }
    return out;
}

// depth-wise valid correlation with a fixed (non-learnable) kernel shared by
// all channels; gradient flows to the input only
template <typename T>
Tensor<T> filter2_valid(const Tensor<T>& x, const std::vector<T>& kernel, std::size_t kh, std::size_t kw) {
    detail::require_rank(x, 3, "filter2_valid");
    if (kernel.size() != kh * kw) throw ShapeError("filter2_valid: kernel size mismatch");
    const std::size_t h = x.extent(0), w = x.extent(1), c = x.extent(2);
    if (h < kh || w < kw)
        throw ShapeError("filter2_valid: input " + shape_str(x.shape()) + " smaller than kernel " +
                         std::to_string(kh) + "x" + std::to_string(kw));
    const std::size_t oh = h - kh + 1, ow = w - kw + 1;
    Tensor<T> out({oh, ow, c});
    const T* px = x.data();
    T* po = out.data();
    for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xw = 0; xw < ow; ++xw) {
            T* orow = po + (y * ow + xw) * c;
            for (std::size_t i = 0; i < kh; ++i)
                for (std::size_t j = 0; j < kw; ++j) {
                    const T kv = kernel[i * kw + j];
                    const T* xr = px + ((y + i) * w + (xw + j)) * c;
                    for (std::size_t ch = 0; ch < c; ++ch) orow[ch] += kv * xr[ch];
                }
        }
    if (auto* tape = detail::active_tape<T>(x.requires_grad())) {
        out.set_requires_grad(true);
        tape->record(out, [x, out, kernel, kh, kw, oh, ow, w, c]() {
            if (!out.grad_allocated()) return;
            const auto& go = out.grad_view();
            auto& gx = x.grad();
            for (std::size_t y = 0; y < oh; ++y)
                for (std::size_t xw = 0; xw < ow; ++xw) {
                    const T* gr = go.data() + (y * ow + xw) * c;
                    for (std::size_t i = 0; i < kh; ++i)
                        for (std::size_t j = 0; j < kw; ++j) {
                            const T kv = kernel[i * kw + j];
                            T* gxr = gx.data() + ((y + i) * w + (xw + j)) * c;
                            for (std::size_t ch = 0; ch < c; ++ch) gxr[ch] += kv * gr[ch];
                        }
                }
        });
    }
    return out;
}

// 1-D convolution across the channel axis of a [C] vector, zero padded,
// odd kernel (ECA-style gate)
template <typename T>
Tensor<T> conv1d_channels(const Tensor<T>& v, const Tensor<T>& w) {
    detail::require_rank(v, 1, "conv1d_channels");
    detail::require_rank(w, 1, "conv1d_channels kernel");
    const std::size_t c = v.extent(0), k = w.extent(0);
    if (k % 2 == 0) throw ShapeError("conv1d_channels: kernel must be odd");
    const long half = static_cast<long>(k / 2);
    Tensor<T> out({c});
    const T* pv = v.data();
    const T* pw = w.data();
    T* po = out.data();
    for (std::size_t i = 0; i < c; ++i) {
        T acc = T(0);
        for (long j = -half; j <= half; ++j) {
            const long idx = static_cast<long>(i) + j;
            if (idx < 0 || idx >= static_cast<long>(c)) continue;
            acc += pv[idx] * pw[j + half];
        }
        po[i] = acc;
    }
    if (auto* tape = detail::active_tape<T>(v.requires_grad() || w.requires_grad())) {
        out.set_requires_grad(true);
        tape->record(out, [v, w, out, c, k, half]() {
            if (!out.grad_allocated()) return;
            const auto& go = out.grad_view();
            const T* pv2 = v.data();
            const T* pw2 = w.data();
            for (std::size_t i = 0; i < c; ++i) {
                for (long j = -half; j <= half; ++j) {
                    const long idx = static_cast<long>(i) + j;
                    if (idx < 0 || idx >= static_cast<long>(c)) continue;
                    if (v.requires_grad()) v.grad()[idx] += go[i] * pw2[j + half];
                    if (w.requires_grad()) w.grad()[j + half] += go[i] * pv2[idx];
                }
            }
            (void)k;
        });
    }
    return out;
}

} // namespace llre
