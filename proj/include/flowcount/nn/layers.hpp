#pragma once

// Forward/backward kernels for the convolutional building blocks.
// Tensors are HWC; convolution weights are laid out [ky][kx][in][out].

#include <cmath>
#include <span>
#include <string>

#include "../errors.hpp"
#include "../tensor.hpp"

namespace flowcount::nn {

enum class Activation { None, Relu, LeakyRelu, Softplus };

inline const char* to_string(Activation a) {
    switch (a) {
    case Activation::None: return "none";
    case Activation::Relu: return "relu";
    case Activation::LeakyRelu: return "leaky_relu";
    case Activation::Softplus: return "softplus";
    }
    return "?";
}

inline Activation activation_from_string(const std::string& s) {
    if (s == "none" || s == "linear") return Activation::None;
    if (s == "relu") return Activation::Relu;
    if (s == "leaky_relu") return Activation::LeakyRelu;
    if (s == "softplus") return Activation::Softplus;
    throw DomainError("unknown activation '" + s + "'");
}

inline constexpr double kLeakySlope = 0.01;

template <typename T>
T softplus(T x) noexcept {
    return x > T(20) ? x : std::log1p(std::exp(x));
}

template <typename T>
T sigmoid(T x) noexcept {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

template <typename T>
T activate(Activation a, T x) noexcept {
    switch (a) {
    case Activation::None: return x;
    case Activation::Relu: return x < T(0) ? T(0) : x;  // NaN passes through
    case Activation::LeakyRelu: return x > T(0) ? x : T(kLeakySlope) * x;
    case Activation::Softplus: return softplus(x);
    }
    return x;
}

/// d activate(x) / dx
template <typename T>
T activate_grad(Activation a, T x) noexcept {
    switch (a) {
    case Activation::None: return T(1);
    case Activation::Relu: return x > T(0) ? T(1) : T(0);
    case Activation::LeakyRelu: return x > T(0) ? T(1) : T(kLeakySlope);
    case Activation::Softplus: return sigmoid(x);
    }
    return T(1);
}

template <typename T>
Tensor3<T> activate(Activation a, const Tensor3<T>& pre) {
    Tensor3<T> out = pre;
    if (a == Activation::None) return out;
    for (T& v : out.values()) v = activate(a, v);
    return out;
}

/// grad <- grad * act'(pre), elementwise.
template <typename T>
void activate_backward(Activation a, const Tensor3<T>& pre, Tensor3<T>& grad) {
    if (a == Activation::None) return;
    auto p = pre.values();
    auto g = grad.values();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= activate_grad(a, p[i]);
}

/// Stride-1 "same" convolution with an odd square kernel and zero padding.
template <typename T>
Tensor3<T> conv2d(const Tensor3<T>& in, std::span<const T> weight, std::span<const T> bias, int kernel, int out_ch) {
    const int cin = in.channels();
    const int pad = kernel / 2;
    if (weight.size() != static_cast<std::size_t>(kernel) * kernel * cin * out_ch || bias.size() != static_cast<std::size_t>(out_ch))
        throw DomainError("conv2d: weight shape does not match input channels " + std::to_string(cin));
    Tensor3<T> out(in.height(), in.width(), out_ch);
    for (int y = 0; y < in.height(); ++y)
        for (int x = 0; x < in.width(); ++x) {
            T* o = out.pixel(y, x);
            for (int co = 0; co < out_ch; ++co) o[co] = bias[co];
            for (int ky = 0; ky < kernel; ++ky) {
                const int iy = y + ky - pad;
                if (iy < 0 || iy >= in.height()) continue;
                for (int kx = 0; kx < kernel; ++kx) {
                    const int ix = x + kx - pad;
                    if (ix < 0 || ix >= in.width()) continue;
                    const T* src = in.pixel(iy, ix);
                    const T* wk = weight.data() + static_cast<std::size_t>(ky * kernel + kx) * cin * out_ch;
                    for (int ci = 0; ci < cin; ++ci) {
                        const T a = src[ci];
                        const T* wr = wk + static_cast<std::size_t>(ci) * out_ch;
                        for (int co = 0; co < out_ch; ++co) o[co] += a * wr[co];
                    }
                }
            }
        }
    return out;
}

/// Accumulates weight/bias gradients; writes the input gradient when `din` is non-null.
template <typename T>
void conv2d_backward(const Tensor3<T>& in, std::span<const T> weight, int kernel, const Tensor3<T>& dout,
                     std::span<T> dweight, std::span<T> dbias, Tensor3<T>* din) {
    const int cin = in.channels();
    const int out_ch = dout.channels();
    const int pad = kernel / 2;
    if (din) *din = Tensor3<T>(in.height(), in.width(), cin);
    for (int y = 0; y < in.height(); ++y)
        for (int x = 0; x < in.width(); ++x) {
            const T* g = dout.pixel(y, x);
            for (int co = 0; co < out_ch; ++co) dbias[co] += g[co];
            for (int ky = 0; ky < kernel; ++ky) {
                const int iy = y + ky - pad;
                if (iy < 0 || iy >= in.height()) continue;
                for (int kx = 0; kx < kernel; ++kx) {
                    const int ix = x + kx - pad;
                    if (ix < 0 || ix >= in.width()) continue;
                    const T* src = in.pixel(iy, ix);
                    T* dsrc = din ? din->pixel(iy, ix) : nullptr;
                    const std::size_t base = static_cast<std::size_t>(ky * kernel + kx) * cin * out_ch;
                    for (int ci = 0; ci < cin; ++ci) {
                        const T a = src[ci];
                        const T* wr = weight.data() + base + static_cast<std::size_t>(ci) * out_ch;
                        T* dwr = dweight.data() + base + static_cast<std::size_t>(ci) * out_ch;
                        T acc = T(0);
                        for (int co = 0; co < out_ch; ++co) {
                            dwr[co] += a * g[co];
                            acc += wr[co] * g[co];
                        }
                        if (dsrc) dsrc[ci] += acc;
                    }
                }
            }
        }
}

/// 2x2 average pooling, stride 2. Requires even height and width.
template <typename T>
Tensor3<T> avg_pool2(const Tensor3<T>& in) {
    if (in.height() % 2 || in.width() % 2)
        throw DomainError("avg_pool2: odd spatial size " + std::to_string(in.height()) + "x" + std::to_string(in.width()));
    Tensor3<T> out(in.height() / 2, in.width() / 2, in.channels());
    const int C = in.channels();
    for (int y = 0; y < out.height(); ++y)
        for (int x = 0; x < out.width(); ++x) {
            T* o = out.pixel(y, x);
            const T* a = in.pixel(2 * y, 2 * x);
            const T* b = in.pixel(2 * y, 2 * x + 1);
            const T* c = in.pixel(2 * y + 1, 2 * x);
            const T* d = in.pixel(2 * y + 1, 2 * x + 1);
            for (int ch = 0; ch < C; ++ch) o[ch] = T(0.25) * (a[ch] + b[ch] + c[ch] + d[ch]);
        }
    return out;
}

template <typename T>
Tensor3<T> avg_pool2_backward(const Tensor3<T>& dout) {
    Tensor3<T> din(dout.height() * 2, dout.width() * 2, dout.channels());
    const int C = dout.channels();
    for (int y = 0; y < dout.height(); ++y)
        for (int x = 0; x < dout.width(); ++x) {
            const T* g = dout.pixel(y, x);
            for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx) {
                    T* d = din.pixel(2 * y + dy, 2 * x + dx);
                    for (int ch = 0; ch < C; ++ch) d[ch] = T(0.25) * g[ch];
                }
        }
    return din;
}

template <typename T>
void add_inplace(Tensor3<T>& acc, const Tensor3<T>& v) {
    if (acc.size() == 0) {
        acc = v;
        return;
    }
    if (!acc.same_dims(v)) throw DomainError("add_inplace: dimension mismatch");
    auto a = acc.values();
    auto b = v.values();
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

} // namespace flowcount::nn
