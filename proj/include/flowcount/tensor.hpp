#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"

namespace flowcount {

/// Spatial size of a cell grid. Cells are addressed (row, col).
struct GridShape {
    int height = 1;
    int width = 1;

    std::size_t cells() const noexcept { return static_cast<std::size_t>(height) * width; }
    bool contains(int row, int col) const noexcept {
        return row >= 0 && row < height && col >= 0 && col < width;
    }
    bool on_boundary(int row, int col) const noexcept {
        return row == 0 || col == 0 || row == height - 1 || col == width - 1;
    }
    void validate() const {
        if (height < 1 || width < 1)
            throw DomainError("GridShape requires height >= 1 and width >= 1, got " +
                              std::to_string(height) + "x" + std::to_string(width));
    }
    friend bool operator==(const GridShape&, const GridShape&) = default;
};

inline std::string to_string(const GridShape& s) {
    return std::to_string(s.height) + "x" + std::to_string(s.width);
}

/// Dense height x width x channels tensor, channel-fastest (HWC) layout.
template <typename T>
class Tensor3 {
public:
    Tensor3() = default;
    Tensor3(int height, int width, int channels, T fill = T(0))
        : h_(height), w_(width), c_(channels),
          data_(static_cast<std::size_t>(height) * width * channels, fill) {
        if (height < 0 || width < 0 || channels < 0)
            throw DomainError("Tensor3 dimensions must be non-negative");
    }

    int height() const noexcept { return h_; }
    int width() const noexcept { return w_; }
    int channels() const noexcept { return c_; }
    GridShape shape() const noexcept { return {h_, w_}; }
    std::size_t size() const noexcept { return data_.size(); }

    std::size_t index(int y, int x, int ch) const noexcept {
        assert(y >= 0 && y < h_ && x >= 0 && x < w_ && ch >= 0 && ch < c_);
        return (static_cast<std::size_t>(y) * w_ + x) * c_ + ch;
    }
    T& operator()(int y, int x, int ch) noexcept { return data_[index(y, x, ch)]; }
    const T& operator()(int y, int x, int ch) const noexcept { return data_[index(y, x, ch)]; }

    T* pixel(int y, int x) noexcept { return data_.data() + index(y, x, 0); }
    const T* pixel(int y, int x) const noexcept { return data_.data() + index(y, x, 0); }

    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }
    std::vector<T>& storage() noexcept { return data_; }
    const std::vector<T>& storage() const noexcept { return data_; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
    bool same_dims(const Tensor3& o) const noexcept { return h_ == o.h_ && w_ == o.w_ && c_ == o.c_; }
    bool all_finite() const noexcept {
        for (const T& v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    friend bool operator==(const Tensor3&, const Tensor3&) = default;

private:
    int h_ = 0, w_ = 0, c_ = 0;
    std::vector<T> data_;
};

/// Channel-wise concatenation [a, b].
template <typename T>
Tensor3<T> concat_channels(const Tensor3<T>& a, const Tensor3<T>& b) {
    if (a.height() != b.height() || a.width() != b.width())
        throw DomainError("concat_channels: spatial size mismatch");
    Tensor3<T> out(a.height(), a.width(), a.channels() + b.channels());
    for (int y = 0; y < a.height(); ++y)
        for (int x = 0; x < a.width(); ++x) {
            T* o = out.pixel(y, x);
            const T* pa = a.pixel(y, x);
            const T* pb = b.pixel(y, x);
            std::copy(pa, pa + a.channels(), o);
            std::copy(pb, pb + b.channels(), o + a.channels());
        }
    return out;
}

/// Inverse of concat_channels: splits off the first `first` channels.
template <typename T>
void split_channels(const Tensor3<T>& in, int first, Tensor3<T>& a, Tensor3<T>& b) {
    a = Tensor3<T>(in.height(), in.width(), first);
    b = Tensor3<T>(in.height(), in.width(), in.channels() - first);
    for (int y = 0; y < in.height(); ++y)
        for (int x = 0; x < in.width(); ++x) {
            const T* p = in.pixel(y, x);
            std::copy(p, p + first, a.pixel(y, x));
            std::copy(p + first, p + in.channels(), b.pixel(y, x));
        }
}

template <typename To, typename From>
Tensor3<To> tensor_cast(const Tensor3<From>& in) {
    Tensor3<To> out(in.height(), in.width(), in.channels());
    auto src = in.values();
    auto dst = out.values();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<To>(src[i]);
    return out;
}

} // namespace flowcount
