#pragma once

// Flow-field algebra on a cell grid.
//
// A FlowField stores, for every cell and each of ten channels, the number of
// people exchanged with one neighbor over one frame interval. Channels 0..8
// enumerate the offsets (dy, dx) in {-1,0,1}^2 row-major, so channel 4 is the
// cell itself; channel 9 is the exterior reservoir and is only legal at
// boundary cells.
//
//   INCOMING: value(j, c) = flow from j + offset(c) into j
//   OUTGOING: value(i, c) = flow from i into i + offset(c)

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "tensor.hpp"

namespace flowcount {

inline constexpr int kFlowChannels = 10;
inline constexpr int kNeighborChannels = 9;
inline constexpr int kSelfChannel = 4;
inline constexpr int kExteriorChannel = 9;

struct Offset {
    int dy;
    int dx;
    friend bool operator==(const Offset&, const Offset&) = default;
};

constexpr Offset channel_offset(int channel) noexcept { return {channel / 3 - 1, channel % 3 - 1}; }
constexpr int channel_for_offset(int dy, int dx) noexcept { return (dy + 1) * 3 + (dx + 1); }
/// Channel whose offset is the negation of `channel`'s.
constexpr int opposite_channel(int channel) noexcept { return 8 - channel; }

enum class Representation { Incoming, Outgoing };

inline const char* to_string(Representation r) {
    return r == Representation::Incoming ? "incoming" : "outgoing";
}

/// Row-major height x width grid of reals.
template <typename T>
class Grid2 {
public:
    Grid2() = default;
    explicit Grid2(GridShape shape, T fill = T(0)) : shape_(shape) {
        shape_.validate();
        values_.assign(shape_.cells(), fill);
    }
    Grid2(GridShape shape, std::vector<T> values) : shape_(shape), values_(std::move(values)) {
        shape_.validate();
        if (values_.size() != shape_.cells())
            throw DomainError("Grid2: " + std::to_string(values_.size()) + " values for shape " +
                              to_string(shape_));
    }

    const GridShape& shape() const noexcept { return shape_; }
    int height() const noexcept { return shape_.height; }
    int width() const noexcept { return shape_.width; }

    T& operator()(int row, int col) noexcept { return values_[static_cast<std::size_t>(row) * shape_.width + col]; }
    const T& operator()(int row, int col) const noexcept {
        return values_[static_cast<std::size_t>(row) * shape_.width + col];
    }

    std::span<T> values() noexcept { return values_; }
    std::span<const T> values() const noexcept { return values_; }

    T sum() const noexcept {
        T s = T(0);
        for (const T& v : values_) s += v;
        return s;
    }

    friend bool operator==(const Grid2&, const Grid2&) = default;

private:
    GridShape shape_{};
    std::vector<T> values_;
};

/// Non-negative person mass per cell; its sum is the people count.
template <typename T>
class DensityMap : public Grid2<T> {
public:
    using Grid2<T>::Grid2;
    DensityMap(const Grid2<T>& g) : Grid2<T>(g) {}

    bool non_negative() const noexcept {
        return std::all_of(this->values().begin(), this->values().end(), [](T v) { return v >= T(0); });
    }
};

template <typename T>
class FlowField {
public:
    FlowField() = default;
    explicit FlowField(GridShape shape, Representation rep = Representation::Incoming)
        : shape_(shape), rep_(rep) {
        shape_.validate();
        values_.assign(shape_.cells() * kFlowChannels, T(0));
    }
    FlowField(GridShape shape, Representation rep, std::vector<T> values)
        : shape_(shape), rep_(rep), values_(std::move(values)) {
        shape_.validate();
        if (values_.size() != shape_.cells() * kFlowChannels)
            throw DomainError("FlowField: expected " + std::to_string(shape_.cells() * kFlowChannels) +
                              " values, got " + std::to_string(values_.size()));
    }

    const GridShape& shape() const noexcept { return shape_; }
    Representation representation() const noexcept { return rep_; }
    void set_representation(Representation r) noexcept { rep_ = r; }

    T& operator()(int row, int col, int ch) noexcept { return values_[index(row, col, ch)]; }
    const T& operator()(int row, int col, int ch) const noexcept { return values_[index(row, col, ch)]; }

    std::span<T> values() noexcept { return values_; }
    std::span<const T> values() const noexcept { return values_; }

    T sum() const noexcept {
        T s = T(0);
        for (const T& v : values_) s += v;
        return s;
    }

    /// Empty string when every invariant holds, otherwise a description of the first violation.
    std::string invariant_violation() const {
        for (int r = 0; r < shape_.height; ++r)
            for (int c = 0; c < shape_.width; ++c)
                for (int ch = 0; ch < kFlowChannels; ++ch) {
                    const T v = (*this)(r, c, ch);
                    const std::string where = "(" + std::to_string(r) + "," + std::to_string(c) + ")[" +
                                              std::to_string(ch) + "]";
                    if (!(v >= T(0))) return "negative or NaN entry at " + where;
                    if (v == T(0)) continue;
                    if (ch == kExteriorChannel) {
                        if (!shape_.on_boundary(r, c)) return "exterior flow at interior cell " + where;
                    } else {
                        const Offset o = channel_offset(ch);
                        if (!shape_.contains(r + o.dy, c + o.dx)) return "flow across grid edge at " + where;
                    }
                }
        return {};
    }

    friend bool operator==(const FlowField&, const FlowField&) = default;

private:
    std::size_t index(int row, int col, int ch) const noexcept {
        return (static_cast<std::size_t>(row) * shape_.width + col) * kFlowChannels + ch;
    }

    GridShape shape_{};
    Representation rep_ = Representation::Incoming;
    std::vector<T> values_;
};

struct Neighbor {
    int channel;
    int row;
    int col;
    friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

struct Neighborhood {
    std::vector<Neighbor> neighbors;  // in channel order
    bool boundary = false;            // some offset leaves the grid
};

inline Neighborhood neighborhood(int row, int col, GridShape shape) {
    shape.validate();
    if (!shape.contains(row, col))
        throw DomainError("neighborhood: cell (" + std::to_string(row) + "," + std::to_string(col) +
                          ") outside grid " + to_string(shape));
    Neighborhood n;
    n.neighbors.reserve(kNeighborChannels);
    for (int ch = 0; ch < kNeighborChannels; ++ch) {
        const Offset o = channel_offset(ch);
        if (shape.contains(row + o.dy, col + o.dx))
            n.neighbors.push_back({ch, row + o.dy, col + o.dx});
        else
            n.boundary = true;
    }
    return n;
}

namespace detail {

inline void require_same_shape(const GridShape& a, const GridShape& b, const char* op) {
    if (!(a == b))
        throw DomainError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

template <typename T>
void require_incoming(const FlowField<T>& f, const char* op) {
    if (f.representation() != Representation::Incoming)
        throw RepresentationError(std::string(op) + " requires an INCOMING flow field");
}

} // namespace detail

/// d[j] = sum of all ten channels at j.
template <typename T>
DensityMap<T> reconstruct_density(const FlowField<T>& flow) {
    detail::require_incoming(flow, "reconstruct_density");
    DensityMap<T> d(flow.shape());
    for (int r = 0; r < flow.shape().height; ++r)
        for (int c = 0; c < flow.shape().width; ++c) {
            T s = T(0);
            for (int ch = 0; ch < kFlowChannels; ++ch) s += flow(r, c, ch);
            d(r, c) = s;
        }
    return d;
}

/// Source-side marginal: mass that left each cell toward an in-grid destination.
template <typename T>
DensityMap<T> emitted_density(const FlowField<T>& flow) {
    detail::require_incoming(flow, "emitted_density");
    const GridShape& s = flow.shape();
    DensityMap<T> d(s);
    for (int r = 0; r < s.height; ++r)
        for (int c = 0; c < s.width; ++c) {
            T acc = T(0);
            for (int ch = 0; ch < kNeighborChannels; ++ch) {
                // destination j = i - offset(ch), where it records the flow in channel ch
                const Offset o = channel_offset(ch);
                const int jr = r - o.dy, jc = c - o.dx;
                if (s.contains(jr, jc)) acc += flow(jr, jc, ch);
            }
            d(r, c) = acc;
        }
    return d;
}

/// Re-indexes a field between destination and source cells. Channel c at j
/// becomes channel 8-c at j+offset(c); the exterior channel is copied in place.
template <typename T>
FlowField<T> flow_transpose(const FlowField<T>& flow) {
    const GridShape& s = flow.shape();
    FlowField<T> out(s, flow.representation() == Representation::Incoming ? Representation::Outgoing
                                                                           : Representation::Incoming);
    for (int r = 0; r < s.height; ++r)
        for (int c = 0; c < s.width; ++c) {
            for (int ch = 0; ch < kNeighborChannels; ++ch) {
                const Offset o = channel_offset(ch);
                if (s.contains(r + o.dy, c + o.dx))
                    out(r + o.dy, c + o.dx, opposite_channel(ch)) = flow(r, c, ch);
            }
            out(r, c, kExteriorChannel) = flow(r, c, kExteriorChannel);
        }
    return out;
}

/// Arrivals into j over (t-1,t) minus departures from j over (t,t+1).
///
/// With `exterior_out_next` (per-cell exits during (t,t+1)) every cell is
/// checked; without it boundary cells are reported as 0.
template <typename T>
Grid2<T> conservation_residual(const FlowField<T>& flow_in_prev, const FlowField<T>& flow_in_next,
                               const Grid2<T>* exterior_out_next = nullptr) {
    detail::require_incoming(flow_in_prev, "conservation_residual");
    detail::require_incoming(flow_in_next, "conservation_residual");
    detail::require_same_shape(flow_in_prev.shape(), flow_in_next.shape(), "conservation_residual");
    if (exterior_out_next)
        detail::require_same_shape(flow_in_prev.shape(), exterior_out_next->shape(), "conservation_residual");

    const GridShape& s = flow_in_prev.shape();
    const DensityMap<T> arrived = reconstruct_density(flow_in_prev);
    const FlowField<T> outgoing = flow_transpose(flow_in_next);
    Grid2<T> res(s);
    for (int r = 0; r < s.height; ++r)
        for (int c = 0; c < s.width; ++c) {
            if (!exterior_out_next && s.on_boundary(r, c)) continue;
            T departed = T(0);
            for (int ch = 0; ch < kNeighborChannels; ++ch) departed += outgoing(r, c, ch);
            if (exterior_out_next) departed += (*exterior_out_next)(r, c);
            res(r, c) = arrived(r, c) - departed;
        }
    return res;
}

template <typename T>
Grid2<T> conservation_residual(const FlowField<T>& flow_in_prev, const FlowField<T>& flow_in_next,
                               const Grid2<T>& exterior_out_next) {
    return conservation_residual(flow_in_prev, flow_in_next, &exterior_out_next);
}

/// f_fwd[j][c] - f_bwd(j -> j+offset(c)) for the in-grid channels.
///
/// The exterior channel residual is identically 0: forward entries at j pair
/// with backward exits from j, which an INCOMING backward field does not
/// carry. Exterior consistency is enforced through conservation instead.
template <typename T>
Tensor3<T> symmetry_residual(const FlowField<T>& flow_fwd, const FlowField<T>& flow_bwd) {
    detail::require_incoming(flow_fwd, "symmetry_residual");
    detail::require_incoming(flow_bwd, "symmetry_residual");
    detail::require_same_shape(flow_fwd.shape(), flow_bwd.shape(), "symmetry_residual");
    const GridShape& s = flow_fwd.shape();
    const FlowField<T> bwd_t = flow_transpose(flow_bwd);
    Tensor3<T> res(s.height, s.width, kFlowChannels);
    for (int r = 0; r < s.height; ++r)
        for (int c = 0; c < s.width; ++c)
            for (int ch = 0; ch < kNeighborChannels; ++ch) res(r, c, ch) = flow_fwd(r, c, ch) - bwd_t(r, c, ch);
    return res;
}

template <typename T>
T count(const Grid2<T>& density) {
    return density.sum();
}

} // namespace flowcount

namespace flowcount {

template <typename To, typename From>
Grid2<To> grid_cast(const Grid2<From>& g) {
    Grid2<To> out(g.shape());
    for (std::size_t i = 0; i < g.values().size(); ++i) out.values()[i] = static_cast<To>(g.values()[i]);
    return out;
}

template <typename To, typename From>
FlowField<To> flow_cast(const FlowField<From>& f) {
    FlowField<To> out(f.shape(), f.representation());
    for (std::size_t i = 0; i < f.values().size(); ++i) out.values()[i] = static_cast<To>(f.values()[i]);
    return out;
}

} // namespace flowcount
