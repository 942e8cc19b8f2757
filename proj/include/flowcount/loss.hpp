#pragma once

// Conservation-constrained surrogate loss over a frame triplet.
//
// Four predictions are involved, all INCOMING:
//   fwd_prev = R(I^{t-1}, I^t)   fwd_next = R(I^t, I^{t+1})
//   bwd_prev = R(I^t, I^{t-1})   bwd_next = R(I^{t+1}, I^t)
//
//   L = w_d * [ |rec(fwd_prev) - d^t|^2 + |rec(fwd_next) - d^{t+1}|^2
//             + |rec(bwd_prev) - d^{t-1}|^2 + |rec(bwd_next) - d^t|^2 ]
//     + w_c * |conservation(fwd_prev, fwd_next, exits = bwd_next[exterior])|^2
//     + w_s * [ |symmetry(fwd_prev, bwd_prev)|^2 + |symmetry(fwd_next, bwd_next)|^2 ]
//
// with every |.|^2 a mean over cells (and channels for the symmetry terms).

#include <array>
#include <cmath>
#include <string>

#include "errors.hpp"
#include "flowgrid.hpp"
#include "json.hpp"

namespace flowcount {

struct LossWeights {
    double density = 1.0;
    double conservation = 1.0;
    double symmetry = 1.0;

    void validate() const {
        for (double w : {density, conservation, symmetry})
            if (!(w >= 0.0) || !std::isfinite(w)) throw DomainError("LossWeights must be finite and >= 0");
    }
};

inline nlohmann::json to_json(const LossWeights& w) {
    return {{"density", w.density}, {"conservation", w.conservation}, {"symmetry", w.symmetry}};
}

inline LossWeights loss_weights_from_json(const nlohmann::json& j) {
    LossWeights w;
    w.density = j.value("density", w.density);
    w.conservation = j.value("conservation", w.conservation);
    w.symmetry = j.value("symmetry", w.symmetry);
    w.validate();
    return w;
}

/// Unweighted terms; total = w_d*density + w_c*conservation + w_s*symmetry.
template <typename T>
struct LossBreakdown {
    T total = T(0);
    T density = T(0);
    T conservation = T(0);
    T symmetry = T(0);
};

template <typename T>
struct TripletFlows {
    FlowField<T> fwd_prev, fwd_next, bwd_prev, bwd_next;
};

/// Ground-truth densities at t-1, t, t+1.
template <typename T>
using TripletDensities = std::array<const Grid2<T>*, 3>;

template <typename T>
Grid2<T> exterior_channel(const FlowField<T>& f) {
    Grid2<T> g(f.shape());
    for (int r = 0; r < f.shape().height; ++r)
        for (int c = 0; c < f.shape().width; ++c) g(r, c) = f(r, c, kExteriorChannel);
    return g;
}

namespace loss_detail {

template <typename T>
T density_term(const FlowField<T>& f, const Grid2<T>& gt, T weight, FlowField<T>* grad) {
    detail::require_same_shape(f.shape(), gt.shape(), "triplet_loss");
    const DensityMap<T> rec = reconstruct_density(f);
    const T n = static_cast<T>(gt.shape().cells());
    T acc = T(0);
    for (int r = 0; r < gt.height(); ++r)
        for (int c = 0; c < gt.width(); ++c) {
            const T e = rec(r, c) - gt(r, c);
            acc += e * e;
            if (grad)
                for (int ch = 0; ch < kFlowChannels; ++ch) (*grad)(r, c, ch) += weight * T(2) * e / n;
        }
    return acc / n;
}

template <typename T>
T symmetry_term(const FlowField<T>& fwd, const FlowField<T>& bwd, T weight, FlowField<T>* dfwd, FlowField<T>* dbwd) {
    const Tensor3<T> s = symmetry_residual(fwd, bwd);
    const GridShape& g = fwd.shape();
    const T n = static_cast<T>(s.size());
    T acc = T(0);
    for (int r = 0; r < g.height; ++r)
        for (int c = 0; c < g.width; ++c)
            for (int ch = 0; ch < kNeighborChannels; ++ch) {
                const T e = s(r, c, ch);
                acc += e * e;
                if (!dfwd) continue;
                const T ge = weight * T(2) * e / n;
                (*dfwd)(r, c, ch) += ge;
                const Offset o = channel_offset(ch);
                if (g.contains(r + o.dy, c + o.dx)) (*dbwd)(r + o.dy, c + o.dx, opposite_channel(ch)) -= ge;
            }
    return acc / n;
}

} // namespace loss_detail

/// Loss of four flow predictions against GT densities. When `grads` is given,
/// it receives dL/dF for each prediction (same layout as `flows`).
template <typename T>
LossBreakdown<T> flow_loss(const TripletFlows<T>& flows, const TripletDensities<T>& gt, const LossWeights& weights,
                           TripletFlows<T>* grads = nullptr) {
    weights.validate();
    const GridShape s = flows.fwd_prev.shape();
    for (const auto* f : {&flows.fwd_next, &flows.bwd_prev, &flows.bwd_next})
        detail::require_same_shape(s, f->shape(), "triplet_loss");
    if (grads) {
        grads->fwd_prev = FlowField<T>(s);
        grads->fwd_next = FlowField<T>(s);
        grads->bwd_prev = FlowField<T>(s);
        grads->bwd_next = FlowField<T>(s);
    }
    const T wd = static_cast<T>(weights.density), wc = static_cast<T>(weights.conservation),
            ws = static_cast<T>(weights.symmetry);
    LossBreakdown<T> out;
    out.density = loss_detail::density_term(flows.fwd_prev, *gt[1], wd, grads ? &grads->fwd_prev : nullptr) +
                  loss_detail::density_term(flows.fwd_next, *gt[2], wd, grads ? &grads->fwd_next : nullptr) +
                  loss_detail::density_term(flows.bwd_prev, *gt[0], wd, grads ? &grads->bwd_prev : nullptr) +
                  loss_detail::density_term(flows.bwd_next, *gt[1], wd, grads ? &grads->bwd_next : nullptr);

    const Grid2<T> exits = exterior_channel(flows.bwd_next);
    const Grid2<T> res = conservation_residual(flows.fwd_prev, flows.fwd_next, exits);
    const T n = static_cast<T>(s.cells());
    for (int r = 0; r < s.height; ++r)
        for (int c = 0; c < s.width; ++c) {
            const T e = res(r, c);
            out.conservation += e * e;
            if (!grads) continue;
            const T ge = wc * T(2) * e / n;
            for (int ch = 0; ch < kFlowChannels; ++ch) grads->fwd_prev(r, c, ch) += ge;
            for (int ch = 0; ch < kNeighborChannels; ++ch) {
                // departures from (r,c) are recorded at the destination, in the opposite channel
                const Offset o = channel_offset(ch);
                if (s.contains(r + o.dy, c + o.dx)) grads->fwd_next(r + o.dy, c + o.dx, opposite_channel(ch)) -= ge;
            }
            grads->bwd_next(r, c, kExteriorChannel) -= ge;
        }
    out.conservation /= n;

    out.symmetry =
        loss_detail::symmetry_term(flows.fwd_prev, flows.bwd_prev, ws, grads ? &grads->fwd_prev : nullptr,
                                   grads ? &grads->bwd_prev : nullptr) +
        loss_detail::symmetry_term(flows.fwd_next, flows.bwd_next, ws, grads ? &grads->fwd_next : nullptr,
                                   grads ? &grads->bwd_next : nullptr);
    out.total = wd * out.density + wc * out.conservation + ws * out.symmetry;
    return out;
}

} // namespace flowcount
