#pragma once

// Single-head scaled dot-product attention over the spatial positions of
// H x W feature maps (N = H*W tokens, row-major).

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "../errors.hpp"
#include "../tensor.hpp"

namespace flowcount::nn {

/// Row-major N x N attention matrix.
template <typename T>
struct AttentionMatrix {
    int tokens = 0;
    std::vector<T> weights;

    const T* row(int i) const { return weights.data() + static_cast<std::size_t>(i) * tokens; }
    T* row(int i) { return weights.data() + static_cast<std::size_t>(i) * tokens; }
};

/// o = softmax(q k^T / sqrt(d_k)) v; the attention matrix is returned through `attn`.
template <typename T>
Tensor3<T> attention(const Tensor3<T>& q, const Tensor3<T>& k, const Tensor3<T>& v, AttentionMatrix<T>& attn) {
    if (!q.same_dims(k) || q.height() != v.height() || q.width() != v.width())
        throw DomainError("attention: query/key/value size mismatch");
    const int n = q.height() * q.width();
    const int dk = q.channels();
    const int dv = v.channels();
    const T scale = T(1) / std::sqrt(static_cast<T>(dk));
    const T* qd = q.values().data();
    const T* kd = k.values().data();
    const T* vd = v.values().data();

    attn.tokens = n;
    attn.weights.assign(static_cast<std::size_t>(n) * n, T(0));
    Tensor3<T> out(q.height(), q.width(), dv);
    T* od = out.values().data();
    for (int i = 0; i < n; ++i) {
        T* a = attn.row(i);
        const T* qi = qd + static_cast<std::size_t>(i) * dk;
        T mx = -std::numeric_limits<T>::infinity();
        for (int j = 0; j < n; ++j) {
            const T* kj = kd + static_cast<std::size_t>(j) * dk;
            T s = T(0);
            for (int c = 0; c < dk; ++c) s += qi[c] * kj[c];
            a[j] = s * scale;
            mx = std::max(mx, a[j]);
        }
        T z = T(0);
        for (int j = 0; j < n; ++j) z += (a[j] = std::exp(a[j] - mx));
        const T inv = T(1) / z;
        T* oi = od + static_cast<std::size_t>(i) * dv;
        for (int j = 0; j < n; ++j) {
            a[j] *= inv;
            const T* vj = vd + static_cast<std::size_t>(j) * dv;
            for (int c = 0; c < dv; ++c) oi[c] += a[j] * vj[c];
        }
    }
    return out;
}

template <typename T>
void attention_backward(const Tensor3<T>& q, const Tensor3<T>& k, const Tensor3<T>& v,
                        const AttentionMatrix<T>& attn, const Tensor3<T>& dout, Tensor3<T>& dq, Tensor3<T>& dk_out,
                        Tensor3<T>& dv_out) {
    const int n = attn.tokens;
    const int dk = q.channels();
    const int dv = v.channels();
    const T scale = T(1) / std::sqrt(static_cast<T>(dk));
    dq = Tensor3<T>(q.height(), q.width(), dk);
    dk_out = Tensor3<T>(k.height(), k.width(), dk);
    dv_out = Tensor3<T>(v.height(), v.width(), dv);
    const T* qd = q.values().data();
    const T* kd = k.values().data();
    const T* vd = v.values().data();
    const T* go = dout.values().data();
    T* dqd = dq.values().data();
    T* dkd = dk_out.values().data();
    T* dvd = dv_out.values().data();

    std::vector<T> da(n);
    for (int i = 0; i < n; ++i) {
        const T* a = attn.row(i);
        const T* gi = go + static_cast<std::size_t>(i) * dv;
        T dot = T(0);
        for (int j = 0; j < n; ++j) {
            const T* vj = vd + static_cast<std::size_t>(j) * dv;
            T* dvj = dvd + static_cast<std::size_t>(j) * dv;
            T s = T(0);
            for (int c = 0; c < dv; ++c) {
                s += gi[c] * vj[c];
                dvj[c] += a[j] * gi[c];
            }
            da[j] = s;
            dot += s * a[j];
        }
        const T* qi = qd + static_cast<std::size_t>(i) * dk;
        T* dqi = dqd + static_cast<std::size_t>(i) * dk;
        for (int j = 0; j < n; ++j) {
            const T ds = a[j] * (da[j] - dot) * scale;
            if (ds == T(0)) continue;
            const T* kj = kd + static_cast<std::size_t>(j) * dk;
            T* dkj = dkd + static_cast<std::size_t>(j) * dk;
            for (int c = 0; c < dk; ++c) {
                dqi[c] += ds * kj[c];
                dkj[c] += ds * qi[c];
            }
        }
    }
}

} // namespace flowcount::nn
