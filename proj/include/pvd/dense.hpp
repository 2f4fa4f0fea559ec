#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "pvd/common.hpp"
#include "pvd/params.hpp"
#include "pvd/rng.hpp"

namespace pvd {

/// Fully connected layer living inside a ParamBuffer. Weights are stored input-major
/// (W[k * out + o]) so the forward pass is an axpy per input channel; every output row is
/// computed with the same operation order regardless of batch size.
struct DenseLayer {
    std::size_t in = 0;
    std::size_t out = 0;
    std::size_t w = 0;  // offset of weights
    std::size_t b = 0;  // offset of bias

    static DenseLayer add(SegmentTable& layout, const std::string& name, std::size_t in, std::size_t out,
                          double lr_scale) {
        DenseLayer l;
        l.in = in;
        l.out = out;
        l.w = layout.add(name + ".w", in * out, lr_scale);
        l.b = layout.add(name + ".b", out, lr_scale);
        return l;
    }

    /// Uniform(+-sqrt(6/fan_in)) weights, zero bias.
    void init(std::span<float> values, Rng& rng) const {
        const double bound = std::sqrt(6.0 / static_cast<double>(in));
        for (std::size_t i = 0; i < in * out; ++i) values[w + i] = static_cast<float>(rng.uniform(-bound, bound));
        for (std::size_t o = 0; o < out; ++o) values[b + o] = 0.0f;
    }
};

// Outputs are processed in fixed-width tiles so the accumulators stay in registers. Each
// output still sums its terms in ascending input order, exactly as a plain loop would.
inline constexpr std::size_t kDenseTile = 32;

template <class T>
void dense_forward(const DenseLayer& l, std::span<const T> p, const Matrix<T>& x, Matrix<T>& y) {
    y.resize(x.rows, l.out);
    const T* W = p.data() + l.w;
    const T* B = p.data() + l.b;
    for (std::size_t r = 0; r < x.rows; ++r) {
        const T* xr = x.row(r);
        T* yr = y.row(r);
        std::size_t o0 = 0;
        for (; o0 + kDenseTile <= l.out; o0 += kDenseTile) {
            T acc[kDenseTile];
            for (std::size_t o = 0; o < kDenseTile; ++o) acc[o] = B[o0 + o];
            for (std::size_t k = 0; k < l.in; ++k) {
                const T xv = xr[k];
                if (xv == T(0)) continue;
                const T* wk = W + k * l.out + o0;
                for (std::size_t o = 0; o < kDenseTile; ++o) acc[o] += xv * wk[o];
            }
            for (std::size_t o = 0; o < kDenseTile; ++o) yr[o0 + o] = acc[o];
        }
        if (o0 == l.out) continue;
        for (std::size_t o = o0; o < l.out; ++o) yr[o] = B[o];
        for (std::size_t k = 0; k < l.in; ++k) {
            const T xv = xr[k];
            if (xv == T(0)) continue;
            const T* wk = W + k * l.out;
            for (std::size_t o = o0; o < l.out; ++o) yr[o] += xv * wk[o];
        }
    }
}

/// Accumulates dW, db into `grad`; writes dx when requested.
template <class T>
void dense_backward(const DenseLayer& l, std::span<const T> p, const Matrix<T>& x, const Matrix<T>& dy,
                    std::span<T> grad, Matrix<T>* dx) {
    T* dW = grad.data() + l.w;
    T* dB = grad.data() + l.b;
    for (std::size_t r = 0; r < x.rows; ++r) {
        const T* dyr = dy.row(r);
        for (std::size_t o = 0; o < l.out; ++o) dB[o] += dyr[o];
    }
    // dW[k] gathers rows in ascending order
    for (std::size_t k = 0; k < l.in; ++k) {
        T* dwk = dW + k * l.out;
        std::size_t o0 = 0;
        for (; o0 + kDenseTile <= l.out; o0 += kDenseTile) {
            T acc[kDenseTile];
            for (std::size_t o = 0; o < kDenseTile; ++o) acc[o] = dwk[o0 + o];
            for (std::size_t r = 0; r < x.rows; ++r) {
                const T xv = x(r, k);
                if (xv == T(0)) continue;
                const T* dyr = dy.row(r) + o0;
                for (std::size_t o = 0; o < kDenseTile; ++o) acc[o] += xv * dyr[o];
            }
            for (std::size_t o = 0; o < kDenseTile; ++o) dwk[o0 + o] = acc[o];
        }
        if (o0 == l.out) continue;
        for (std::size_t r = 0; r < x.rows; ++r) {
            const T xv = x(r, k);
            if (xv == T(0)) continue;
            const T* dyr = dy.row(r);
            for (std::size_t o = o0; o < l.out; ++o) dwk[o] += xv * dyr[o];
        }
    }
    if (dx == nullptr) return;
    // transpose once so the input gradient is also an axpy
    const T* W = p.data() + l.w;
    std::vector<T> wt(l.in * l.out);
    for (std::size_t k = 0; k < l.in; ++k)
        for (std::size_t o = 0; o < l.out; ++o) wt[o * l.in + k] = W[k * l.out + o];
    dx->resize(x.rows, l.in);
    for (std::size_t r = 0; r < x.rows; ++r) {
        const T* dyr = dy.row(r);
        T* dxr = dx->row(r);
        std::size_t k0 = 0;
        for (; k0 + kDenseTile <= l.in; k0 += kDenseTile) {
            T acc[kDenseTile];
            for (std::size_t k = 0; k < kDenseTile; ++k) acc[k] = dxr[k0 + k];
            for (std::size_t o = 0; o < l.out; ++o) {
                const T g = dyr[o];
                if (g == T(0)) continue;
                const T* wo = wt.data() + o * l.in + k0;
                for (std::size_t k = 0; k < kDenseTile; ++k) acc[k] += g * wo[k];
            }
            for (std::size_t k = 0; k < kDenseTile; ++k) dxr[k0 + k] = acc[k];
        }
        if (k0 == l.in) continue;
        for (std::size_t o = 0; o < l.out; ++o) {
            const T g = dyr[o];
            if (g == T(0)) continue;
            const T* wo = wt.data() + o * l.in;
            for (std::size_t k = k0; k < l.in; ++k) dxr[k] += g * wo[k];
        }
    }
}

template <class T>
void relu_inplace(Matrix<T>& m) {
    for (T& v : m.data) v = v > T(0) ? v : T(0);
}

/// Masks `grad` by the ReLU output `act` (subgradient 0 at 0).
template <class T>
void relu_backward_inplace(const Matrix<T>& act, Matrix<T>& grad) {
    for (std::size_t i = 0; i < grad.data.size(); ++i) {
        if (!(act.data[i] > T(0))) grad.data[i] = T(0);
    }
}

}  // namespace pvd
