#pragma once

// Per-sample tensor kernels with hand-written backward passes. Every kernel is
// templated on the storage scalar; reductions accumulate in double.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace bridgefov::nn {

/// Storage for every buffer an Eigen kernel writes into. Eigen peels a scalar
/// prologue up to the first aligned element, so a fixed base alignment keeps
/// float results independent of where the allocator placed the buffer.
template <class T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

/// Channel-major (C, H, W) tensor of one sample.
template <class T>
struct Tensor {
    int c = 0, h = 0, w = 0;
    AlignedVector<T> v;

    Tensor() = default;
    Tensor(int channels, int height, int width, T fill = T(0))
        : c(channels), h(height), w(width), v(static_cast<std::size_t>(channels) * height * width, fill) {}

    [[nodiscard]] std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    [[nodiscard]] std::size_t size() const { return v.size(); }
    T* channel(int i) { return v.data() + i * plane(); }
    [[nodiscard]] const T* channel(int i) const { return v.data() + i * plane(); }
    [[nodiscard]] bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }
};

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

template <class T>
inline T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}
template <class T>
inline T silu(T x) {
    return x * sigmoid(x);
}
template <class T>
inline T silu_grad(T x) {
    const T s = sigmoid(x);
    return s * (T(1) + x * (T(1) - s));
}

/// out[i] = silu(x[i]) over a contiguous range (vectorized).
template <class T>
void silu_array(const T* x, T* out, std::size_t n) {
    using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
    Eigen::Map<const Arr> X(x, static_cast<Eigen::Index>(n));
    Eigen::Map<Arr> Y(out, static_cast<Eigen::Index>(n));
    Y = X / (T(1) + (-X).exp());
}

/// d[i] *= silu'(x[i]) over a contiguous range (vectorized).
template <class T>
void silu_grad_mul(const T* x, T* d, std::size_t n) {
    using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
    Eigen::Map<const Arr> X(x, static_cast<Eigen::Index>(n));
    Eigen::Map<Arr> D(d, static_cast<Eigen::Index>(n));
    const Arr s = T(1) / (T(1) + (-X).exp());
    D *= s * (T(1) + X * (T(1) - s));
}

/// Same-padding im2col: row (ci, ky, kx), column (y, x).
template <class T>
void im2col(const Tensor<T>& in, int k, AlignedVector<T>& col) {
    const int pad = k / 2;
    const int H = in.h, W = in.w;
    col.assign(static_cast<std::size_t>(in.c) * k * k * H * W, T(0));
    std::size_t row = 0;
    for (int ci = 0; ci < in.c; ++ci) {
        const T* src = in.channel(ci);
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx, ++row) {
                T* dst = col.data() + row * H * W;
                const int dy = ky - pad, dx = kx - pad;
                const int x_lo = std::max(0, -dx), x_hi = std::min(W, W - dx);
                for (int y = 0; y < H; ++y) {
                    const int sy = y + dy;
                    if (sy < 0 || sy >= H) continue;
                    const T* s = src + sy * W + dx;
                    T* d = dst + y * W;
                    for (int x = x_lo; x < x_hi; ++x) d[x] = s[x];
                }
            }
    }
}

/// Adjoint of im2col, accumulating into `out`.
template <class T>
void col2im(const AlignedVector<T>& col, int k, Tensor<T>& out) {
    const int pad = k / 2;
    const int H = out.h, W = out.w;
    std::size_t row = 0;
    for (int ci = 0; ci < out.c; ++ci) {
        T* dst = out.channel(ci);
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx, ++row) {
                const T* src = col.data() + row * H * W;
                const int dy = ky - pad, dx = kx - pad;
                const int x_lo = std::max(0, -dx), x_hi = std::min(W, W - dx);
                for (int y = 0; y < H; ++y) {
                    const int sy = y + dy;
                    if (sy < 0 || sy >= H) continue;
                    T* d = dst + sy * W + dx;
                    const T* s = src + y * W;
                    for (int x = x_lo; x < x_hi; ++x) d[x] += s[x];
                }
            }
    }
}

/// Convolution weights [cout][cin][k][k] followed by bias [cout].
struct ConvShape {
    int cin = 0, cout = 0, k = 3;
    std::size_t weight = 0, bias = 0;  // offsets into the flat parameter vector
    [[nodiscard]] std::size_t count() const { return static_cast<std::size_t>(cout) * cin * k * k + cout; }
};

/// Per-thread scratch buffers for the im2col matrices, reused across calls so
/// that large transient allocations do not hit the page-fault path each time.
template <class T>
struct ConvWorkspace {
    AlignedVector<T> col, dcol, dw;
    static ConvWorkspace& local() {
        thread_local ConvWorkspace ws;
        return ws;
    }
};

template <class T>
void conv_forward(const ConvShape& s, const T* params, const Tensor<T>& in, Tensor<T>& out) {
    if (in.c != s.cin) throw std::invalid_argument("conv: input channel mismatch");
    auto& col = ConvWorkspace<T>::local().col;
    im2col(in, s.k, col);
    out = Tensor<T>(s.cout, in.h, in.w);
    const int K = s.cin * s.k * s.k;
    const auto n = static_cast<Eigen::Index>(in.plane());
    CMapMat<T> W(params + s.weight, s.cout, K);
    CMapMat<T> X(col.data(), K, n);
    MapMat<T> Y(out.v.data(), s.cout, n);
    Y.noalias() = W * X;
    for (int co = 0; co < s.cout; ++co) Y.row(co).array() += params[s.bias + co];
}

/// Accumulates weight/bias gradients given the forward input; writes the input
/// gradient into dIn (skipped when dIn is null).
template <class T>
void conv_backward(const ConvShape& s, const T* params, T* grads, const Tensor<T>& in, const Tensor<T>& dOut,
                   Tensor<T>* dIn) {
    auto& ws = ConvWorkspace<T>::local();
    im2col(in, s.k, ws.col);
    const int K = s.cin * s.k * s.k;
    const auto n = static_cast<Eigen::Index>(dOut.plane());
    CMapMat<T> dY(dOut.v.data(), s.cout, n);
    CMapMat<T> X(ws.col.data(), K, n);
    // the flat gradient vector has arbitrary offsets, so the product lands in aligned scratch first
    ws.dw.resize(static_cast<std::size_t>(s.cout) * K);
    MapMat<T> dW(ws.dw.data(), s.cout, K);
    dW.noalias() = dY * X.transpose();
    T* gw = grads + s.weight;
    for (std::size_t i = 0; i < ws.dw.size(); ++i) gw[i] += ws.dw[i];
    for (int co = 0; co < s.cout; ++co) {
        double acc = 0.0;
        const T* r = dOut.channel(co);
        for (Eigen::Index i = 0; i < n; ++i) acc += r[i];
        grads[s.bias + co] += static_cast<T>(acc);
    }
    if (!dIn) return;
    ws.dcol.resize(static_cast<std::size_t>(K) * n);
    CMapMat<T> W(params + s.weight, s.cout, K);
    MapMat<T> dX(ws.dcol.data(), K, n);
    dX.noalias() = W.transpose() * dY;
    *dIn = Tensor<T>(s.cin, dOut.h, dOut.w);
    col2im(ws.dcol, s.k, *dIn);
}

/// Group normalization over (channels-in-group, H, W) with per-channel affine.
struct NormShape {
    int channels = 0, groups = 1;
    std::size_t gamma = 0, beta = 0;
    [[nodiscard]] std::size_t count() const { return 2 * static_cast<std::size_t>(channels); }
};

inline constexpr double kNormEps = 1e-5;

template <class T>
void norm_forward(const NormShape& s, const T* params, const Tensor<T>& in, Tensor<T>& out, Tensor<T>& xhat,
                  std::vector<double>& rstd) {
    const int cpg = s.channels / s.groups;
    const std::size_t plane = in.plane();
    const std::size_t n = cpg * plane;
    out = Tensor<T>(in.c, in.h, in.w);
    xhat = Tensor<T>(in.c, in.h, in.w);
    rstd.assign(s.groups, 0.0);
    for (int g = 0; g < s.groups; ++g) {
        const T* x = in.channel(g * cpg);
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += x[i];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = x[i] - mean;
            var += d * d;
        }
        var /= static_cast<double>(n);
        const double r = 1.0 / std::sqrt(var + kNormEps);
        rstd[g] = r;
        T* xh = xhat.channel(g * cpg);
        for (std::size_t i = 0; i < n; ++i) xh[i] = static_cast<T>((x[i] - mean) * r);
        for (int c = 0; c < cpg; ++c) {
            const int ch = g * cpg + c;
            const T ga = params[s.gamma + ch], be = params[s.beta + ch];
            const T* xc = xhat.channel(ch);
            T* y = out.channel(ch);
            for (std::size_t i = 0; i < plane; ++i) y[i] = ga * xc[i] + be;
        }
    }
}

/// In-place: dData holds the output gradient on entry and the input gradient on exit.
template <class T>
void norm_backward(const NormShape& s, const T* params, T* grads, const Tensor<T>& xhat, const std::vector<double>& rstd,
                   Tensor<T>& dData) {
    const int cpg = s.channels / s.groups;
    const std::size_t plane = xhat.plane();
    const double n = static_cast<double>(cpg * plane);
    for (int g = 0; g < s.groups; ++g) {
        double s1 = 0.0, s2 = 0.0;
        for (int c = 0; c < cpg; ++c) {
            const int ch = g * cpg + c;
            const T ga = params[s.gamma + ch];
            const T* xh = xhat.channel(ch);
            T* d = dData.channel(ch);
            double dg = 0.0, db = 0.0;
            for (std::size_t i = 0; i < plane; ++i) {
                dg += static_cast<double>(d[i]) * xh[i];
                db += d[i];
                d[i] *= ga;  // now d(xhat)
                s1 += d[i];
                s2 += static_cast<double>(d[i]) * xh[i];
            }
            grads[s.gamma + ch] += static_cast<T>(dg);
            grads[s.beta + ch] += static_cast<T>(db);
        }
        const double r = rstd[g];
        for (int c = 0; c < cpg; ++c) {
            const int ch = g * cpg + c;
            const T* xh = xhat.channel(ch);
            T* d = dData.channel(ch);
            for (std::size_t i = 0; i < plane; ++i) d[i] = static_cast<T>(r / n * (n * d[i] - s1 - xh[i] * s2));
        }
    }
}

/// Dense layer y = W x + b with W [out][in].
struct LinearShape {
    int in = 0, out = 0;
    std::size_t weight = 0, bias = 0;
    [[nodiscard]] std::size_t count() const { return static_cast<std::size_t>(out) * in + out; }
};

template <class T>
void linear_forward(const LinearShape& s, const T* params, const std::vector<T>& x, std::vector<T>& y) {
    y.assign(s.out, T(0));
    for (int o = 0; o < s.out; ++o) {
        double acc = params[s.bias + o];
        const T* w = params + s.weight + static_cast<std::size_t>(o) * s.in;
        for (int i = 0; i < s.in; ++i) acc += static_cast<double>(w[i]) * x[i];
        y[o] = static_cast<T>(acc);
    }
}

/// Accumulates parameter gradients and adds W^T dy into dx.
template <class T>
void linear_backward(const LinearShape& s, const T* params, T* grads, const std::vector<T>& x, const std::vector<T>& dy,
                     std::vector<T>& dx) {
    for (int o = 0; o < s.out; ++o) {
        grads[s.bias + o] += dy[o];
        const T* w = params + s.weight + static_cast<std::size_t>(o) * s.in;
        T* gw = grads + s.weight + static_cast<std::size_t>(o) * s.in;
        for (int i = 0; i < s.in; ++i) {
            gw[i] += dy[o] * x[i];
            dx[i] += w[i] * dy[o];
        }
    }
}

template <class T>
Tensor<T> avg_pool2(const Tensor<T>& in) {
    if (in.h % 2 || in.w % 2) throw std::invalid_argument("avg_pool2: spatial size must be even");
    Tensor<T> out(in.c, in.h / 2, in.w / 2);
    for (int c = 0; c < in.c; ++c) {
        const T* s = in.channel(c);
        T* d = out.channel(c);
        for (int y = 0; y < out.h; ++y)
            for (int x = 0; x < out.w; ++x) {
                const T* p = s + 2 * y * in.w + 2 * x;
                d[y * out.w + x] = T(0.25) * (p[0] + p[1] + p[in.w] + p[in.w + 1]);
            }
    }
    return out;
}

template <class T>
Tensor<T> avg_pool2_backward(const Tensor<T>& dOut) {
    Tensor<T> dIn(dOut.c, dOut.h * 2, dOut.w * 2);
    for (int c = 0; c < dOut.c; ++c) {
        const T* s = dOut.channel(c);
        T* d = dIn.channel(c);
        for (int y = 0; y < dIn.h; ++y)
            for (int x = 0; x < dIn.w; ++x) d[y * dIn.w + x] = T(0.25) * s[(y / 2) * dOut.w + x / 2];
    }
    return dIn;
}

template <class T>
Tensor<T> upsample2(const Tensor<T>& in) {
    Tensor<T> out(in.c, in.h * 2, in.w * 2);
    for (int c = 0; c < in.c; ++c) {
        const T* s = in.channel(c);
        T* d = out.channel(c);
        for (int y = 0; y < out.h; ++y)
            for (int x = 0; x < out.w; ++x) d[y * out.w + x] = s[(y / 2) * in.w + x / 2];
    }
    return out;
}

template <class T>
Tensor<T> upsample2_backward(const Tensor<T>& dOut) {
    Tensor<T> dIn(dOut.c, dOut.h / 2, dOut.w / 2);
    for (int c = 0; c < dOut.c; ++c) {
        const T* s = dOut.channel(c);
        T* d = dIn.channel(c);
        for (int y = 0; y < dOut.h; ++y)
            for (int x = 0; x < dOut.w; ++x) d[(y / 2) * dIn.w + x / 2] += s[y * dOut.w + x];
    }
    return dIn;
}

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.h != b.h || a.w != b.w) throw std::invalid_argument("concat: spatial mismatch");
    Tensor<T> out(a.c + b.c, a.h, a.w);
    std::copy(a.v.begin(), a.v.end(), out.v.begin());
    std::copy(b.v.begin(), b.v.end(), out.v.begin() + static_cast<std::ptrdiff_t>(a.size()));
    return out;
}

/// Splits a gradient w.r.t. a concatenation into its first `ca` channels and the rest.
template <class T>
void split_channels(const Tensor<T>& d, int ca, Tensor<T>& da, Tensor<T>& db) {
    da = Tensor<T>(ca, d.h, d.w);
    db = Tensor<T>(d.c - ca, d.h, d.w);
    std::copy(d.v.begin(), d.v.begin() + static_cast<std::ptrdiff_t>(da.size()), da.v.begin());
    std::copy(d.v.begin() + static_cast<std::ptrdiff_t>(da.size()), d.v.end(), db.v.begin());
}

}  // namespace bridgefov::nn
