#pragma once

// Time-conditioned encoder-decoder eps(x, k) with skip connections.
//
//   in_conv -> [level 0 blocks] -> pool -> [level 1 blocks] -> ... -> [level L-1 blocks]
//            -> up + concat(skip L-2) -> [blocks] -> ... -> up + concat(skip 0) -> [blocks] -> out_conv
//
// A block is conv -> group norm -> + time bias -> SiLU. The time bias is a
// per-block linear projection of a shared SiLU(W e(k) + b) hidden vector,
// where e(k) is a sinusoidal embedding of the integer timestep.

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "bridgefov/image.hpp"
#include "bridgefov/nn.hpp"
#include "bridgefov/rng.hpp"

namespace bridgefov {

struct ArchDescriptor {
    int levels = 3;
    int base_channels = 16;
    int kernel = 3;
    int in_channels = 1;
    int out_channels = 1;
    int time_dim = 32;
    int groups = 4;
    int blocks_per_level = 2;
    bool group_norm = true;
    double time_base = 10000.0;

    [[nodiscard]] int channels(int level) const { return base_channels << level; }
    [[nodiscard]] int time_hidden() const { return 4 * base_channels; }

    void validate() const {
        if (levels < 1 || base_channels < 1 || kernel < 1 || kernel % 2 == 0 || in_channels < 1 || out_channels < 1 ||
            blocks_per_level < 1)
            throw std::invalid_argument("arch: sizes must be positive and kernel odd");
        if (time_dim < 2 || time_dim % 2) throw std::invalid_argument("arch: time_dim must be even");
        if (group_norm && (groups < 1 || base_channels % groups))
            throw std::invalid_argument("arch: channels must be divisible by groups");
        if (!(time_base > 1.0)) throw std::invalid_argument("arch: time_base must exceed 1");
    }

    friend bool operator==(const ArchDescriptor&, const ArchDescriptor&) = default;
};

/// Sinusoidal embedding [sin(k w_i), cos(k w_i)], w_i = base^(-i / (dim/2)).
struct TimeEmbedding {
    int dimension = 32;
    double base = 10000.0;

    template <class T>
    [[nodiscard]] std::vector<T> operator()(int k) const {
        if (dimension % 2) throw std::invalid_argument("time embedding dimension must be even");
        const int half = dimension / 2;
        std::vector<T> e(dimension);
        for (int i = 0; i < half; ++i) {
            const double w = std::exp(-std::log(base) * i / half);
            e[i] = static_cast<T>(std::sin(k * w));
            e[half + i] = static_cast<T>(std::cos(k * w));
        }
        return e;
    }
};

/// Offsets of every parameter tensor inside the flat parameter vector.
struct NetworkLayout {
    struct Block {
        nn::ConvShape conv;
        nn::NormShape norm;
        nn::LinearShape time;
        bool has_norm = true;
    };

    nn::LinearShape time_mlp;
    nn::ConvShape in_conv;
    std::vector<std::vector<Block>> encoder;  // per level
    std::vector<std::vector<Block>> decoder;  // per level 0..L-2
    nn::ConvShape out_conv;
    std::size_t total = 0;

    explicit NetworkLayout(const ArchDescriptor& a) {
        a.validate();
        const int hid = a.time_hidden();
        auto linear = [&](int in, int out) {
            nn::LinearShape s{in, out, total, total + static_cast<std::size_t>(in) * out};
            total += s.count();
            return s;
        };
        auto conv = [&](int cin, int cout) {
            nn::ConvShape s{cin, cout, a.kernel, total, total + static_cast<std::size_t>(cout) * cin * a.kernel * a.kernel};
            total += s.count();
            return s;
        };
        auto block = [&](int cin, int cout) {
            Block b;
            b.conv = conv(cin, cout);
            b.has_norm = a.group_norm;
            if (a.group_norm) {
                b.norm = nn::NormShape{cout, a.groups, total, total + static_cast<std::size_t>(cout)};
                total += b.norm.count();
            }
            b.time = linear(hid, cout);
            return b;
        };

        time_mlp = linear(a.time_dim, hid);
        in_conv = conv(a.in_channels, a.channels(0));
        encoder.resize(a.levels);
        for (int l = 0; l < a.levels; ++l) {
            int cin = l == 0 ? a.channels(0) : a.channels(l - 1);
            for (int b = 0; b < a.blocks_per_level; ++b) {
                encoder[l].push_back(block(cin, a.channels(l)));
                cin = a.channels(l);
            }
        }
        decoder.resize(a.levels - 1);
        for (int l = a.levels - 2; l >= 0; --l) {
            int cin = a.channels(l + 1) + a.channels(l);
            for (int b = 0; b < a.blocks_per_level; ++b) {
                decoder[l].push_back(block(cin, a.channels(l)));
                cin = a.channels(l);
            }
        }
        out_conv = conv(a.channels(0), a.out_channels);
    }
};

template <class T>
struct DenoiserParams {
    ArchDescriptor arch;
    std::vector<T> values;

    [[nodiscard]] std::size_t size() const { return values.size(); }
};

/// Fan-in scaled normal init; output conv zeroed so the initial network is eps = 0.
template <class T = float>
DenoiserParams<T> init_params(const ArchDescriptor& arch, std::uint64_t seed) {
    const NetworkLayout layout(arch);
    DenoiserParams<T> p{arch, std::vector<T>(layout.total, T(0))};
    CounterRng rng(derive_seed(seed, 0x696e6974ull));
    auto fill = [&](std::size_t off, std::size_t n, double sd) {
        for (std::size_t i = 0; i < n; ++i) p.values[off + i] = static_cast<T>(sd * rng.normal());
    };
    auto conv = [&](const nn::ConvShape& s) {
        const int fan_in = s.cin * s.k * s.k;
        fill(s.weight, static_cast<std::size_t>(s.cout) * fan_in, 1.0 / std::sqrt(static_cast<double>(fan_in)));
    };
    auto linear = [&](const nn::LinearShape& s) {
        fill(s.weight, static_cast<std::size_t>(s.out) * s.in, 1.0 / std::sqrt(static_cast<double>(s.in)));
    };
    auto block = [&](const NetworkLayout::Block& b) {
        conv(b.conv);
        if (b.has_norm)
            for (int c = 0; c < b.norm.channels; ++c) p.values[b.norm.gamma + c] = T(1);
        linear(b.time);
    };
    linear(layout.time_mlp);
    conv(layout.in_conv);
    for (const auto& level : layout.encoder)
        for (const auto& b : level) block(b);
    for (const auto& level : layout.decoder)
        for (const auto& b : level) block(b);
    return p;
}

/// Activations retained by a forward pass for the backward pass.
template <class T>
struct ForwardCache {
    struct Block {
        nn::Tensor<T> in;    // block input
        nn::Tensor<T> xhat;  // normalized conv output (or raw conv output without norm)
        std::vector<double> rstd;
        nn::Tensor<T> pre;  // input of the activation
    };

    std::vector<T> embedding, hidden_pre, hidden;
    nn::Tensor<T> in_conv_input, out_conv_input;
    std::vector<std::vector<Block>> encoder, decoder;
    std::vector<int> skip_channels;
};

namespace detail {

template <class T>
nn::Tensor<T> block_forward(const NetworkLayout::Block& b, const T* params, const std::vector<T>& hidden,
                            const nn::Tensor<T>& in, typename ForwardCache<T>::Block* cache) {
    typename ForwardCache<T>::Block local;
    auto& c = cache ? *cache : local;
    nn::Tensor<T> conv_out;
    nn::conv_forward(b.conv, params, in, conv_out);
    if (cache) c.in = in;
    nn::Tensor<T> pre;
    if (b.has_norm) {
        nn::norm_forward(b.norm, params, conv_out, pre, c.xhat, c.rstd);
    } else {
        pre = conv_out;
    }
    std::vector<T> bias;
    nn::linear_forward(b.time, params, hidden, bias);
    nn::Tensor<T> out(pre.c, pre.h, pre.w);
    for (int ch = 0; ch < pre.c; ++ch) {
        T* p = pre.channel(ch);
        for (std::size_t i = 0; i < pre.plane(); ++i) p[i] += bias[ch];
    }
    nn::silu_array(pre.v.data(), out.v.data(), pre.size());
    if (cache) c.pre = std::move(pre);
    return out;
}

/// Returns the input gradient; accumulates parameter and hidden gradients.
template <class T>
nn::Tensor<T> block_backward(const NetworkLayout::Block& b, const T* params, T* grads, const std::vector<T>& hidden,
                             std::vector<T>& d_hidden, typename ForwardCache<T>::Block& c, nn::Tensor<T> d_out) {
    std::vector<T> d_bias(d_out.c, T(0));
    nn::silu_grad_mul(c.pre.v.data(), d_out.v.data(), d_out.size());
    for (int ch = 0; ch < d_out.c; ++ch) {
        const T* d = d_out.channel(ch);
        double acc = 0.0;
        for (std::size_t i = 0; i < d_out.plane(); ++i) acc += d[i];
        d_bias[ch] = static_cast<T>(acc);
    }
    nn::linear_backward(b.time, params, grads, hidden, d_bias, d_hidden);
    if (b.has_norm) nn::norm_backward(b.norm, params, grads, c.xhat, c.rstd, d_out);
    nn::Tensor<T> d_in;
    nn::conv_backward(b.conv, params, grads, c.in, d_out, &d_in);
    c = {};
    return d_in;
}

}  // namespace detail

/// Single-sample forward pass. `cache` may be null for inference.
template <class T>
nn::Tensor<T> forward(const DenoiserParams<T>& params, const nn::Tensor<T>& x, int k, ForwardCache<T>* cache = nullptr) {
    const ArchDescriptor& a = params.arch;
    if (x.c != a.in_channels) throw std::invalid_argument("denoiser forward: input channel count mismatch");
    const int scale = 1 << (a.levels - 1);
    if (x.h % scale || x.w % scale)
        throw std::invalid_argument("denoiser forward: image size must be divisible by 2^(levels-1)");
    const NetworkLayout layout(a);
    const T* p = params.values.data();
    ForwardCache<T> local;
    auto& c = cache ? *cache : local;

    c.embedding = TimeEmbedding{a.time_dim, a.time_base}.template operator()<T>(k);
    nn::linear_forward(layout.time_mlp, p, c.embedding, c.hidden_pre);
    c.hidden.resize(c.hidden_pre.size());
    for (std::size_t i = 0; i < c.hidden.size(); ++i) c.hidden[i] = nn::silu(c.hidden_pre[i]);

    nn::Tensor<T> h;
    nn::conv_forward(layout.in_conv, p, x, h);
    if (cache) c.in_conv_input = x;
    c.encoder.assign(a.levels, {});
    c.decoder.assign(a.levels - 1, {});
    std::vector<nn::Tensor<T>> skips(a.levels - 1);
    for (int l = 0; l < a.levels; ++l) {
        if (l > 0) h = nn::avg_pool2(h);
        c.encoder[l].resize(layout.encoder[l].size());
        for (std::size_t b = 0; b < layout.encoder[l].size(); ++b)
            h = detail::block_forward(layout.encoder[l][b], p, c.hidden, h, cache ? &c.encoder[l][b] : nullptr);
        if (l < a.levels - 1) skips[l] = h;
    }
    c.skip_channels.assign(a.levels - 1, 0);
    for (int l = a.levels - 2; l >= 0; --l) {
        nn::Tensor<T> up = nn::upsample2(h);
        c.skip_channels[l] = up.c;
        h = nn::concat_channels(up, skips[l]);
        c.decoder[l].resize(layout.decoder[l].size());
        for (std::size_t b = 0; b < layout.decoder[l].size(); ++b)
            h = detail::block_forward(layout.decoder[l][b], p, c.hidden, h, cache ? &c.decoder[l][b] : nullptr);
    }
    nn::Tensor<T> out;
    nn::conv_forward(layout.out_conv, p, h, out);
    if (cache) c.out_conv_input = h;
    return out;
}

/// Backward pass through the activations stored by forward(); accumulates into grads.
template <class T>
void backward(const DenoiserParams<T>& params, ForwardCache<T>& c, const nn::Tensor<T>& d_out, std::vector<T>& grads) {
    const ArchDescriptor& a = params.arch;
    const NetworkLayout layout(a);
    const T* p = params.values.data();
    T* g = grads.data();
    std::vector<T> d_hidden(c.hidden.size(), T(0));

    nn::Tensor<T> d;
    nn::conv_backward(layout.out_conv, p, g, c.out_conv_input, d_out, &d);
    std::vector<nn::Tensor<T>> d_skips(a.levels - 1);
    for (int l = 0; l <= a.levels - 2; ++l) {
        for (int b = static_cast<int>(layout.decoder[l].size()) - 1; b >= 0; --b)
            d = detail::block_backward(layout.decoder[l][b], p, g, c.hidden, d_hidden, c.decoder[l][b], std::move(d));
        nn::Tensor<T> d_up;
        nn::split_channels(d, c.skip_channels[l], d_up, d_skips[l]);
        d = nn::upsample2_backward(d_up);
    }
    for (int l = a.levels - 1; l >= 0; --l) {
        if (l < a.levels - 1)
            for (std::size_t i = 0; i < d.size(); ++i) d.v[i] += d_skips[l].v[i];
        for (int b = static_cast<int>(layout.encoder[l].size()) - 1; b >= 0; --b)
            d = detail::block_backward(layout.encoder[l][b], p, g, c.hidden, d_hidden, c.encoder[l][b], std::move(d));
        if (l > 0) d = nn::avg_pool2_backward(d);
    }
    nn::conv_backward(layout.in_conv, p, g, c.in_conv_input, d, static_cast<nn::Tensor<T>*>(nullptr));

    for (std::size_t i = 0; i < d_hidden.size(); ++i) d_hidden[i] *= nn::silu_grad(c.hidden_pre[i]);
    std::vector<T> d_embedding(c.embedding.size(), T(0));
    nn::linear_backward(layout.time_mlp, p, g, c.embedding, d_hidden, d_embedding);
}

/// Stacks images (one per channel) into a network input.
template <class T>
nn::Tensor<T> to_tensor(std::span<const Image* const> channels) {
    if (channels.empty()) throw std::invalid_argument("to_tensor: no channels");
    const Grid& g = channels[0]->grid;
    nn::Tensor<T> t(static_cast<int>(channels.size()), g.height, g.width);
    for (std::size_t c = 0; c < channels.size(); ++c) {
        if (!(channels[c]->grid == g)) throw std::invalid_argument("to_tensor: channel grids differ");
        for (std::size_t i = 0; i < g.size(); ++i) t.v[c * g.size() + i] = static_cast<T>(channels[c]->values[i]);
    }
    return t;
}

template <class T>
nn::Tensor<T> to_tensor(const Image& img) {
    const Image* one[] = {&img};
    return to_tensor<T>(std::span<const Image* const>(one));
}

template <class T>
Image to_image(const nn::Tensor<T>& t, const Grid& grid, int channel = 0) {
    Image img(grid);
    const T* src = t.channel(channel);
    for (std::size_t i = 0; i < img.size(); ++i) img.values[i] = static_cast<double>(src[i]);
    return img;
}

/// Batch forward; samples are independent.
template <class T>
std::vector<Image> forward(const DenoiserParams<T>& params, std::span<const Image> x, std::span<const int> k) {
    if (x.size() != k.size()) throw std::invalid_argument("denoiser forward: batch size mismatch");
    std::vector<Image> out;
    out.reserve(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out.push_back(to_image(forward(params, to_tensor<T>(x[i]), k[i]), x[i].grid));
    return out;
}

/// Bridge eps estimator: eps(x_k, k).
template <class T>
auto bridge_eps(const DenoiserParams<T>& params) {
    return [&params](const Image& x, int k) { return to_image(forward(params, to_tensor<T>(x), k), x.grid); };
}

/// Conditional eps estimator for the baseline: eps([x_t, condition], t).
template <class T>
auto conditional_eps(const DenoiserParams<T>& params) {
    return [&params](const Image& x, const Image& cond, int t) {
        const Image* ch[] = {&x, &cond};
        return to_image(forward(params, to_tensor<T>(std::span<const Image* const>(ch)), t), x.grid);
    };
}

}  // namespace bridgefov
