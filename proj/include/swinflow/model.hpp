// Copyright (c) 2026 swinflow contributors
// SPDX-License-Identifier: Apache-2.0
//
// Model configuration and parameter containers for the pixel-level
// shifted-window transformer. Scalar-templated: double for oracles, float for
// runs. The parameter-count formula is exposed and must equal the allocated
// count exactly.

#pragma once

#include "swinflow/common.hpp"
#include "swinflow/rng.hpp"
#include "swinflow/window.hpp"

#include <functional>
#include <string>
#include <vector>

namespace swinflow {

struct ModelConfig {
    int hidden_dim = 0;        // h
    int n_heads = 0;
    int ffn_dim = 0;           // SwiGLU intermediate width
    int n_layers = 0;          // Swin layers (one pipeline stage each)
    int blocks_per_layer = 1;  // transformer blocks inside one Swin layer
    int window_px = 0;
    int patch_size = 1;        // fixed at pixel level
    int in_channels = 0;
    int out_channels = 0;
    int time_dim = 0;          // 0 defaults to hidden_dim

    int n_blocks() const { return n_layers * blocks_per_layer; }
    int head_dim() const { return hidden_dim / n_heads; }
    int tdim() const { return time_dim > 0 ? time_dim : hidden_dim; }

    void validate() const {
        require(hidden_dim > 0 && n_heads > 0 && ffn_dim > 0 && n_layers > 0, "model: dims must be positive");
        require(blocks_per_layer >= 1, "model: blocks_per_layer must be >= 1");
        require(patch_size == 1, "model: only 1x1 patch size is supported");
        require(hidden_dim % n_heads == 0, "model: hidden_dim must divide by n_heads");
        require(head_dim() % 4 == 0, "model: head_dim must be divisible by 4 (axial rotary pairs)");
        require(in_channels > 0 && out_channels > 0, "model: channel counts must be positive");
        require(in_channels % 2 == 0, "model: in_channels must be even (positional encoding split)");
        require(window_px > 0, "model: window size must be positive");
    }

    void validate_grid(int grid_h, int grid_w) const {
        validate();
        require(grid_h % window_px == 0 && grid_w % window_px == 0,
                "model: grid not divisible by window size");
    }

    WindowLayout layout_for_block(int grid_h, int grid_w, int block) const {
        WindowLayout lay;
        lay.grid_h = grid_h;
        lay.grid_w = grid_w;
        lay.window_px = window_px;
        lay.shift = shift_for_block(block, window_px);
        return lay;
    }
};

template <class T>
struct BlockParams {
    MatX<T> w_qkv;   // 3h x h
    MatX<T> w_out;   // h x h
    VecX<T> g_attn;  // h
    VecX<T> g_ffn;   // h
    MatX<T> w_gate;  // ffn x h
    MatX<T> w_up;    // ffn x h
    MatX<T> w_down;  // h x ffn
    MatX<T> w_ada;   // 6h x t_dim -> (scale, shift, gate) for attn and ffn branches
    VecX<T> b_ada;   // 6h
};

template <class T>
struct Parameters {
    ModelConfig cfg;
    MatX<T> w_encode;  // h x C_in
    VecX<T> b_encode;  // h
    std::vector<BlockParams<T>> blocks;
    MatX<T> w_time;  // t_dim x t_dim (shared diffusion-time projection)
    VecX<T> b_time;  // t_dim
    VecX<T> g_decode;  // h
    MatX<T> w_decode;  // C_out x h
    VecX<T> b_decode;  // C_out

    static Parameters zeros(const ModelConfig& cfg) {
        cfg.validate();
        const int h = cfg.hidden_dim, f = cfg.ffn_dim, td = cfg.tdim();
        Parameters p;
        p.cfg = cfg;
        p.w_encode = MatX<T>::Zero(h, cfg.in_channels);
        p.b_encode = VecX<T>::Zero(h);
        p.blocks.resize(cfg.n_blocks());
        for (auto& b : p.blocks) {
            b.w_qkv = MatX<T>::Zero(3 * h, h);
            b.w_out = MatX<T>::Zero(h, h);
            b.g_attn = VecX<T>::Zero(h);
            b.g_ffn = VecX<T>::Zero(h);
            b.w_gate = MatX<T>::Zero(f, h);
            b.w_up = MatX<T>::Zero(f, h);
            b.w_down = MatX<T>::Zero(h, f);
            b.w_ada = MatX<T>::Zero(6 * h, td);
            b.b_ada = VecX<T>::Zero(6 * h);
        }
        p.w_time = MatX<T>::Zero(td, td);
        p.b_time = VecX<T>::Zero(td);
        p.g_decode = VecX<T>::Zero(h);
        p.w_decode = MatX<T>::Zero(cfg.out_channels, h);
        p.b_decode = VecX<T>::Zero(cfg.out_channels);
        return p;
    }
};

/// Closed-form parameter count; kept in sync with the allocation by test.
inline i64 parameter_count_formula(const ModelConfig& cfg) {
    const i64 h = cfg.hidden_dim, f = cfg.ffn_dim, td = cfg.tdim();
    const i64 per_block = 3 * h * h   // qkv
                          + h * h     // out projection
                          + 2 * h     // rms gains
                          + 3 * f * h  // SwiGLU gate, up, down
                          + 6 * h * td + 6 * h;  // adaptive-norm projection
    return cfg.in_channels * h + h                      // encode
           + cfg.n_blocks() * per_block                 // blocks
           + td * td + td                               // shared time projection
           + h + cfg.out_channels * h + cfg.out_channels;  // decode norm + linear
}

struct ArrayRef {
    std::string name;
    void* data;
    i64 size;
    i64 rows = 0;
    i64 cols = 0;
};

/// Flat views over every parameter array, in a fixed canonical order.
template <class T>
std::vector<ArrayRef> parameter_arrays(Parameters<T>& p) {
    std::vector<ArrayRef> out;
    auto add = [&](const std::string& name, auto& m) {
        out.push_back({name, static_cast<void*>(m.data()), static_cast<i64>(m.size()),
                       static_cast<i64>(m.rows()), static_cast<i64>(m.cols())});
    };
    add("encode.w", p.w_encode);
    add("encode.b", p.b_encode);
    for (std::size_t i = 0; i < p.blocks.size(); ++i) {
        const std::string pre = "block" + std::to_string(i) + ".";
        auto& b = p.blocks[i];
        add(pre + "qkv.w", b.w_qkv);
        add(pre + "out.w", b.w_out);
        add(pre + "rms_attn.g", b.g_attn);
        add(pre + "rms_ffn.g", b.g_ffn);
        add(pre + "gate.w", b.w_gate);
        add(pre + "up.w", b.w_up);
        add(pre + "down.w", b.w_down);
        add(pre + "ada.w", b.w_ada);
        add(pre + "ada.b", b.b_ada);
    }
    add("time.w", p.w_time);
    add("time.b", p.b_time);
    add("decode.g", p.g_decode);
    add("decode.w", p.w_decode);
    add("decode.b", p.b_decode);
    return out;
}

template <class T>
i64 parameter_count(Parameters<T>& p) {
    i64 n = 0;
    for (const auto& a : parameter_arrays(p)) n += a.size;
    return n;
}

template <class T>
T* param_data(const ArrayRef& a) {
    return static_cast<T*>(a.data);
}

/// Training init: adaptive-norm projections and the decode linear start at
/// zero so every block starts as the identity and the network starts at zero
/// output; everything else gets scaled Gaussian init.
template <class T>
Parameters<T> init_parameters(const ModelConfig& cfg, u64 seed) {
    Parameters<T> p = Parameters<T>::zeros(cfg);
    const int h = cfg.hidden_dim, f = cfg.ffn_dim, td = cfg.tdim();
    u64 stream = 0;
    auto fill = [&](MatX<T>& m, double scale) {
        const u64 key = key_derive(seed, 0x1217u, stream++);
        for (i64 i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(scale * gaussian(key, i));
    };
    fill(p.w_encode, 1.0 / std::sqrt(double(cfg.in_channels)));
    for (auto& b : p.blocks) {
        fill(b.w_qkv, 1.0 / std::sqrt(double(h)));
        fill(b.w_out, 1.0 / std::sqrt(double(h) * 2 * cfg.n_blocks()));
        b.g_attn.setOnes();
        b.g_ffn.setOnes();
        fill(b.w_gate, 1.0 / std::sqrt(double(h)));
        fill(b.w_up, 1.0 / std::sqrt(double(h)));
        fill(b.w_down, 1.0 / std::sqrt(double(f) * 2 * cfg.n_blocks()));
        // w_ada, b_ada stay zero.
    }
    fill(p.w_time, 1.0 / std::sqrt(double(td)));
    p.g_decode.setOnes();
    // w_decode, b_decode stay zero.
    return p;
}

/// Test init: every array (including adaptive norm and decode) non-zero so
/// all gradient paths are live.
template <class T>
Parameters<T> init_parameters_random(const ModelConfig& cfg, u64 seed, double scale = 0.25) {
    Parameters<T> p = init_parameters<T>(cfg, seed);
    u64 stream = 1000;
    for (auto& a : parameter_arrays(p)) {
        const u64 key = key_derive(seed, 0xabcu, stream++);
        T* d = param_data<T>(a);
        for (i64 i = 0; i < a.size; ++i) d[i] += static_cast<T>(scale * gaussian(key, i));
    }
    return p;
}

// ---------------------------------------------------------------------------
// Diffusion-time embedding: sinusoidal features of t through the shared
// linear layer and a SiLU, broadcast to every block's adaptive norm.

template <class T>
VecX<T> time_features(T t, int dim) {
    VecX<T> f(dim);
    const int n_freq = dim / 2;
    for (int k = 0; k < n_freq; ++k) {
        const double omega = std::pow(10000.0, -double(k) / n_freq);
        const double arg = double(t) * 636.6197723675814 * omega;  // maps (0, pi/2) onto ~(0, 1e3)
        f[2 * k] = static_cast<T>(std::sin(arg));
        f[2 * k + 1] = static_cast<T>(std::cos(arg));
    }
    if (dim % 2 == 1) f[dim - 1] = T(1);
    return f;
}

template <class T>
T silu(T x) {
    return x / (T(1) + std::exp(-x));
}

template <class T>
T silu_grad(T x) {
    const T s = T(1) / (T(1) + std::exp(-x));
    return s * (T(1) + x * (T(1) - s));
}

template <class T>
struct TimeEmbedCache {
    VecX<T> feat;   // sinusoidal features
    VecX<T> lin;    // shared linear pre-activation
    VecX<T> embed;  // silu(lin)
};

template <class T>
TimeEmbedCache<T> time_embed(const Parameters<T>& p, T t) {
    TimeEmbedCache<T> c;
    c.feat = time_features<T>(t, p.cfg.tdim());
    c.lin.noalias() = p.w_time * c.feat;
    c.lin += p.b_time;
    c.embed = c.lin.unaryExpr([](T v) { return silu(v); });
    return c;
}

}  // namespace swinflow
