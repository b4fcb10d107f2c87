// Copyright (c) 2026 swinflow contributors
// SPDX-License-Identifier: Apache-2.0
//
// Forward and analytic backward of the shifted-window transformer. The math
// is organized as leaf operations whose shapes do not depend on how the work
// is sharded: per-token column loops and per-(window, head) attention. The
// single-rank reference and the virtual-rank simulator call the same leaves,
// so a sharded run executes the same floating-point operations as the
// reference up to reduction grouping.

#pragma once

#include "swinflow/model.hpp"
#include "swinflow/rope.hpp"
#include "swinflow/window.hpp"

#include <vector>

namespace swinflow {

/// Adaptive-norm vectors of one block at one diffusion time: scale a, shift
/// b, gate g for the attention branch (1) and the feed-forward branch (2).
template <class T>
struct AdaVecs {
    VecX<T> a1, b1, g1, a2, b2, g2;
};

template <class T>
AdaVecs<T> ada_vectors(const BlockParams<T>& bp, const VecX<T>& t_embed) {
    const int h = static_cast<int>(bp.g_attn.size());
    VecX<T> six = bp.b_ada;
    six.noalias() += bp.w_ada * t_embed;
    AdaVecs<T> v;
    v.a1 = six.segment(0, h);
    v.b1 = six.segment(h, h);
    v.g1 = six.segment(2 * h, h);
    v.a2 = six.segment(3 * h, h);
    v.b2 = six.segment(4 * h, h);
    v.g2 = six.segment(5 * h, h);
    return v;
}

namespace ops {

constexpr double kRmsEps = 1e-8;

/// Y = W * X, evaluated column by column so results do not depend on how the
/// columns are grouped across ranks.
template <class T, class WExpr>
MatX<T> linear_cols(const WExpr& W, const MatX<T>& X) {
    MatX<T> Y(W.rows(), X.cols());
    for (i64 j = 0; j < X.cols(); ++j) Y.col(j).noalias() = W * X.col(j);
    return Y;
}

/// Y = W^T * X, column by column.
template <class T, class WExpr>
MatX<T> linear_cols_t(const WExpr& W, const MatX<T>& X) {
    MatX<T> Y(W.cols(), X.cols());
    for (i64 j = 0; j < X.cols(); ++j) Y.col(j).noalias() = W.transpose() * X.col(j);
    return Y;
}

/// gW += sum_j dY.col(j) * X.col(j)^T, column by column.
template <class T, class GExpr>
void accum_outer(GExpr&& gW, const MatX<T>& dY, const MatX<T>& X) {
    for (i64 j = 0; j < X.cols(); ++j) gW.noalias() += dY.col(j) * X.col(j).transpose();
}

/// RMS norm + adaptive modulation, per token:
///   u = x / rms(x),  xm = gate .* ((g .* u) .* (1 + a) + b).
template <class T>
void prenorm_modulate(const MatX<T>& X, const VecX<T>& g, const VecX<T>& a, const VecX<T>& b,
                      const VecX<T>& gate, MatX<T>& U, VecX<T>& rms, MatX<T>& XM) {
    const i64 h = X.rows(), n = X.cols();
    U.resize(h, n);
    rms.resize(n);
    XM.resize(h, n);
    for (i64 j = 0; j < n; ++j) {
        const T r = std::sqrt(X.col(j).squaredNorm() / T(h) + T(kRmsEps));
        rms[j] = r;
        U.col(j) = X.col(j) / r;
        XM.col(j) = gate.array() * ((g.array() * U.col(j).array()) * (T(1) + a.array()) + b.array());
    }
}

/// Backward of prenorm_modulate. Adds dX into `dX_accum` and the adaptive /
/// gain gradients into the provided accumulators.
template <class T>
void prenorm_modulate_bwd(const MatX<T>& X, const MatX<T>& U, const VecX<T>& rms, const VecX<T>& g,
                          const VecX<T>& a, const VecX<T>& b, const VecX<T>& gate, const MatX<T>& dXM,
                          MatX<T>& dX_accum, VecX<T>& dg, VecX<T>& da, VecX<T>& db, VecX<T>& dgate) {
    const i64 h = X.rows(), n = X.cols();
    for (i64 j = 0; j < n; ++j) {
        const auto u = U.col(j).array();
        const auto dxm = dXM.col(j).array();
        const auto gu = g.array() * u;
        da += (dxm * gate.array() * gu).matrix();
        db += (dxm * gate.array()).matrix();
        dgate += (dxm * (gu * (T(1) + a.array()) + b.array())).matrix();
        const ArrX<T> dgu = dxm * gate.array() * (T(1) + a.array());
        dg += (dgu * u).matrix();
        const VecX<T> du = (dgu * g.array()).matrix();
        const T r = rms[j];
        const T xdotdu = X.col(j).dot(du);
        dX_accum.col(j) += du / r - X.col(j) * (xdotdu / (T(h) * r * r * r));
    }
}

/// Plain RMS norm with gain (decoder head), per token.
template <class T>
void prenorm_plain(const MatX<T>& X, const VecX<T>& g, MatX<T>& U, VecX<T>& rms, MatX<T>& N) {
    const i64 h = X.rows(), n = X.cols();
    U.resize(h, n);
    rms.resize(n);
    N.resize(h, n);
    for (i64 j = 0; j < n; ++j) {
        const T r = std::sqrt(X.col(j).squaredNorm() / T(h) + T(kRmsEps));
        rms[j] = r;
        U.col(j) = X.col(j) / r;
        N.col(j) = g.asDiagonal() * U.col(j);
    }
}

template <class T>
void prenorm_plain_bwd(const MatX<T>& X, const MatX<T>& U, const VecX<T>& rms, const VecX<T>& g,
                       const MatX<T>& dN, MatX<T>& dX_accum, VecX<T>& dg) {
    const i64 h = X.rows(), n = X.cols();
    for (i64 j = 0; j < n; ++j) {
        dg += (dN.col(j).array() * U.col(j).array()).matrix();
        const VecX<T> du = (dN.col(j).array() * g.array()).matrix();
        const T r = rms[j];
        const T xdotdu = X.col(j).dot(du);
        dX_accum.col(j) += du / r - X.col(j) * (xdotdu / (T(h) * r * r * r));
    }
}

/// Rotation angles for every token of a window: (pairs x s_w).
template <class T>
MatX<T> window_rope_angles(const WindowLayout& lay, int wy, int wx, int head_dim) {
    const int w = lay.window_px;
    MatX<T> ang(head_dim / 2, lay.tokens_per_window());
    for (int r = 0; r < w; ++r) {
        for (int c = 0; c < w; ++c) {
            const auto [py, px] = lay.rope_position(wy, wx, r, c);
            ang.col(r * w + c) = rope_angles<T>(head_dim, py, px);
        }
    }
    return ang;
}

template <class T>
struct HeadCache {
    MatX<T> q, k, v;  // d x s, q and k post-rotation
    MatX<T> probs;    // s x s attention rows
};

/// One attention head over a full window: qkv projection of its row slice,
/// axial rotary on q/k, masked softmax, and value mixing. `Xm` holds all s_w
/// window tokens in canonical order.
template <class T>
HeadCache<T> head_attention_fwd(const MatX<T>& w_qkv, int head, int head_dim, const MatX<T>& Xm,
                                const MatX<T>& angles, const MatX<T>& mask, MatX<T>& O) {
    const i64 s = Xm.cols();
    const int h = static_cast<int>(w_qkv.cols());
    const int d = head_dim;
    HeadCache<T> hc;
    hc.q = linear_cols<T>(w_qkv.middleRows(head * d, d), Xm);
    hc.k = linear_cols<T>(w_qkv.middleRows(h + head * d, d), Xm);
    hc.v = linear_cols<T>(w_qkv.middleRows(2 * h + head * d, d), Xm);
    for (i64 j = 0; j < s; ++j) {
        const VecX<T> a = angles.col(j);
        rope_rotate<T>(hc.q.col(j), a);
        rope_rotate<T>(hc.k.col(j), a);
    }
    const T scale = T(1) / std::sqrt(T(d));
    MatX<T> logits = hc.q.transpose() * hc.k;
    logits *= scale;
    if (mask.size() > 0) logits += mask;
    hc.probs.resize(s, s);
    for (i64 r = 0; r < s; ++r) {
        const T m = logits.row(r).maxCoeff();
        ArrX<T> e = (logits.row(r).transpose().array() - m).exp();
        hc.probs.row(r) = (e / e.sum()).transpose();
    }
    O = hc.v * hc.probs.transpose();
    return hc;
}

/// Backward of one head. Adds the full-h partial input gradient into
/// `dXm_accum` and the head's qkv rows into `dWqkv_accum`.
template <class T>
void head_attention_bwd(const MatX<T>& w_qkv, int head, int head_dim, const MatX<T>& Xm,
                        const HeadCache<T>& hc, const MatX<T>& angles, const MatX<T>& dO,
                        MatX<T>& dXm_accum, MatX<T>& dWqkv_accum) {
    const i64 s = Xm.cols();
    const int h = static_cast<int>(w_qkv.cols());
    const int d = head_dim;
    const T scale = T(1) / std::sqrt(T(d));

    MatX<T> dV = dO * hc.probs;            // d x s
    MatX<T> dP = dO.transpose() * hc.v;    // s x s  (dP(q,k))
    MatX<T> dA(s, s);
    for (i64 r = 0; r < s; ++r) {
        const T dot = dP.row(r).dot(hc.probs.row(r));
        dA.row(r) = hc.probs.row(r).array() * (dP.row(r).array() - dot);
    }
    MatX<T> dQ = hc.k * dA.transpose();
    dQ *= scale;
    MatX<T> dK = hc.q * dA;
    dK *= scale;
    for (i64 j = 0; j < s; ++j) {
        const VecX<T> a = angles.col(j);
        rope_rotate<T>(dQ.col(j), a, /*inverse=*/true);
        rope_rotate<T>(dK.col(j), a, /*inverse=*/true);
    }
    accum_outer<T>(dWqkv_accum.middleRows(head * d, d), dQ, Xm);
    accum_outer<T>(dWqkv_accum.middleRows(h + head * d, d), dK, Xm);
    accum_outer<T>(dWqkv_accum.middleRows(2 * h + head * d, d), dV, Xm);
    for (i64 j = 0; j < s; ++j) {
        dXm_accum.col(j).noalias() += w_qkv.middleRows(head * d, d).transpose() * dQ.col(j);
        dXm_accum.col(j).noalias() += w_qkv.middleRows(h + head * d, d).transpose() * dK.col(j);
        dXm_accum.col(j).noalias() += w_qkv.middleRows(2 * h + head * d, d).transpose() * dV.col(j);
    }
}

/// SwiGLU feed-forward, per token. Returns y; fills pre-activations.
template <class T>
MatX<T> swiglu_fwd(const BlockParams<T>& bp, const MatX<T>& X2m, MatX<T>& gate_pre, MatX<T>& up_pre) {
    gate_pre = linear_cols<T>(bp.w_gate, X2m);
    up_pre = linear_cols<T>(bp.w_up, X2m);
    MatX<T> s = gate_pre.unaryExpr([](T v) { return silu(v); }).cwiseProduct(up_pre);
    return linear_cols<T>(bp.w_down, s);
}

template <class T>
MatX<T> swiglu_bwd(const BlockParams<T>& bp, const MatX<T>& X2m, const MatX<T>& gate_pre,
                   const MatX<T>& up_pre, const MatX<T>& dY, BlockParams<T>& grads) {
    const MatX<T> silu_g = gate_pre.unaryExpr([](T v) { return silu(v); });
    const MatX<T> s = silu_g.cwiseProduct(up_pre);
    accum_outer<T>(grads.w_down, dY, s);
    const MatX<T> dS = linear_cols_t<T>(bp.w_down, dY);
    const MatX<T> dGate = dS.cwiseProduct(up_pre).cwiseProduct(
        gate_pre.unaryExpr([](T v) { return silu_grad(v); }));
    const MatX<T> dUp = dS.cwiseProduct(silu_g);
    accum_outer<T>(grads.w_gate, dGate, X2m);
    accum_outer<T>(grads.w_up, dUp, X2m);
    MatX<T> dX2m = linear_cols_t<T>(bp.w_gate, dGate);
    dX2m += linear_cols_t<T>(bp.w_up, dUp);
    return dX2m;
}

}  // namespace ops

// ---------------------------------------------------------------------------
// Reference (single-rank) forward/backward over the whole grid.

template <class T>
struct BlockWindowCache {
    MatX<T> x_in;
    MatX<T> u1;
    VecX<T> rms1;
    MatX<T> xm;
    std::vector<ops::HeadCache<T>> heads;
    MatX<T> attn_concat;
    MatX<T> x_mid;
    MatX<T> u2;
    VecX<T> rms2;
    MatX<T> x2m;
    MatX<T> gate_pre, up_pre;
};

template <class T>
struct BlockCache {
    AdaVecs<T> ada;
    std::vector<BlockWindowCache<T>> wins;
};

template <class T>
struct ForwardCache {
    int grid_h = 0, grid_w = 0;
    TimeEmbedCache<T> temb;
    MatX<T> input;    // C_in x N
    MatX<T> encoded;  // h x N
    std::vector<BlockCache<T>> blocks;
    MatX<T> x_final;  // h x N
    MatX<T> u3;
    VecX<T> rms3;
    MatX<T> n3;
    MatX<T> output;  // C_out x N
};

namespace detail {

template <class T>
void check_finite(const MatX<T>& x, const std::string& where) {
    if (!x.allFinite()) {
        throw NumericsError("non-finite activation entering " + where);
    }
}

}  // namespace detail

/// Forward one block over one window; shared by the reference path and the
/// simulator's assembled-window path. Returns the block output tokens.
template <class T>
MatX<T> block_window_forward(const BlockParams<T>& bp, const AdaVecs<T>& ada, const WindowLayout& lay,
                             int wy, int wx, int n_heads, BlockWindowCache<T>& wc) {
    const int h = static_cast<int>(bp.g_attn.size());
    const int d = h / n_heads;
    const MatX<T> angles = ops::window_rope_angles<T>(lay, wy, wx, d);
    const MatX<T> mask = seam_mask<T>(lay, wy);

    ops::prenorm_modulate(wc.x_in, bp.g_attn, ada.a1, ada.b1, ada.g1, wc.u1, wc.rms1, wc.xm);
    wc.heads.resize(n_heads);
    wc.attn_concat.resize(h, wc.x_in.cols());
    for (int head = 0; head < n_heads; ++head) {
        MatX<T> O;
        wc.heads[head] = ops::head_attention_fwd(bp.w_qkv, head, d, wc.xm, angles, mask, O);
        wc.attn_concat.middleRows(head * d, d) = O;
    }
    wc.x_mid = wc.x_in + ops::linear_cols<T>(bp.w_out, wc.attn_concat);
    ops::prenorm_modulate(wc.x_mid, bp.g_ffn, ada.a2, ada.b2, ada.g2, wc.u2, wc.rms2, wc.x2m);
    return wc.x_mid + ops::swiglu_fwd(bp, wc.x2m, wc.gate_pre, wc.up_pre);
}

template <class T>
MatX<T> forward(const Parameters<T>& p, const MatX<T>& input, T t, int grid_h, int grid_w,
                ForwardCache<T>* cache = nullptr) {
    const ModelConfig& cfg = p.cfg;
    cfg.validate_grid(grid_h, grid_w);
    require(static_cast<int>(input.rows()) == cfg.in_channels, "forward: input channel mismatch");
    detail::check_finite(input, "input");

    ForwardCache<T> local;
    ForwardCache<T>& fc = cache ? *cache : local;
    fc.grid_h = grid_h;
    fc.grid_w = grid_w;
    fc.temb = time_embed(p, t);
    fc.input = input;
    fc.encoded = ops::linear_cols<T>(p.w_encode, input);
    fc.encoded.colwise() += p.b_encode;

    MatX<T> x = fc.encoded;
    fc.blocks.clear();
    fc.blocks.resize(cfg.n_blocks());
    for (int blk = 0; blk < cfg.n_blocks(); ++blk) {
        detail::check_finite(x, "block " + std::to_string(blk));
        const WindowLayout lay = cfg.layout_for_block(grid_h, grid_w, blk);
        BlockCache<T>& bc = fc.blocks[blk];
        bc.ada = ada_vectors(p.blocks[blk], fc.temb.embed);
        bc.wins.resize(lay.n_windows());
        for (int wy = 0; wy < lay.windows_y(); ++wy) {
            for (int wx = 0; wx < lay.windows_x(); ++wx) {
                BlockWindowCache<T>& wc = bc.wins[wy * lay.windows_x() + wx];
                wc.x_in = window_gather(x, lay, wy, wx);
                const MatX<T> x_out = block_window_forward(p.blocks[blk], bc.ada, lay, wy, wx, cfg.n_heads, wc);
                window_scatter(x, x_out, lay, wy, wx);
            }
        }
    }
    detail::check_finite(x, "decode");
    fc.x_final = x;
    ops::prenorm_plain(fc.x_final, p.g_decode, fc.u3, fc.rms3, fc.n3);
    fc.output = ops::linear_cols<T>(p.w_decode, fc.n3);
    fc.output.colwise() += p.b_decode;
    return fc.output;
}

/// Backward one block over one window given the block-output gradient in
/// `dX` (h x s_w, canonical order). Returns the gradient w.r.t. the window's
/// block input; accumulates parameter and adaptive gradients.
template <class T>
MatX<T> block_window_backward(const BlockParams<T>& bp, const AdaVecs<T>& ada, const WindowLayout& lay,
                              int wy, int wx, int n_heads, const BlockWindowCache<T>& wc, const MatX<T>& dX,
                              BlockParams<T>& g, AdaVecs<T>& dada) {
    const int h = static_cast<int>(bp.g_attn.size());
    const int d = h / n_heads;
    const MatX<T> angles = ops::window_rope_angles<T>(lay, wy, wx, d);

    // Feed-forward branch.
    MatX<T> dx_mid = dX;  // residual path
    {
        const MatX<T> dX2m = ops::swiglu_bwd(bp, wc.x2m, wc.gate_pre, wc.up_pre, dX, g);
        ops::prenorm_modulate_bwd(wc.x_mid, wc.u2, wc.rms2, bp.g_ffn, ada.a2, ada.b2, ada.g2, dX2m, dx_mid,
                                  g.g_ffn, dada.a2, dada.b2, dada.g2);
    }

    // Attention branch.
    MatX<T> dx_in = dx_mid;  // residual path
    {
        ops::accum_outer<T>(g.w_out, dx_mid, wc.attn_concat);
        const MatX<T> dO_concat = ops::linear_cols_t<T>(bp.w_out, dx_mid);
        MatX<T> dXm = MatX<T>::Zero(h, dX.cols());
        for (int head = 0; head < n_heads; ++head) {
            const MatX<T> dO = dO_concat.middleRows(head * d, d);
            ops::head_attention_bwd(bp.w_qkv, head, d, wc.xm, wc.heads[head], angles, dO, dXm, g.w_qkv);
        }
        ops::prenorm_modulate_bwd(wc.x_in, wc.u1, wc.rms1, bp.g_attn, ada.a1, ada.b1, ada.g1, dXm,
                                  dx_in, g.g_attn, dada.a1, dada.b1, dada.g1);
    }
    return dx_in;
}

template <class T>
struct BackwardResult {
    Parameters<T> grads;
    MatX<T> d_input;
};

template <class T>
BackwardResult<T> backward(const Parameters<T>& p, const ForwardCache<T>& fc, const MatX<T>& d_output) {
    const ModelConfig& cfg = p.cfg;
    const int h = cfg.hidden_dim;
    BackwardResult<T> res;
    res.grads = Parameters<T>::zeros(cfg);
    Parameters<T>& g = res.grads;

    // Decode head.
    ops::accum_outer<T>(g.w_decode, d_output, fc.n3);
    g.b_decode += d_output.rowwise().sum();
    const MatX<T> dN3 = ops::linear_cols_t<T>(p.w_decode, d_output);
    MatX<T> dx = MatX<T>::Zero(h, fc.x_final.cols());
    ops::prenorm_plain_bwd(fc.x_final, fc.u3, fc.rms3, p.g_decode, dN3, dx, g.g_decode);

    // Blocks in reverse.
    VecX<T> d_embed = VecX<T>::Zero(cfg.tdim());
    for (int blk = cfg.n_blocks() - 1; blk >= 0; --blk) {
        const WindowLayout lay = cfg.layout_for_block(fc.grid_h, fc.grid_w, blk);
        const BlockCache<T>& bc = fc.blocks[blk];
        AdaVecs<T> dada;
        dada.a1 = VecX<T>::Zero(h);
        dada.b1 = VecX<T>::Zero(h);
        dada.g1 = VecX<T>::Zero(h);
        dada.a2 = VecX<T>::Zero(h);
        dada.b2 = VecX<T>::Zero(h);
        dada.g2 = VecX<T>::Zero(h);
        MatX<T> dx_next = MatX<T>::Zero(h, dx.cols());
        for (int wy = 0; wy < lay.windows_y(); ++wy) {
            for (int wx = 0; wx < lay.windows_x(); ++wx) {
                const BlockWindowCache<T>& wc = bc.wins[wy * lay.windows_x() + wx];
                const MatX<T> dwin = window_gather(dx, lay, wy, wx);
                const MatX<T> dwin_in = block_window_backward(p.blocks[blk], bc.ada, lay, wy, wx,
                                                              cfg.n_heads, wc, dwin, g.blocks[blk], dada);
                window_scatter(dx_next, dwin_in, lay, wy, wx);
            }
        }
        dx = dx_next;
        VecX<T> d6(6 * h);
        d6 << dada.a1, dada.b1, dada.g1, dada.a2, dada.b2, dada.g2;
        g.blocks[blk].w_ada.noalias() += d6 * fc.temb.embed.transpose();
        g.blocks[blk].b_ada += d6;
        d_embed.noalias() += p.blocks[blk].w_ada.transpose() * d6;
    }

    // Encode.
    ops::accum_outer<T>(g.w_encode, dx, fc.input);
    g.b_encode += dx.rowwise().sum();
    res.d_input = ops::linear_cols_t<T>(p.w_encode, dx);

    // Shared time projection.
    const VecX<T> dLin =
        (d_embed.array() * fc.temb.lin.unaryExpr([](T v) { return silu_grad(v); }).array()).matrix();
    g.w_time.noalias() += dLin * fc.temb.feat.transpose();
    g.b_time += dLin;
    return res;
}

}  // namespace swinflow
