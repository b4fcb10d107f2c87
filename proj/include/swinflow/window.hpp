// Copyright (c) 2026 swinflow contributors
// SPDX-License-Identifier: Apache-2.0
//
// Shifted-window bookkeeping. A layout places a grid of w x w windows at a
// given shift; the shifted partition rolls the grid, wrapping cyclically in
// longitude (physically periodic) and across the latitude seam (NOT
// physically adjacent -- attention masks that seam instead).
//
// Canonical token order inside a window is row-major in the rolled frame:
// token (r, c) of window (wy, wx) sits at global pixel
//   y = (wy*w + shift + r) mod H,   x = (wx*w + shift + c) mod W.
//
// Sequence slices for SP sharding are defined by the global row phase
// (y mod w), so a token keeps its slice index across shifts and the
// window-shift transfer never reshuffles data between slice peers.

#pragma once

#include "swinflow/common.hpp"

#include <utility>
#include <vector>

namespace swinflow {

struct WindowLayout {
    int grid_h = 0;
    int grid_w = 0;
    int window_px = 0;
    int shift = 0;  // pixels, in [0, window_px)

    int windows_y() const { return grid_h / window_px; }
    int windows_x() const { return grid_w / window_px; }
    int n_windows() const { return windows_y() * windows_x(); }
    int tokens_per_window() const { return window_px * window_px; }

    void validate() const {
        require(window_px > 0, "window layout: window size must be positive");
        require(grid_h % window_px == 0 && grid_w % window_px == 0,
                "window layout: grid " + std::to_string(grid_h) + "x" + std::to_string(grid_w) +
                    " not divisible by window size " + std::to_string(window_px));
        require(shift >= 0 && shift < window_px, "window layout: shift must be in [0, window)");
    }

    /// Global pixel (column index y*W + x) of token (r, c) in window (wy, wx).
    i64 pixel_of(int wy, int wx, int r, int c) const {
        const int y = (wy * window_px + shift + r) % grid_h;
        const int x = (wx * window_px + shift + c) % grid_w;
        return static_cast<i64>(y) * grid_w + x;
    }

    /// Window-frame position used by rotary embeddings: unwrapped, so that
    /// in-window offsets stay contiguous across the periodic seam.
    std::pair<int, int> rope_position(int wy, int wx, int r, int c) const {
        return {wy * window_px + shift + r, wx * window_px + shift + c};
    }

    /// Only the last window row mixes rows from both sides of the latitude
    /// seam when shifted.
    bool needs_seam_mask(int wy) const { return shift > 0 && wy == windows_y() - 1; }

    /// Seam group of a token row: 0 = physical bottom rows, 1 = rows wrapped
    /// from the top of the grid. Tokens of different groups must not attend
    /// to each other.
    int seam_group(int r) const { return r < window_px - shift ? 0 : 1; }

    /// Sequence-slice (SP band) of token row r; depends only on the global
    /// row phase so it is invariant under shifts.
    int band_of_row(int r, int sp) const { return ((shift + r) % window_px) / (window_px / sp); }

    int rows_per_band(int sp) const { return window_px / sp; }

    /// Rolled-frame rows owned by band j, in canonical (ascending r) order.
    std::vector<int> band_rows(int band, int sp) const {
        std::vector<int> rows;
        for (int r = 0; r < window_px; ++r)
            if (band_of_row(r, sp) == band) rows.push_back(r);
        return rows;
    }
};

/// Per-layer shift convention: zero on even blocks, half a window on odd ones.
inline int shift_for_block(int block_index, int window_px) {
    return (block_index % 2 == 0) ? 0 : window_px / 2;
}

/// Gather one window into an h x s_w matrix in canonical token order.
template <class T>
MatX<T> window_gather(const MatX<T>& tokens, const WindowLayout& lay, int wy, int wx) {
    const int w = lay.window_px;
    MatX<T> out(tokens.rows(), lay.tokens_per_window());
    for (int r = 0; r < w; ++r)
        for (int c = 0; c < w; ++c) out.col(r * w + c) = tokens.col(lay.pixel_of(wy, wx, r, c));
    return out;
}

/// Inverse of window_gather.
template <class T>
void window_scatter(MatX<T>& tokens, const MatX<T>& win, const WindowLayout& lay, int wy, int wx) {
    const int w = lay.window_px;
    for (int r = 0; r < w; ++r)
        for (int c = 0; c < w; ++c) tokens.col(lay.pixel_of(wy, wx, r, c)) = win.col(r * w + c);
}

/// Additive attention mask for one window: zero everywhere except -inf on
/// cross-seam pairs. Returns an empty matrix when no masking is needed.
template <class T>
MatX<T> seam_mask(const WindowLayout& lay, int wy) {
    if (!lay.needs_seam_mask(wy)) return MatX<T>();
    const int w = lay.window_px;
    const int s = lay.tokens_per_window();
    MatX<T> m = MatX<T>::Zero(s, s);
    const T neg_inf = -std::numeric_limits<T>::infinity();
    for (int rq = 0; rq < w; ++rq) {
        for (int rk = 0; rk < w; ++rk) {
            if (lay.seam_group(rq) == lay.seam_group(rk)) continue;
            for (int cq = 0; cq < w; ++cq)
                for (int ck = 0; ck < w; ++ck) m(rq * w + cq, rk * w + ck) = neg_inf;
        }
    }
    return m;
}

}  // namespace swinflow
