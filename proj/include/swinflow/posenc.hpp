// Copyright (c) 2026 swinflow contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "swinflow/grid.hpp"

namespace swinflow {

/// 2D sinusoidal positional encoding with one value per (channel, pixel),
/// added to the raw input channels before the encode linear. The first half
/// of the channels encodes the row coordinate, the second half the column;
/// within an axis, channels alternate sin/cos over a geometric frequency
/// ladder. Values lie in [-1, 1] and depend only on coordinates.
template <class T>
MatX<T> sinusoidal_pos_encode(const GridSpec& spec, int channels) {
    require(channels > 0 && channels % 2 == 0, "positional encoding: channel count must be even");
    const int per_axis = channels / 2;
    const int n_freq = (per_axis + 1) / 2;
    MatX<T> enc(channels, spec.pixels());
    for (int axis = 0; axis < 2; ++axis) {
        for (int i = 0; i < per_axis; ++i) {
            const int k = i / 2;
            const double omega = std::pow(10000.0, -double(k) / std::max(1, n_freq));
            const bool use_sin = (i % 2 == 0);
            const int ch = axis * per_axis + i;
            for (int y = 0; y < spec.height; ++y) {
                for (int x = 0; x < spec.width; ++x) {
                    const double pos = axis == 0 ? y : x;
                    const double v = use_sin ? std::sin(pos * omega) : std::cos(pos * omega);
                    enc(ch, static_cast<i64>(y) * spec.width + x) = static_cast<T>(v);
                }
            }
        }
    }
    return enc;
}

}  // namespace swinflow
