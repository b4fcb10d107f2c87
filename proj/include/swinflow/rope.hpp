// Copyright (c) 2026 swinflow contributors
// SPDX-License-Identifier: Apache-2.0
//
// Axial-frequency 2D rotary embedding: the first half of the rotation pairs
// advances with the row coordinate, the second half with the column. Norm
// preserving; position (0, 0) is the identity; inner products depend only on
// per-axis position offsets.

#pragma once

#include "swinflow/common.hpp"

#include <cmath>

namespace swinflow {

/// Rotation angles of every pair of one head vector at position (row, col).
/// head_dim must be divisible by 4 (an even number of pairs per axis).
template <class T>
VecX<T> rope_angles(int head_dim, int row, int col) {
    require(head_dim % 4 == 0, "rope: head_dim must be divisible by 4");
    const int pairs = head_dim / 2;
    const int per_axis = pairs / 2;
    VecX<T> ang(pairs);
    for (int j = 0; j < per_axis; ++j) {
        const double omega = std::pow(10000.0, -double(j) / per_axis);
        ang[j] = static_cast<T>(row * omega);
        ang[per_axis + j] = static_cast<T>(col * omega);
    }
    return ang;
}

/// Rotate pairs (v[2k], v[2k+1]) in place by the given angles; negate to invert.
template <class T>
void rope_rotate(Eigen::Ref<VecX<T>> v, const VecX<T>& angles, bool inverse = false) {
    const int pairs = static_cast<int>(angles.size());
    for (int k = 0; k < pairs; ++k) {
        const T a = inverse ? -angles[k] : angles[k];
        const T c = std::cos(a), s = std::sin(a);
        const T x = v[2 * k], y = v[2 * k + 1];
        v[2 * k] = c * x - s * y;
        v[2 * k + 1] = s * x + c * y;
    }
}

/// Out-of-place convenience.
template <class T>
VecX<T> rope_apply(const VecX<T>& v, int row, int col) {
    VecX<T> out = v;
    const VecX<T> ang = rope_angles<T>(static_cast<int>(v.size()), row, col);
    rope_rotate<T>(out, ang);
    return out;
}

}  // namespace swinflow
