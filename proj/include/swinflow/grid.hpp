// Copyright (c) 2026 swinflow contributors
// SPDX-License-Identifier: Apache-2.0
//
// Gridded state on a poles-removed latitude/longitude pixel grid. Rows sit at
// cell centers, longitude is periodic. Fields are (channels x H*W) with one
// column per pixel, column index y*W + x.

#pragma once

#include "swinflow/common.hpp"

#include <cmath>
#include <functional>

namespace swinflow {

struct GridSpec {
    int height = 0;              // latitude rows, pole rows excluded
    int width = 0;               // longitude columns, periodic
    int channels_prognostic = 0;
    int channels_forcing = 0;

    int channels_total() const { return channels_prognostic + channels_forcing; }
    i64 pixels() const { return static_cast<i64>(height) * width; }

    /// Latitude of a row center in degrees, strictly decreasing from
    /// +(90 - d/2) to -(90 - d/2) with d = 180/height.
    double lat_of_row(int row) const {
        const double d = 180.0 / height;
        return 90.0 - d * (row + 0.5);
    }

    void validate(int window_px = 0) const {
        require(height > 0 && width > 0, "grid: height and width must be positive");
        require(channels_prognostic > 0, "grid: at least one prognostic channel required");
        require(channels_forcing >= 0, "grid: negative forcing channel count");
        if (window_px > 0) {
            require(height % window_px == 0,
                    "grid: height " + std::to_string(height) + " not divisible by window size " +
                        std::to_string(window_px));
            require(width % window_px == 0,
                    "grid: width " + std::to_string(width) + " not divisible by window size " +
                        std::to_string(window_px));
        }
    }

    bool operator==(const GridSpec&) const = default;
};

template <class T>
struct FieldTensor {
    GridSpec spec;
    MatX<T> values;  // channels x (H*W)

    FieldTensor() = default;
    FieldTensor(const GridSpec& s, int channels) : spec(s), values(MatX<T>::Zero(channels, s.pixels())) {}

    int channels() const { return static_cast<int>(values.rows()); }

    T& at(int c, int y, int x) { return values(c, static_cast<i64>(y) * spec.width + x); }
    T at(int c, int y, int x) const { return values(c, static_cast<i64>(y) * spec.width + x); }

    bool all_finite() const { return values.allFinite(); }

    template <class U>
    FieldTensor<U> cast() const {
        FieldTensor<U> out;
        out.spec = spec;
        out.values = values.template cast<U>();
        return out;
    }
};

/// Per-row latitude weights, proportional to cos(lat) and normalized to unit
/// mean to keep the loss scale grid independent.
inline VecXd latitude_weights(const GridSpec& spec) {
    spec.validate();
    VecXd w(spec.height);
    for (int r = 0; r < spec.height; ++r) w[r] = std::cos(spec.lat_of_row(r) * M_PI / 180.0);
    w *= spec.height / w.sum();
    return w;
}

/// Per-channel affine standardization; std must stay strictly positive.
template <class T>
struct Standardizer {
    VecX<T> mean;
    VecX<T> std;

    static Standardizer identity(int channels) {
        Standardizer s;
        s.mean = VecX<T>::Zero(channels);
        s.std = VecX<T>::Ones(channels);
        return s;
    }

    /// Per-channel statistics over a set of fields.
    static Standardizer from_fields(const std::vector<FieldTensor<T>>& fields) {
        require(!fields.empty(), "standardizer: no fields");
        const int c = fields.front().channels();
        Standardizer s;
        s.mean = VecX<T>::Zero(c);
        s.std = VecX<T>::Zero(c);
        i64 n = 0;
        for (const auto& f : fields) {
            s.mean += f.values.rowwise().sum();
            n += f.values.cols();
        }
        s.mean /= static_cast<T>(n);
        for (const auto& f : fields) {
            s.std += (f.values.colwise() - s.mean).array().square().matrix().rowwise().sum();
        }
        s.std = (s.std / static_cast<T>(n)).array().sqrt();
        for (int i = 0; i < c; ++i) {
            if (!(s.std[i] > T(0))) s.std[i] = T(1);  // constant channel
        }
        return s;
    }

    void apply(FieldTensor<T>& f) const {
        f.values = ((f.values.colwise() - mean).array().colwise() / std.array()).matrix();
    }
    void invert(FieldTensor<T>& f) const {
        f.values = ((f.values.array().colwise() * std.array()).matrix().colwise() + mean);
    }

    MatX<T> apply_mat(const MatX<T>& v) const {
        return ((v.colwise() - mean).array().colwise() / std.array()).matrix();
    }
    MatX<T> invert_mat(const MatX<T>& v) const {
        return ((v.array().colwise() * std.array()).matrix().colwise() + mean);
    }
};

/// Loss weights of the physically weighted objective: alpha is the per-row
/// latitude weight (unit mean), kappa the per-variable weight.
template <class T>
struct LossWeights {
    VecX<T> alpha_row;  // height entries, mean 1
    VecX<T> kappa;      // out-channel entries, > 0

    static LossWeights make(const GridSpec& spec, const VecX<T>& kappa) {
        LossWeights w;
        w.alpha_row = latitude_weights(spec).cast<T>();
        w.kappa = kappa;
        for (int i = 0; i < kappa.size(); ++i) require(kappa[i] > T(0), "loss weights: kappa must be positive");
        return w;
    }

    static LossWeights uniform(const GridSpec& spec, int out_channels) {
        return make(spec, VecX<T>::Ones(out_channels));
    }

    T alpha_at_pixel(i64 pixel, int width) const { return alpha_row[static_cast<int>(pixel / width)]; }
};

}  // namespace swinflow
