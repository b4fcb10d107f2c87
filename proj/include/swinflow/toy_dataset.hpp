// Copyright (c) 2026 swinflow contributors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic toy atmosphere: spectrally colored Gaussian random fields advected
// by a fixed solenoidal flow, lightly damped, with fresh small-scale noise
// injected each step so the process stays stationary. Forcings are a moving
// diurnal "solar" band and a static mask channel. Everything is a pure
// function of the seed.

#pragma once

#include "swinflow/grid.hpp"
#include "swinflow/rng.hpp"

#include <vector>

namespace swinflow {

template <class T>
struct ToyDataset {
    GridSpec spec;
    std::vector<FieldTensor<T>> states;    // prognostic channels, one per step
    std::vector<FieldTensor<T>> forcings;  // forcing channels, one per step
};

namespace detail {

struct FourierMode {
    int kx = 0, ky = 0;
    double amp = 0.0, phase = 0.0;
};

inline double eval_modes(const std::vector<FourierMode>& modes, double y_frac, double x_frac) {
    double v = 0.0;
    for (const auto& m : modes) v += m.amp * std::cos(2.0 * M_PI * (m.kx * x_frac + m.ky * y_frac) + m.phase);
    return v;
}

/// Random superposition of low-wavenumber modes with power ~ |k|^-alpha.
inline std::vector<FourierMode> colored_modes(CounterRng& rng, int kmax, double alpha, double amp) {
    std::vector<FourierMode> modes;
    for (int ky = -kmax; ky <= kmax; ++ky) {
        for (int kx = 0; kx <= kmax; ++kx) {
            if (kx == 0 && ky <= 0) continue;  // one representative per conjugate pair
            const double k = std::sqrt(double(kx) * kx + double(ky) * ky);
            FourierMode m;
            m.kx = kx;
            m.ky = ky;
            m.amp = amp * rng.normal() / std::pow(k, alpha);
            m.phase = 2.0 * M_PI * rng.uniform();
            modes.push_back(m);
        }
    }
    return modes;
}

template <class T>
T bilinear_periodic_x(const MatX<T>& row_major_field, int H, int W, double y, double x) {
    // y clamped at the poles-removed boundary, x periodic.
    y = std::min(std::max(y, 0.0), double(H - 1));
    x = x - W * std::floor(x / W);
    const int y0 = std::min(int(std::floor(y)), H - 2 >= 0 ? H - 2 : 0);
    const int x0 = int(std::floor(x)) % W;
    const int y1 = std::min(y0 + 1, H - 1);
    const int x1 = (x0 + 1) % W;
    const double fy = y - y0, fx = x - x0;
    const T v00 = row_major_field(0, static_cast<i64>(y0) * W + x0);
    const T v01 = row_major_field(0, static_cast<i64>(y0) * W + x1);
    const T v10 = row_major_field(0, static_cast<i64>(y1) * W + x0);
    const T v11 = row_major_field(0, static_cast<i64>(y1) * W + x1);
    return static_cast<T>((1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11));
}

}  // namespace detail

template <class T>
ToyDataset<T> make_toy_dataset(u64 seed, const GridSpec& spec, int n_steps) {
    spec.validate();
    require(spec.channels_forcing >= 2, "toy dataset: needs >= 2 forcing channels (solar + mask)");
    require(n_steps >= 2, "toy dataset: n_steps must be >= 2");

    const int H = spec.height, W = spec.width;
    const int CP = spec.channels_prognostic, CF = spec.channels_forcing;
    const double damp = 0.995;
    const double noise_eta = 0.125;
    const double solar_period = 16.0;

    // Fixed solenoidal flow from a random streamfunction; velocity scaled to
    // sub-pixel displacement per step so lag-1 correlation stays high.
    CounterRng flow_rng(key_derive(seed, 0xf10u));
    const auto psi_modes = detail::colored_modes(flow_rng, 3, 2.0, 1.0);
    MatXd u_flow(1, spec.pixels()), v_flow(1, spec.pixels());
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            double du = 0.0, dv = 0.0;
            for (const auto& m : psi_modes) {
                const double arg = 2.0 * M_PI * (m.kx * double(x) / W + m.ky * double(y) / H) + m.phase;
                const double s = std::sin(arg);
                du += -m.amp * s * 2.0 * M_PI * m.ky / H;  // d(psi)/dy
                dv += m.amp * s * 2.0 * M_PI * m.kx / W;   // -d(psi)/dx
            }
            u_flow(0, static_cast<i64>(y) * W + x) = du;
            v_flow(0, static_cast<i64>(y) * W + x) = dv;
        }
    }
    const double vmax = std::max(u_flow.cwiseAbs().maxCoeff(), v_flow.cwiseAbs().maxCoeff());
    if (vmax > 0) {
        u_flow *= 0.8 / vmax;
        v_flow *= 0.8 / vmax;
    }

    // Static mask forcing.
    CounterRng mask_rng(key_derive(seed, 0xa5cu));
    const auto mask_modes = detail::colored_modes(mask_rng, 3, 1.5, 1.0);

    ToyDataset<T> ds;
    ds.spec = spec;
    ds.states.reserve(n_steps);
    ds.forcings.reserve(n_steps);

    // Initial prognostic fields.
    FieldTensor<double> state(spec, CP);
    for (int c = 0; c < CP; ++c) {
        CounterRng ch_rng(key_derive(seed, 0x111u, static_cast<u64>(c)));
        const auto modes = detail::colored_modes(ch_rng, 4, 1.5, 1.0);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                state.at(c, y, x) = detail::eval_modes(modes, double(y) / H, double(x) / W);
        const double rms = std::sqrt(state.values.row(c).squaredNorm() / spec.pixels());
        if (rms > 0) state.values.row(c) /= rms;
    }

    auto solar_at = [&](int step, int y, int x) {
        const double latw = std::cos(spec.lat_of_row(y) * M_PI / 180.0);
        return latw * std::sin(2.0 * M_PI * (double(x) / W + double(step) / solar_period));
    };

    for (int step = 0; step < n_steps; ++step) {
        FieldTensor<double> forcing(spec, CF);
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                forcing.at(0, y, x) = solar_at(step, y, x);
                forcing.at(1, y, x) = std::tanh(3.0 * detail::eval_modes(mask_modes, double(y) / H, double(x) / W));
                for (int c = 2; c < CF; ++c) forcing.at(c, y, x) = 0.0;
            }
        }
        ds.states.push_back(state.template cast<T>());
        ds.forcings.push_back(forcing.template cast<T>());
        if (step + 1 == n_steps) break;

        // Advance: semi-Lagrangian advection, damping, solar coupling, fresh
        // colored noise to keep the process stationary.
        FieldTensor<double> next(spec, CP);
        for (int c = 0; c < CP; ++c) {
            CounterRng step_rng(key_derive(seed, 0x57e9u, static_cast<u64>(step), static_cast<u64>(c)));
            const auto noise_modes = detail::colored_modes(step_rng, 3, 1.5, 1.0);
            const double couple = 0.03 * (1.0 + 0.25 * c);
            MatXd chan = state.values.row(c);
            MatXd chan_mat(1, spec.pixels());
            chan_mat.row(0) = chan;
            for (int y = 0; y < H; ++y) {
                for (int x = 0; x < W; ++x) {
                    const i64 p = static_cast<i64>(y) * W + x;
                    const double adv = detail::bilinear_periodic_x<double>(chan_mat, H, W, y - v_flow(0, p),
                                                                           x - u_flow(0, p));
                    const double nz = detail::eval_modes(noise_modes, double(y) / H, double(x) / W);
                    next.at(c, y, x) = damp * adv + couple * solar_at(step, y, x) + noise_eta * nz;
                }
            }
        }
        state = next;
    }
    return ds;
}

/// Lag-1 per-channel autocorrelation over a state trajectory (diagnostic used
/// by the dataset regression tests).
template <class T>
double lag1_correlation(const std::vector<FieldTensor<T>>& states, int channel) {
    require(states.size() >= 2, "lag1: need at least two states");
    double sxy = 0, sxx = 0, syy = 0, sx = 0, sy = 0;
    i64 n = 0;
    for (std::size_t i = 0; i + 1 < states.size(); ++i) {
        const auto& a = states[i].values.row(channel);
        const auto& b = states[i + 1].values.row(channel);
        sxy += double(a.dot(b));
        sxx += double(a.squaredNorm());
        syy += double(b.squaredNorm());
        sx += double(a.sum());
        sy += double(b.sum());
        n += a.cols();
    }
    const double cov = sxy / n - (sx / n) * (sy / n);
    const double vx = sxx / n - (sx / n) * (sx / n);
    const double vy = syy / n - (sy / n) * (sy / n);
    return cov / std::sqrt(vx * vy);
}

}  // namespace swinflow
