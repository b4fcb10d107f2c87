// Copyright (c) 2026 swinflow contributors
// SPDX-License-Identifier: Apache-2.0
//
// Ensemble verification: latitude-weighted RMSE, fair CRPS, spread/skill
// ratio, and the zonal power spectrum used as the rollout-stability
// diagnostic. Fields are (channels x H*W); members is one field per ensemble
// member. Latitude weights have unit mean.

#pragma once

#include "swinflow/grid.hpp"

#include <string>
#include <vector>

namespace swinflow {

template <class T>
MatX<T> ensemble_mean(const std::vector<MatX<T>>& members) {
    require(!members.empty(), "metrics: empty ensemble");
    MatX<T> m = members[0];
    for (std::size_t i = 1; i < members.size(); ++i) m += members[i];
    return m / static_cast<T>(members.size());
}

/// sqrt of the alpha-weighted mean squared error over pixels and channels.
template <class T>
T lat_rmse(const MatX<T>& forecast, const MatX<T>& truth, const VecX<T>& alpha_row, int grid_width) {
    require(forecast.rows() == truth.rows() && forecast.cols() == truth.cols(),
            "metrics: forecast/truth shape mismatch");
    T acc = 0;
    for (i64 p = 0; p < forecast.cols(); ++p) {
        const T alpha = alpha_row[static_cast<int>(p / grid_width)];
        acc += alpha * (forecast.col(p) - truth.col(p)).squaredNorm();
    }
    return std::sqrt(acc / static_cast<T>(forecast.size()));
}

/// Fair (unbiased) per-pixel CRPS estimator:
///   mean_m |x_m - y| - 1/(2 M (M-1)) sum_{m != m'} |x_m - x_m'|.
/// The biased variant divides the pair term by 2 M^2 instead; a single-member
/// ensemble degenerates to |x - y| (the biased form).
template <class T>
MatX<T> crps_field(const std::vector<MatX<T>>& members, const MatX<T>& truth, bool fair = true) {
    require(!members.empty(), "metrics: empty ensemble");
    const int m_count = static_cast<int>(members.size());
    MatX<T> out = MatX<T>::Zero(truth.rows(), truth.cols());
    for (const auto& m : members) out += (m - truth).cwiseAbs();
    out /= static_cast<T>(m_count);
    if (m_count > 1) {
        MatX<T> pair = MatX<T>::Zero(truth.rows(), truth.cols());
        for (int i = 0; i < m_count; ++i)
            for (int j = 0; j < m_count; ++j)
                if (i != j) pair += (members[i] - members[j]).cwiseAbs();
        const T denom = fair ? T(2) * m_count * (m_count - 1) : T(2) * m_count * m_count;
        out -= pair / denom;
    }
    return out;
}

/// Alpha-weighted aggregate of the per-pixel CRPS.
template <class T>
T crps(const std::vector<MatX<T>>& members, const MatX<T>& truth, const VecX<T>& alpha_row,
       int grid_width, bool fair = true) {
    const MatX<T> field = crps_field(members, truth, fair);
    T acc = 0;
    for (i64 p = 0; p < field.cols(); ++p) {
        acc += alpha_row[static_cast<int>(p / grid_width)] * field.col(p).sum();
    }
    return acc / static_cast<T>(field.size());
}

/// Ensemble spread: sqrt of the alpha-weighted mean of the fair-corrected
/// per-pixel ensemble variance, (M+1)/M * unbiased variance.
template <class T>
T ensemble_spread(const std::vector<MatX<T>>& members, const VecX<T>& alpha_row, int grid_width) {
    require(members.size() >= 2, "metrics: spread needs at least two members");
    const int m_count = static_cast<int>(members.size());
    const MatX<T> mean = ensemble_mean(members);
    MatX<T> var = MatX<T>::Zero(mean.rows(), mean.cols());
    for (const auto& m : members) var += (m - mean).cwiseAbs2();
    var /= static_cast<T>(m_count - 1);
    var *= static_cast<T>(m_count + 1) / static_cast<T>(m_count);
    T acc = 0;
    for (i64 p = 0; p < var.cols(); ++p) {
        acc += alpha_row[static_cast<int>(p / grid_width)] * var.col(p).sum();
    }
    return std::sqrt(acc / static_cast<T>(var.size()));
}

/// Spread over ensemble-mean RMSE; below 1 indicates under-dispersion.
template <class T>
T spread_skill_ratio(const std::vector<MatX<T>>& members, const MatX<T>& truth, const VecX<T>& alpha_row,
                     int grid_width) {
    const T spread = ensemble_spread(members, alpha_row, grid_width);
    const T rmse = lat_rmse(ensemble_mean(members), truth, alpha_row, grid_width);
    return spread / rmse;
}

/// Discrete power along longitude, alpha-averaged over rows, for one channel.
/// Entry k holds the contribution of wavenumber k (negative frequencies
/// folded), so the sum over k >= 1 equals the alpha-weighted mean of the
/// per-row variances.
template <class T>
VecX<T> zonal_power_spectrum(const MatX<T>& field_1ch, const GridSpec& spec, const VecX<T>& alpha_row) {
    require(field_1ch.rows() == 1, "spectrum: expects a single channel");
    const int W = spec.width, H = spec.height;
    const int n_k = W / 2 + 1;
    VecX<T> power = VecX<T>::Zero(n_k);
    for (int y = 0; y < H; ++y) {
        for (int k = 0; k < n_k; ++k) {
            T re = 0, im = 0;
            for (int x = 0; x < W; ++x) {
                const T v = field_1ch(0, static_cast<i64>(y) * W + x);
                const T ang = static_cast<T>(-2.0 * M_PI * k * x / W);
                re += v * std::cos(ang);
                im += v * std::sin(ang);
            }
            T p = (re * re + im * im) / (static_cast<T>(W) * W);
            if (k != 0 && !(W % 2 == 0 && k == W / 2)) p *= 2;  // fold the conjugate frequency
            power[k] += alpha_row[y] * p;
        }
    }
    return power / static_cast<T>(H);
}

// ---------------------------------------------------------------------------
// CSV surfaces.

struct MetricsRow {
    int lead = 0;
    int channel = 0;
    double rmse = 0, crps = 0, ssr = 0;
};

inline std::string metrics_csv(const std::vector<MetricsRow>& rows) {
    std::string out = "lead,channel,rmse,crps,ssr\n";
    for (const auto& r : rows) {
        out += std::to_string(r.lead) + "," + std::to_string(r.channel) + "," + std::to_string(r.rmse) +
               "," + std::to_string(r.crps) + "," + std::to_string(r.ssr) + "\n";
    }
    return out;
}

template <class T>
std::string spectrum_csv(const VecX<T>& power) {
    std::string out = "k,power\n";
    for (i64 k = 0; k < power.size(); ++k) {
        out += std::to_string(k) + "," + std::to_string(double(power[k])) + "\n";
    }
    return out;
}

}  // namespace swinflow
