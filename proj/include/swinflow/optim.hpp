// Copyright (c) 2026 swinflow contributors
// SPDX-License-Identifier: Apache-2.0
//
// AdamW with the warmup/constant/linear-decay schedule and the parameter EMA
// used for inference weights.

#pragma once

#include "swinflow/model.hpp"

#include <cmath>

namespace swinflow {

struct TrainConfig {
    double beta1 = 0.85;
    double beta2 = 0.9;
    double eps = 1e-8;
    double weight_decay = 0.01;
    double lr_peak = 5e-4;
    i64 warmup_images = 2000;
    i64 decay_images = 4000;  // final linear decay window
    i64 total_images = 60000;
    double ema_halflife_images = 2000;

    void validate() const {
        require(0 < beta1 && beta1 < beta2 && beta2 < 1, "train: need 0 < beta1 < beta2 < 1");
        require(lr_peak > 0 && total_images > 0, "train: lr and total images must be positive");
        require(warmup_images + decay_images <= total_images, "train: warmup + decay exceed total images");
    }
};

/// Linear warmup, constant plateau, linear decay to zero over the final
/// `decay_images`.
inline double lr_at(const TrainConfig& tc, i64 images_seen) {
    if (images_seen < tc.warmup_images) {
        return tc.lr_peak * double(images_seen) / double(tc.warmup_images);
    }
    const i64 decay_start = tc.total_images - tc.decay_images;
    if (images_seen >= decay_start) {
        const double f = double(tc.total_images - images_seen) / double(tc.decay_images);
        return tc.lr_peak * std::max(0.0, f);
    }
    return tc.lr_peak;
}

template <class T>
class AdamW {
public:
    AdamW(const ModelConfig& cfg, const TrainConfig& tc) : tc_(tc) {
        tc.validate();
        m_ = Parameters<T>::zeros(cfg);
        v_ = Parameters<T>::zeros(cfg);
    }

    i64 step_count() const { return steps_; }
    void set_step_count(i64 n) { steps_ = n; }

    void step(Parameters<T>& params, Parameters<T>& grads, double lr) {
        ++steps_;
        const T b1 = static_cast<T>(tc_.beta1), b2 = static_cast<T>(tc_.beta2);
        const T bc1 = T(1) - std::pow(b1, static_cast<T>(steps_));
        const T bc2 = T(1) - std::pow(b2, static_cast<T>(steps_));
        auto pa = parameter_arrays(params);
        auto ga = parameter_arrays(grads);
        auto ma = parameter_arrays(m_);
        auto va = parameter_arrays(v_);
        for (std::size_t i = 0; i < pa.size(); ++i) {
            T* p = param_data<T>(pa[i]);
            T* g = param_data<T>(ga[i]);
            T* m = param_data<T>(ma[i]);
            T* v = param_data<T>(va[i]);
            for (i64 j = 0; j < pa[i].size; ++j) {
                m[j] = b1 * m[j] + (T(1) - b1) * g[j];
                v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
                const T mhat = m[j] / bc1;
                const T vhat = v[j] / bc2;
                p[j] -= static_cast<T>(lr) * (mhat / (std::sqrt(vhat) + static_cast<T>(tc_.eps)) +
                                              static_cast<T>(tc_.weight_decay) * p[j]);
            }
        }
    }

    Parameters<T>& moments_m() { return m_; }
    Parameters<T>& moments_v() { return v_; }

private:
    TrainConfig tc_;
    Parameters<T> m_;
    Parameters<T> v_;
    i64 steps_ = 0;
};

/// EMA toward `params` with per-image decay 2^(-1/halflife): after exactly
/// one halflife of images against a frozen target the gap halves.
template <class T>
void ema_update(Parameters<T>& ema, Parameters<T>& params, double images_delta, double halflife_images) {
    const T d = static_cast<T>(std::pow(2.0, -images_delta / halflife_images));
    auto ea = parameter_arrays(ema);
    auto pa = parameter_arrays(params);
    for (std::size_t i = 0; i < ea.size(); ++i) {
        T* e = param_data<T>(ea[i]);
        const T* p = param_data<T>(pa[i]);
        for (i64 j = 0; j < ea[i].size; ++j) e[j] = p[j] + (e[j] - p[j]) * d;
    }
}

}  // namespace swinflow
