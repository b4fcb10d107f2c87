// Copyright (c) 2026 swinflow contributors
// SPDX-License-Identifier: Apache-2.0
//
// Trigonometric-interpolant diffusion: x_t = cos(t) x0 + sin(t) z with
// v-prediction target, log-uniform noise prior, weighted training loss,
// second-order two-stage PF-ODE solver on a log-uniform sigma schedule, and
// autoregressive ensemble rollouts.

#pragma once

#include "swinflow/grid.hpp"
#include "swinflow/posenc.hpp"
#include "swinflow/rng.hpp"
#include "swinflow/swin.hpp"

#include <functional>
#include <vector>

namespace swinflow {

struct ChurnSchedule {
    double amount = 0.0;  // 0 reproduces the deterministic solver exactly
    // Active over the middle third of the schedule.
    bool active_step(int k, int solver_steps) const {
        return amount > 0.0 && 3 * k >= solver_steps && 3 * k < 2 * solver_steps;
    }
};

struct DiffusionConfig {
    double sigma_d = 1.0;
    double sigma_min = 0.2;
    double sigma_max = 500.0;
    int solver_steps = 10;
    ChurnSchedule churn;

    void validate() const {
        require(sigma_d > 0, "diffusion: sigma_d must be positive");
        require(0 < sigma_min && sigma_min < sigma_max, "diffusion: need 0 < sigma_min < sigma_max");
        require(solver_steps >= 1, "diffusion: solver_steps must be >= 1");
        require(churn.amount >= 0, "diffusion: churn amount must be >= 0");
    }

    double t_of_sigma(double sigma) const { return std::atan(sigma / sigma_d); }
    double t_min() const { return t_of_sigma(sigma_min); }
    double t_max() const { return t_of_sigma(sigma_max); }
};

/// cos/sin pair of the interpolant; the representable pi/2 is treated as the
/// exact right endpoint so the endpoint identities hold exactly.
template <class T>
std::pair<T, T> trig_coeffs(T t) {
    if (t == T(0)) return {T(1), T(0)};
    if (t == static_cast<T>(M_PI_2)) return {T(0), T(1)};
    return {std::cos(t), std::sin(t)};
}

template <class T>
MatX<T> interpolate(const MatX<T>& x0, const MatX<T>& z, T t) {
    const auto [c, s] = trig_coeffs(t);
    return c * x0 + s * z;
}

template <class T>
MatX<T> velocity_target(const MatX<T>& x0, const MatX<T>& z, T t) {
    const auto [c, s] = trig_coeffs(t);
    return c * z - s * x0;
}

struct NoiseDraw {
    double u = 0;    // uniform draw
    double tau = 0;  // log noise
    double t = 0;    // diffusion time
};

/// tau is log-uniform in [log sigma_min, log sigma_max]; t = arctan(e^tau / sigma_d).
inline NoiseDraw noise_draw_from_u(double u, const DiffusionConfig& cfg) {
    NoiseDraw d;
    d.u = u;
    d.tau = (1.0 - u) * std::log(cfg.sigma_min) + u * std::log(cfg.sigma_max);
    d.t = std::atan(std::exp(d.tau) / cfg.sigma_d);
    return d;
}

inline NoiseDraw sample_noise_draw(u64 t_key, const DiffusionConfig& cfg) {
    return noise_draw_from_u(uniform01(t_key, 0), cfg);
}

/// Gaussian noise field keyed by (sample event, window, token, channel) on the
/// unshifted model window grid, so the assembled field is identical no matter
/// which rank generates which piece.
template <class T>
MatX<T> noise_field(const SeedProtocol& sp, u64 event_id, int channels, const WindowLayout& lay,
                    double sigma_d) {
    MatX<T> z(channels, static_cast<i64>(lay.grid_h) * lay.grid_w);
    const int w = lay.window_px;
    for (int wy = 0; wy < lay.windows_y(); ++wy) {
        for (int wx = 0; wx < lay.windows_x(); ++wx) {
            const u64 wid = static_cast<u64>(wy) * lay.windows_x() + wx;
            for (int tok = 0; tok < lay.tokens_per_window(); ++tok) {
                const u64 key = sp.z_cell_key(event_id, wid, static_cast<u64>(tok));
                const i64 pix = lay.pixel_of(wy, wx, tok / w, tok % w);
                for (int c = 0; c < channels; ++c)
                    z(c, pix) = static_cast<T>(sigma_d * gaussian(key, static_cast<u64>(c)));
            }
        }
    }
    return z;
}

// ---------------------------------------------------------------------------
// Weighted diffusion loss.

/// loss = (1/|S|) sum_s sum_v kappa(v) alpha(s) err(v,s)^2
template <class T>
T weighted_sq_loss(const MatX<T>& err, const LossWeights<T>& w, int grid_width) {
    require(err.rows() == w.kappa.size(), "loss: kappa size does not match channels");
    T loss = 0;
    for (i64 p = 0; p < err.cols(); ++p) {
        const T alpha = w.alpha_at_pixel(p, grid_width);
        loss += alpha * (w.kappa.array() * err.col(p).array().square()).sum();
    }
    return loss / static_cast<T>(err.cols());
}

/// d loss / d err.
template <class T>
MatX<T> weighted_sq_loss_grad(const MatX<T>& err, const LossWeights<T>& w, int grid_width) {
    MatX<T> g(err.rows(), err.cols());
    for (i64 p = 0; p < err.cols(); ++p) {
        const T alpha = w.alpha_at_pixel(p, grid_width);
        g.col(p) = (T(2) * alpha / T(err.cols())) * (w.kappa.array() * err.col(p).array()).matrix();
    }
    return g;
}

/// One standardized training sample: previous state, residual target x0, and
/// forcings, all in standardized units.
template <class T>
struct SampleBatch {
    MatX<T> x_prev;    // C_p x N
    MatX<T> x0;        // C_p x N residual target
    MatX<T> forcings;  // C_f x N
};

/// Concatenate the diffusion state with conditioning and add the positional
/// encoding: x_hat = [x_t / sigma_d, x_prev, x_f] + posenc.
template <class T>
MatX<T> assemble_model_input(const MatX<T>& x_t, const SampleBatch<T>& sb, const MatX<T>& pos_enc,
                             double sigma_d) {
    MatX<T> input(x_t.rows() + sb.x_prev.rows() + sb.forcings.rows(), x_t.cols());
    input.topRows(x_t.rows()) = x_t / static_cast<T>(sigma_d);
    input.middleRows(x_t.rows(), sb.x_prev.rows()) = sb.x_prev;
    input.bottomRows(sb.forcings.rows()) = sb.forcings;
    input += pos_enc;
    return input;
}

template <class T>
struct DiffusionLossResult {
    T loss = 0;
    Parameters<T> grads;
    MatX<T> model_out;  // decode output, kept for audits
};

/// Training loss and parameter gradients for one sample. `t_key` follows the
/// shared-seed protocol; `z` is the sample's noise field.
template <class T>
DiffusionLossResult<T> diffusion_loss_sample(const Parameters<T>& p, const SampleBatch<T>& sb,
                                             const LossWeights<T>& w, const DiffusionConfig& dc,
                                             u64 t_key, const MatX<T>& z, const MatX<T>& pos_enc,
                                             int grid_h, int grid_w) {
    dc.validate();
    require(sb.x0.rows() == p.cfg.out_channels, "diffusion loss: residual channel mismatch");
    require(w.kappa.size() == p.cfg.out_channels, "diffusion loss: weight dims mismatch");
    const NoiseDraw nd = sample_noise_draw(t_key, dc);
    const T t = static_cast<T>(nd.t);
    const T sd = static_cast<T>(dc.sigma_d);
    const MatX<T> x_t = interpolate(sb.x0, z, t);
    const MatX<T> v_t = velocity_target(sb.x0, z, t);
    const MatX<T> input = assemble_model_input(x_t, sb, pos_enc, dc.sigma_d);

    ForwardCache<T> fc;
    const MatX<T> f_out = forward(p, input, t, grid_h, grid_w, &fc);
    const MatX<T> err = sd * f_out - v_t;

    DiffusionLossResult<T> res;
    res.loss = weighted_sq_loss(err, w, grid_w);
    res.model_out = f_out;
    const MatX<T> d_out = sd * weighted_sq_loss_grad(err, w, grid_w);
    res.grads = backward(p, fc, d_out).grads;
    return res;
}

// ---------------------------------------------------------------------------
// PF-ODE sampling: DPMSolver++ 2S in data-prediction form with the midpoint
// stage placed at the log-sigma midpoint, over a log-uniform sigma schedule
// (endpoints inclusive).

struct SolveDiag {
    int f_evals = 0;
    std::vector<double> t_nodes;
};

/// `net(x, t)` returns the velocity estimate sigma_d * F(x / sigma_d, t).
/// `x_init` must be N(0, sigma_d^2) noise; the state is integrated from
/// t(sigma_max) down to t(sigma_min) and the final state returned.
template <class T, class Net>
MatX<T> solve_pf_ode(Net&& net, const MatX<T>& x_init, const DiffusionConfig& dc, u64 churn_key = 0,
                     SolveDiag* diag = nullptr) {
    dc.validate();
    const int S = dc.solver_steps;
    const double sd = dc.sigma_d;
    std::vector<double> sigma(S + 1);
    for (int k = 0; k <= S; ++k) {
        const double f = double(k) / S;
        sigma[k] = std::exp((1.0 - f) * std::log(dc.sigma_max) + f * std::log(dc.sigma_min));
    }

    auto x0_hat = [&](const MatX<T>& x, double t) {
        const auto [c, s] = trig_coeffs(static_cast<T>(t));
        MatX<T> v = net(x, static_cast<T>(t));
        if (diag) ++diag->f_evals;
        return (c * x - s * v).eval();
    };

    MatX<T> x = x_init;
    double t_cur = dc.t_of_sigma(sigma[0]);
    double sigma_cur = sigma[0];
    if (diag) diag->t_nodes.push_back(t_cur);
    u64 churn_ctr = 0;

    for (int k = 0; k < S; ++k) {
        const double sig_next = sigma[k + 1];
        const double t_next = dc.t_of_sigma(sig_next);
        const double sig_mid = std::sqrt(sigma_cur * sig_next);
        const double t_mid = dc.t_of_sigma(sig_mid);

        const double a_s = std::cos(t_cur), b_s = std::sin(t_cur) * sd;
        const double a_m = std::cos(t_mid), b_m = std::sin(t_mid) * sd;
        const double a_t = std::cos(t_next), b_t = std::sin(t_next) * sd;

        const MatX<T> d1 = x0_hat(x, t_cur);
        const double r_mid = sig_mid / sigma_cur;  // e^{-h/2}
        MatX<T> x_mid = static_cast<T>(b_m / b_s) * x - static_cast<T>(a_m * (r_mid - 1.0)) * d1;
        const MatX<T> d2 = x0_hat(x_mid, t_mid);
        const double r = sig_next / sigma_cur;  // e^{-h}
        x = static_cast<T>(b_t / b_s) * x - static_cast<T>(a_t * (r - 1.0)) * d2;
        if (!x.allFinite()) {
            throw NumericsError("pf-ode solver diverged at step " + std::to_string(k) + " (t=" +
                                std::to_string(t_next) + ")");
        }
        t_cur = t_next;
        sigma_cur = sig_next;

        if (dc.churn.active_step(k, S) && k + 1 < S) {
            // Rotate the state toward slightly higher noise with fresh noise,
            // then let the remaining steps integrate back down.
            const double delta = dc.churn.amount * 0.05 * (dc.t_of_sigma(sigma[k]) - t_next);
            if (delta > 0) {
                MatX<T> zeta(x.rows(), x.cols());
                for (i64 i = 0; i < zeta.size(); ++i)
                    zeta.data()[i] = static_cast<T>(sd * gaussian(churn_key, churn_ctr++));
                const double c = std::cos(delta), s = std::sin(delta);
                x = static_cast<T>(c) * x + static_cast<T>(s) * zeta;
                t_cur += delta;
                sigma_cur = sd * std::tan(t_cur);
            }
        }
        if (diag) diag->t_nodes.push_back(t_cur);
    }
    return x;
}

// ---------------------------------------------------------------------------
// Forecasting: the trained model plus the statistics needed to move between
// physical and standardized units.

template <class T>
struct ForecastModel {
    Parameters<T> params;  // inference (EMA) weights
    Standardizer<T> state_std;
    Standardizer<T> resid_std;
    Standardizer<T> forcing_std;
    MatX<T> pos_enc;
    DiffusionConfig dcfg;
    GridSpec spec;

    WindowLayout noise_layout() const {
        return WindowLayout{spec.height, spec.width, params.cfg.window_px, 0};
    }
};

/// One forecast step: sample a residual with the PF-ODE and add it to the
/// previous physical state. Deterministic given `noise_event`.
template <class T>
MatX<T> forecast_step(const ForecastModel<T>& fm, const MatX<T>& x_prev_phys, const MatX<T>& forcing_phys,
                      const SeedProtocol& sp, u64 noise_event, SolveDiag* diag = nullptr) {
    const int H = fm.spec.height, W = fm.spec.width;
    SampleBatch<T> sb;
    sb.x_prev = fm.state_std.apply_mat(x_prev_phys);
    sb.forcings = fm.forcing_std.apply_mat(forcing_phys);
    sb.x0 = MatX<T>();  // unused for sampling

    auto net = [&](const MatX<T>& xs, T t) {
        MatX<T> input(fm.params.cfg.in_channels, xs.cols());
        input.topRows(xs.rows()) = xs / static_cast<T>(fm.dcfg.sigma_d);
        input.middleRows(xs.rows(), sb.x_prev.rows()) = sb.x_prev;
        input.bottomRows(sb.forcings.rows()) = sb.forcings;
        input += fm.pos_enc;
        return (static_cast<T>(fm.dcfg.sigma_d) * forward(fm.params, input, t, H, W)).eval();
    };

    const MatX<T> z_init =
        noise_field<T>(sp, key_derive(noise_event, 0x1217u), fm.params.cfg.out_channels, fm.noise_layout(),
                       fm.dcfg.sigma_d);
    const MatX<T> resid_std_units =
        solve_pf_ode(net, z_init, fm.dcfg, key_derive(noise_event, 0xc4u), diag);
    return x_prev_phys + fm.resid_std.invert_mat(resid_std_units);
}

/// Autoregressive ensemble: members differ only in their noise streams; each
/// step's output becomes the next initial condition.
template <class T>
std::vector<std::vector<MatX<T>>> rollout_ensemble(const ForecastModel<T>& fm, const MatX<T>& x_init_phys,
                                                   const std::vector<MatX<T>>& forcings_phys, int n_members,
                                                   int n_steps, const SeedProtocol& sp, u64 rollout_id) {
    require(static_cast<int>(forcings_phys.size()) >= n_steps, "rollout: not enough forcing steps");
    std::vector<std::vector<MatX<T>>> out(n_members);
    for (int m = 0; m < n_members; ++m) {
        MatX<T> x = x_init_phys;
        out[m].reserve(n_steps);
        for (int k = 0; k < n_steps; ++k) {
            const u64 ev = key_derive(rollout_id, static_cast<u64>(m), static_cast<u64>(k));
            x = forecast_step(fm, x, forcings_phys[k], sp, ev);
            out[m].push_back(x);
        }
    }
    return out;
}

}  // namespace swinflow
