// Copyright (c) 2026 swinflow contributors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "swinflow/posenc.hpp"
#include "swinflow/swin.hpp"

#include <set>

using namespace swinflow;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.hidden_dim = 16;
    c.n_heads = 4;
    c.ffn_dim = 32;
    c.n_layers = 2;
    c.window_px = 6;
    c.in_channels = 4;
    c.out_channels = 2;
    c.time_dim = 16;
    return c;
}

MatX<double> random_input(int channels, int grid_h, int grid_w, u64 seed) {
    MatX<double> x(channels, static_cast<i64>(grid_h) * grid_w);
    for (i64 i = 0; i < x.size(); ++i) x.data()[i] = gaussian(seed, i);
    return x;
}

}  // namespace

TEST_CASE("positional encoding: zero position gives sin 0 / cos 1") {
    GridSpec s;
    s.height = 8;
    s.width = 8;
    s.channels_prognostic = 6;
    const auto enc = sinusoidal_pos_encode<double>(s, 6);
    // channel layout: [y-sin, y-cos, y-sin, x-sin, x-cos, x-sin]
    CHECK(enc(0, 0) == 0.0);
    CHECK(enc(1, 0) == 1.0);
    CHECK(enc(3, 0) == 0.0);
    CHECK(enc(4, 0) == 1.0);
    CHECK(enc.minCoeff() >= -1.0);
    CHECK(enc.maxCoeff() <= 1.0);
}

TEST_CASE("positional encoding: no collisions on a 64x64 grid") {
    GridSpec s;
    s.height = 64;
    s.width = 64;
    s.channels_prognostic = 8;
    const auto enc = sinusoidal_pos_encode<double>(s, 8);
    std::set<std::vector<double>> seen;
    for (i64 p = 0; p < s.pixels(); ++p) {
        std::vector<double> v(enc.col(p).data(), enc.col(p).data() + enc.rows());
        CHECK(seen.insert(v).second);
    }
}

TEST_CASE("positional encoding: function of coordinates only and even-channel precondition") {
    GridSpec s;
    s.height = 4;
    s.width = 4;
    s.channels_prognostic = 4;
    const auto a = sinusoidal_pos_encode<double>(s, 4);
    const auto b = sinusoidal_pos_encode<double>(s, 4);
    CHECK(a == b);
    CHECK_THROWS_AS(sinusoidal_pos_encode<double>(s, 5), ConfigError);
}

TEST_CASE("window partition arithmetic") {
    WindowLayout lay{24, 48, 6, 0};
    lay.validate();
    CHECK(lay.windows_y() == 4);
    CHECK(lay.windows_x() == 8);
    CHECK(lay.n_windows() == 32);
    CHECK(lay.tokens_per_window() == 36);

    WindowLayout paper{720, 1440, 60, 0};
    CHECK(paper.n_windows() == 288);  // 12 x 24 windows of 60x60 pixels

    WindowLayout bad{25, 48, 6, 0};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("window partition/merge is an exact inverse under both shifts") {
    for (int shift : {0, 3}) {
        WindowLayout lay{12, 12, 6, shift};
        MatX<double> x = random_input(5, 12, 12, 42);
        MatX<double> y = MatX<double>::Zero(5, x.cols());
        for (int wy = 0; wy < lay.windows_y(); ++wy)
            for (int wx = 0; wx < lay.windows_x(); ++wx)
                window_scatter(y, MatX<double>(window_gather(x, lay, wy, wx)), lay, wy, wx);
        CHECK(x == y);  // bitwise
    }
}

TEST_CASE("every pixel belongs to exactly one window under either shift") {
    for (int shift : {0, 3}) {
        WindowLayout lay{12, 18, 6, shift};
        std::vector<int> hits(12 * 18, 0);
        for (int wy = 0; wy < lay.windows_y(); ++wy)
            for (int wx = 0; wx < lay.windows_x(); ++wx)
                for (int r = 0; r < 6; ++r)
                    for (int c = 0; c < 6; ++c) hits[lay.pixel_of(wy, wx, r, c)]++;
        for (int h : hits) CHECK(h == 1);
    }
}

TEST_CASE("rope: zero position is identity, rotations preserve norm") {
    CounterRng rng(5);
    VecX<double> v(8);
    for (int i = 0; i < 8; ++i) v[i] = rng.normal();
    CHECK(rope_apply(v, 0, 0) == v);
    for (int trial = 0; trial < 10; ++trial) {
        const int r = static_cast<int>(rng.uniform_int(0, 100));
        const int c = static_cast<int>(rng.uniform_int(0, 100));
        const VecX<double> rot = rope_apply(v, r, c);
        CHECK(rot.norm() == doctest::Approx(v.norm()).epsilon(1e-12));
    }
}

TEST_CASE("rope: inner products depend only on per-axis offsets") {
    CounterRng rng(6);
    VecX<double> q(8), k(8);
    for (int i = 0; i < 8; ++i) {
        q[i] = rng.normal();
        k[i] = rng.normal();
    }
    const double a = rope_apply(q, 5, 7).dot(rope_apply(k, 3, 7));
    const double b = rope_apply(q, 2, 0).dot(rope_apply(k, 0, 0));
    CHECK(a == doctest::Approx(b).epsilon(1e-6));
    const double c = rope_apply(q, 11, 4).dot(rope_apply(k, 9, 4));
    CHECK(a == doctest::Approx(c).epsilon(1e-6));
}

TEST_CASE("rope: head_dim not divisible by 4 is rejected") {
    CHECK_THROWS_AS(rope_angles<double>(6, 0, 0), ConfigError);
}

TEST_CASE("parameter count formula equals allocation exactly") {
    for (auto cfg : {tiny_config()}) {
        auto p = Parameters<double>::zeros(cfg);
        CHECK(parameter_count(p) == parameter_count_formula(cfg));
        cfg.blocks_per_layer = 2;
        cfg.ffn_dim = 48;
        auto p2 = Parameters<double>::zeros(cfg);
        CHECK(parameter_count(p2) == parameter_count_formula(cfg));
    }
}

TEST_CASE("parameter count: 1.3B table configuration lands within 2% of 1.3e9") {
    // Dim/heads/FFN from the scaling table; 12 pipeline stages host 10 Swin
    // layers of two transformer blocks each; channel counts from the dataset
    // description (70 prognostic, residual+condition+forcings in, padded even).
    ModelConfig c;
    c.hidden_dim = 1536;
    c.n_heads = 12;
    c.ffn_dim = 9216;
    c.n_layers = 10;
    c.blocks_per_layer = 2;
    c.window_px = 30;
    c.in_channels = 144;
    c.out_channels = 70;
    const i64 n = parameter_count_formula(c);
    CHECK(n == 1324144198);  // frozen golden
    CHECK(std::abs(double(n) - 1.3e9) / 1.3e9 < 0.02);
}

TEST_CASE("forward: all-zero linears with unit gains give an all-zero output") {
    const ModelConfig cfg = tiny_config();
    auto p = Parameters<double>::zeros(cfg);
    for (auto& b : p.blocks) {
        b.g_attn.setOnes();
        b.g_ffn.setOnes();
    }
    p.g_decode.setOnes();
    const MatX<double> x = random_input(cfg.in_channels, 12, 12, 7);
    const MatX<double> y = forward(p, x, 0.5, 12, 12);
    CHECK(y.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("forward: rejects non-finite input with a diagnostic") {
    const ModelConfig cfg = tiny_config();
    auto p = init_parameters_random<double>(cfg, 1);
    MatX<double> x = random_input(cfg.in_channels, 12, 12, 8);
    x(1, 5) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(forward(p, x, 0.5, 12, 12), NumericsError);
}

TEST_CASE("forward: single unshifted layer is window-local and permutation equivariant") {
    ModelConfig cfg = tiny_config();
    cfg.n_layers = 1;  // block 0 -> shift 0
    auto p = init_parameters_random<double>(cfg, 3);
    const int H = 12, W = 12;
    const WindowLayout lay{H, W, 6, 0};
    const MatX<double> x = random_input(cfg.in_channels, H, W, 9);

    // Swap windows (0,0) and (1,1) of the input.
    MatX<double> xp = x;
    {
        const MatX<double> w00 = window_gather(x, lay, 0, 0);
        const MatX<double> w11 = window_gather(x, lay, 1, 1);
        window_scatter(xp, w11, lay, 0, 0);
        window_scatter(xp, w00, lay, 1, 1);
    }
    const MatX<double> y = forward(p, x, 0.3, H, W);
    const MatX<double> yp = forward(p, xp, 0.3, H, W);
    const MatX<double> y00 = window_gather(y, lay, 0, 0);
    const MatX<double> y11 = window_gather(y, lay, 1, 1);
    const MatX<double> yp00 = window_gather(yp, lay, 0, 0);
    const MatX<double> yp11 = window_gather(yp, lay, 1, 1);
    CHECK((yp00 - y11).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((yp11 - y00).cwiseAbs().maxCoeff() < 1e-12);
    // Untouched window unchanged.
    CHECK(window_gather(y, lay, 0, 1) == window_gather(yp, lay, 0, 1));
}

TEST_CASE("forward: zeroing input outside a window only changes that window (unshifted layer)") {
    ModelConfig cfg = tiny_config();
    cfg.n_layers = 1;
    auto p = init_parameters_random<double>(cfg, 4);
    const int H = 12, W = 18;
    const WindowLayout lay{H, W, 6, 0};
    const MatX<double> x = random_input(cfg.in_channels, H, W, 10);
    MatX<double> xz = x;
    // Zero everything outside window (1, 2).
    for (int wy = 0; wy < lay.windows_y(); ++wy)
        for (int wx = 0; wx < lay.windows_x(); ++wx)
            if (!(wy == 1 && wx == 2)) window_scatter(xz, MatX<double>(MatX<double>::Zero(cfg.in_channels, 36)), lay, wy, wx);
    const MatX<double> y = forward(p, x, 0.4, H, W);
    const MatX<double> yz = forward(p, xz, 0.4, H, W);
    CHECK(window_gather(y, lay, 1, 2) == window_gather(yz, lay, 1, 2));  // bitwise
}

TEST_CASE("attention rows sum to one, including seam-masked windows") {
    ModelConfig cfg = tiny_config();  // 2 blocks: shifts 0 and 3
    auto p = init_parameters_random<double>(cfg, 11);
    const MatX<double> x = random_input(cfg.in_channels, 12, 12, 12);
    ForwardCache<double> fc;
    forward(p, x, 0.6, 12, 12, &fc);
    bool saw_masked = false;
    for (int blk = 0; blk < cfg.n_blocks(); ++blk) {
        const WindowLayout lay = cfg.layout_for_block(12, 12, blk);
        for (int wy = 0; wy < lay.windows_y(); ++wy) {
            if (lay.needs_seam_mask(wy)) saw_masked = true;
            for (int wx = 0; wx < lay.windows_x(); ++wx) {
                const auto& wc = fc.blocks[blk].wins[wy * lay.windows_x() + wx];
                for (const auto& head : wc.heads) {
                    for (i64 r = 0; r < head.probs.rows(); ++r) {
                        CHECK(head.probs.row(r).sum() == doctest::Approx(1.0).epsilon(1e-6));
                    }
                }
            }
        }
    }
    CHECK(saw_masked);
}

TEST_CASE("seam mask blocks attention across the latitude seam only") {
    WindowLayout lay{12, 12, 6, 3};
    const auto m = seam_mask<double>(lay, lay.windows_y() - 1);
    REQUIRE(m.size() > 0);
    // Token rows 0..2 are physical bottom rows, 3..5 wrapped top rows.
    CHECK(m(0 * 6 + 0, 2 * 6 + 5) == 0.0);
    CHECK(m(0 * 6 + 0, 3 * 6 + 0) == -std::numeric_limits<double>::infinity());
    CHECK(m(4 * 6 + 1, 5 * 6 + 2) == 0.0);
    CHECK(seam_mask<double>(lay, 0).size() == 0);
    WindowLayout unshifted{12, 12, 6, 0};
    CHECK(seam_mask<double>(unshifted, 1).size() == 0);
}

TEST_CASE("rmsnorm: unit gain output has unit rms") {
    CounterRng rng(21);
    MatX<double> x(16, 40);
    for (i64 i = 0; i < x.size(); ++i) x.data()[i] = 3.0 * rng.normal();
    MatX<double> u, n;
    VecX<double> rms;
    const VecX<double> ones = VecX<double>::Ones(16);
    ops::prenorm_plain(x, ones, u, rms, n);
    for (i64 j = 0; j < n.cols(); ++j) {
        CHECK(std::sqrt(n.col(j).squaredNorm() / 16.0) == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("swiglu maps zero to zero") {
    const ModelConfig cfg = tiny_config();
    auto p = init_parameters_random<double>(cfg, 30);
    MatX<double> zero = MatX<double>::Zero(cfg.hidden_dim, 7);
    MatX<double> gate, up;
    const MatX<double> y = ops::swiglu_fwd(p.blocks[0], zero, gate, up);
    CHECK(y.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("adaln: neutral modulation reduces to the plain pre-norm output") {
    const int h = 8;
    CounterRng rng(31);
    MatX<double> x(h, 5);
    for (i64 i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    const VecX<double> g = VecX<double>::Ones(h);
    const VecX<double> zero = VecX<double>::Zero(h);
    const VecX<double> one = VecX<double>::Ones(h);
    MatX<double> u, xm, n;
    VecX<double> rms;
    ops::prenorm_modulate(x, g, zero, zero, one, u, rms, xm);
    ops::prenorm_plain(x, g, u, rms, n);
    CHECK((xm - n).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("adaln: distinct diffusion times give distinct modulation vectors") {
    const ModelConfig cfg = tiny_config();
    auto p = init_parameters_random<double>(cfg, 32);
    const auto e1 = time_embed(p, 0.3);
    const auto e2 = time_embed(p, 0.9);
    const auto v1 = ada_vectors(p.blocks[0], e1.embed);
    const auto v2 = ada_vectors(p.blocks[0], e2.embed);
    CHECK((v1.a1 - v2.a1).cwiseAbs().maxCoeff() > 1e-8);
    // Spatial broadcast: the vectors do not depend on window or pixel at all
    // by construction (single h-vector per block); assert shape.
    CHECK(v1.a1.size() == cfg.hidden_dim);
}

TEST_CASE("backward: matches central finite differences on 50 random parameters") {
    const ModelConfig cfg = tiny_config();
    auto p = init_parameters_random<double>(cfg, 77);
    const int H = 12, W = 12;
    const MatX<double> x = random_input(cfg.in_channels, H, W, 78);
    const double t = 0.8;

    // Scalar probe loss: sum(R .* output).
    MatX<double> R(cfg.out_channels, static_cast<i64>(H) * W);
    for (i64 i = 0; i < R.size(); ++i) R.data()[i] = gaussian(79, i);

    ForwardCache<double> fc;
    forward(p, x, t, H, W, &fc);
    const auto res = backward(p, fc, R);

    auto arrays = parameter_arrays(p);
    auto garrays = parameter_arrays(const_cast<Parameters<double>&>(res.grads));
    REQUIRE(arrays.size() == garrays.size());

    CounterRng pick(80);
    const double eps = 1e-3;
    int checked = 0;
    while (checked < 50) {
        const std::size_t ai = static_cast<std::size_t>(pick.uniform_int(0, static_cast<i64>(arrays.size()) - 1));
        const i64 ei = pick.uniform_int(0, arrays[ai].size - 1);
        double* v = param_data<double>(arrays[ai]) + ei;
        const double orig = *v;
        *v = orig + eps;
        const double lp = (R.array() * forward(p, x, t, H, W).array()).sum();
        *v = orig - eps;
        const double lm = (R.array() * forward(p, x, t, H, W).array()).sum();
        *v = orig;
        const double fd = (lp - lm) / (2 * eps);
        const double an = param_data<double>(garrays[ai])[ei];
        if (std::abs(fd) < 1e-7 && std::abs(an) < 1e-7) continue;  // skip numerically dead picks
        CHECK(std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8}) < 1e-4);
        ++checked;
    }
}

TEST_CASE("backward: input gradient matches finite differences") {
    const ModelConfig cfg = tiny_config();
    auto p = init_parameters_random<double>(cfg, 90);
    const int H = 6, W = 12;
    MatX<double> x = random_input(cfg.in_channels, H, W, 91);
    MatX<double> R(cfg.out_channels, static_cast<i64>(H) * W);
    for (i64 i = 0; i < R.size(); ++i) R.data()[i] = gaussian(92, i);

    ForwardCache<double> fc;
    forward(p, x, 0.5, H, W, &fc);
    const auto res = backward(p, fc, R);
    const double eps = 1e-4;
    CounterRng pick(93);
    for (int trial = 0; trial < 12; ++trial) {
        const i64 i = pick.uniform_int(0, x.size() - 1);
        const double orig = x.data()[i];
        x.data()[i] = orig + eps;
        const double lp = (R.array() * forward(p, x, 0.5, H, W).array()).sum();
        x.data()[i] = orig - eps;
        const double lm = (R.array() * forward(p, x, 0.5, H, W).array()).sum();
        x.data()[i] = orig;
        const double fd = (lp - lm) / (2 * eps);
        const double an = res.d_input.data()[i];
        CHECK(std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8}) < 1e-5);
    }
}

TEST_CASE("backward: deterministic and dead paths get zero gradient") {
    const ModelConfig cfg = tiny_config();
    auto p = init_parameters_random<double>(cfg, 100);
    const MatX<double> x = random_input(cfg.in_channels, 12, 12, 101);
    ForwardCache<double> fc;
    forward(p, x, 0.7, 12, 12, &fc);
    MatX<double> R = MatX<double>::Ones(cfg.out_channels, x.cols());
    // Kill channel 1 of the probe: decode row 1 and bias 1 become dead paths.
    R.row(1).setZero();
    const auto g1 = backward(p, fc, R);
    const auto g2 = backward(p, fc, R);
    auto a1 = parameter_arrays(const_cast<Parameters<double>&>(g1.grads));
    auto a2 = parameter_arrays(const_cast<Parameters<double>&>(g2.grads));
    for (std::size_t i = 0; i < a1.size(); ++i) {
        CHECK(std::memcmp(a1[i].data, a2[i].data, sizeof(double) * a1[i].size) == 0);
    }
    CHECK(g1.grads.w_decode.row(1).cwiseAbs().maxCoeff() == 0.0);
    CHECK(g1.grads.b_decode[1] == 0.0);
}

TEST_CASE("forward: frozen golden probe on the tiny configuration") {
    const ModelConfig cfg = tiny_config();
    auto p = init_parameters_random<double>(cfg, 2024);
    const MatX<double> x = random_input(cfg.in_channels, 12, 12, 2025);
    const MatX<double> y = forward(p, x, 0.62831853071795862, 12, 12);
    // Golden regression value computed once from this implementation.
    CHECK(y(1, 77) == doctest::Approx(1.2440901490316572).epsilon(1e-12));
}
