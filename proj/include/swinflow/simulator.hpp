// Copyright (c) 2026 swinflow contributors
// SPDX-License-Identifier: Apache-2.0
//
// Deterministic virtual-rank execution of the sharded training step: windows
// round-robin over the WP grid, row-band sequence slices inside each node,
// one Swin layer per middle pipeline stage, encode+load and decode+loss on
// the edge stages. Ops run in the 1F1B schedule order (or a naive sequential
// order; results are identical by construction), fragments move through
// explicit per-boundary transfers, and every collective is charged to the
// ledger with exact integer byte counts.
//
// The math calls the same per-token / per-(window, head) leaves as the
// single-rank reference, so sharded results match the reference to reduction
// grouping (1e-10 relative in 64-bit).

#pragma once

#include "swinflow/diffusion.hpp"
#include "swinflow/pipeline.hpp"
#include "swinflow/topology.hpp"

#include <map>
#include <vector>

namespace swinflow {

/// Standardized in-memory training data: states, forcings and residual
/// targets, one column per pixel.
template <class T>
struct DataSet {
    std::vector<MatX<T>> states;     // standardized x_{i}
    std::vector<MatX<T>> forcings;   // standardized x_f at i
    std::vector<MatX<T>> residuals;  // standardized x_{i+1} - x_i, index i

    int n_pairs() const { return static_cast<int>(residuals.size()); }
    int pair_of_sample(i64 sample_id) const { return static_cast<int>(sample_id % n_pairs()); }
};

template <class T>
struct TrainStepResult {
    T loss = 0;
    Parameters<T> grads;
    std::vector<T> mb_losses;
};

/// Single-rank reference step: plain forward/backward per microbatch,
/// sequential accumulation, mean over microbatches.
template <class T>
TrainStepResult<T> reference_train_step(const Parameters<T>& params, const DataSet<T>& data,
                                        i64 first_sample, int dp, int gas, const LossWeights<T>& w,
                                        const DiffusionConfig& dcfg, const SeedProtocol& seeds,
                                        const MatX<T>& pos_enc, const GridSpec& grid) {
    TrainStepResult<T> res;
    res.grads = Parameters<T>::zeros(params.cfg);
    auto gacc = parameter_arrays(res.grads);
    const WindowLayout zlay{grid.height, grid.width, params.cfg.window_px, 0};
    for (int d = 0; d < dp; ++d) {
        for (int g = 0; g < gas; ++g) {
            const i64 sample_id = first_sample + static_cast<i64>(d) * gas + g;
            const int idx = data.pair_of_sample(sample_id);
            SampleBatch<T> sb;
            sb.x_prev = data.states[idx];
            sb.x0 = data.residuals[idx];
            sb.forcings = data.forcings[idx];
            const MatX<T> z = noise_field<T>(seeds, static_cast<u64>(sample_id), params.cfg.out_channels,
                                             zlay, dcfg.sigma_d);
            auto one = diffusion_loss_sample(params, sb, w, dcfg, seeds.t_key(static_cast<u64>(sample_id)),
                                             z, pos_enc, grid.height, grid.width);
            res.mb_losses.push_back(one.loss);
            res.loss += one.loss;
            auto ga = parameter_arrays(one.grads);
            for (std::size_t i = 0; i < gacc.size(); ++i) {
                T* dst = param_data<T>(gacc[i]);
                const T* src = param_data<T>(ga[i]);
                for (i64 j = 0; j < gacc[i].size; ++j) dst[j] += src[j];
            }
        }
    }
    const T scale = T(1) / static_cast<T>(dp * gas);
    for (auto& a : gacc) {
        T* dst = param_data<T>(a);
        for (i64 j = 0; j < a.size; ++j) dst[j] *= scale;
    }
    res.loss *= scale;
    return res;
}

/// Balanced-binary-tree mean across DP replicas, keyed by dp index. Ledger
/// accounting is ring-equivalent: 2 (DP-1)/DP of the payload bytes.
template <class T>
Parameters<T> grad_allreduce(std::vector<Parameters<T>>& per_dp, CommLedger* ledger = nullptr,
                             int step = 0) {
    require(!per_dp.empty(), "grad_allreduce: empty group");
    const int dp = static_cast<int>(per_dp.size());
    std::vector<Parameters<T>*> level;
    for (auto& p : per_dp) level.push_back(&p);
    while (level.size() > 1) {
        std::vector<Parameters<T>*> next;
        for (std::size_t i = 0; i + 1 < level.size(); i += 2) {
            auto a = parameter_arrays(*level[i]);
            auto b = parameter_arrays(*level[i + 1]);
            for (std::size_t k = 0; k < a.size(); ++k) {
                T* dst = param_data<T>(a[k]);
                const T* src = param_data<T>(b[k]);
                for (i64 j = 0; j < a[k].size; ++j) dst[j] += src[j];
            }
            next.push_back(level[i]);
        }
        if (level.size() % 2 == 1) next.push_back(level.back());
        level = next;
    }
    Parameters<T> out = *level[0];
    auto oa = parameter_arrays(out);
    for (auto& a : oa) {
        T* dst = param_data<T>(a);
        for (i64 j = 0; j < a.size; ++j) dst[j] /= static_cast<T>(dp);
    }
    if (ledger && dp > 1) {
        u64 param_bytes = 0;
        for (auto& a : oa) param_bytes += static_cast<u64>(a.size) * sizeof(T);
        ledger->add(step, -1, Collective::AllReduce, 0, (2 * static_cast<u64>(dp - 1) * param_bytes) / dp,
                    /*intra=*/false);
    }
    return out;
}

// ---------------------------------------------------------------------------

template <class T>
class SwipeSimulator {
public:
    SwipeSimulator(const ModelConfig& model, const GridSpec& grid, const Topology& topo,
                   const DiffusionConfig& dcfg, const LossWeights<T>& weights, const SeedProtocol& seeds)
        : model_(model), grid_(grid), topo_(topo), dcfg_(dcfg), weights_(weights), seeds_(seeds) {
        require(model.blocks_per_layer == 1, "simulator: one transformer block per Swin layer");
        require(topo.pp == model.n_layers + 2, "simulator: PP must be layers + 2");
        pos_enc_ = sinusoidal_pos_encode<T>(grid, model.in_channels);
        for (int blk = 0; blk < model.n_layers; ++blk) {
            layouts_.push_back(model.layout_for_block(grid.height, grid.width, blk));
        }
        for (const auto& lay : layouts_) {
            std::vector<int> pos(lay.window_px, 0);
            std::vector<std::vector<int>> rows_of_band;
            for (int band = 0; band < topo_.sp; ++band) {
                const auto rows = lay.band_rows(band, topo_.sp);
                for (std::size_t i = 0; i < rows.size(); ++i) pos[rows[i]] = static_cast<int>(i);
                rows_of_band.push_back(rows);
            }
            row_pos_in_band_.push_back(pos);
            band_rows_.push_back(rows_of_band);
        }
    }

    /// Negative control for the audit: key noise by rank instead of window.
    bool broken_z_keying = false;
    /// Assemble decode-stage outputs per microbatch (audit surface).
    bool collect_outputs = false;

    struct StepResult {
        T loss = 0;
        Parameters<T> grads;
        std::vector<T> mb_losses;
        std::vector<MatX<T>> mb_outputs;  // filled when collect_outputs is set
        CommLedger ledger;
        TimelineResult timeline;
        std::map<int, i64> peak_activation_elems;  // per global rank
    };

    StepResult train_step(const Parameters<T>& params, const DataSet<T>& data, i64 first_sample,
                          bool pipelined = true, int step_index = 0) {
        require(!data.states.empty() && data.n_pairs() > 0, "simulator: empty dataset");
        require(model_.in_channels == model_.out_channels + static_cast<int>(data.states[0].rows()) +
                                          static_cast<int>(data.forcings[0].rows()),
                "simulator: in_channels must equal residual + state + forcing channels");
        StepResult out;
        const auto order = pipelined ? one_f_one_b_order(topo_.pp, topo_.gas)
                                     : sequential_order(topo_.pp, topo_.gas);
        out.timeline = simulate_timeline(order, topo_.pp, topo_.gas);

        std::vector<Parameters<T>> per_dp;
        for (int d = 0; d < topo_.dp; ++d) {
            Instance inst(*this, params, data, first_sample, d, step_index, &out.ledger,
                          &out.peak_activation_elems);
            for (const auto& e : out.timeline.entries) inst.execute(e.op);
            per_dp.push_back(inst.collect_grads());
            for (int m = 0; m < topo_.gas; ++m) {
                out.mb_losses.push_back(inst.mb_losses[m]);
                out.loss += inst.mb_losses[m];
                if (collect_outputs) out.mb_outputs.push_back(std::move(inst.mb_outputs[m]));
            }
        }
        charge_gradsum(out.ledger, step_index);
        Parameters<T> reduced = grad_allreduce(per_dp, &out.ledger, step_index);
        auto ga = parameter_arrays(reduced);
        for (auto& a : ga) {
            T* p = param_data<T>(a);
            for (i64 j = 0; j < a.size; ++j) p[j] /= static_cast<T>(topo_.gas);
        }
        out.grads = std::move(reduced);
        out.loss /= static_cast<T>(topo_.dp * topo_.gas);
        return out;
    }

    const WindowLayout& layout(int block) const { return layouts_[block]; }
    const Topology& topology() const { return topo_; }

    /// Intra-instance gradient reduction: a balanced tree over the WP x SP
    /// group of every stage (G - 1 merges of the stage's parameter arrays),
    /// plus the cross-stage combine of the shared time projection. The sums
    /// themselves are folded during execution; this charges the exact bytes
    /// those merges move so the ledger matches the analytic model.
    void charge_gradsum(CommLedger& ledger, int step) const {
        const u64 esize = sizeof(T);
        const u64 h = static_cast<u64>(model_.hidden_dim);
        const u64 enc = static_cast<u64>(model_.in_channels) * h + h;
        const u64 dec = h + static_cast<u64>(model_.out_channels) * h + model_.out_channels;
        const u64 td = static_cast<u64>(model_.tdim());
        const u64 time_elems = td * td + td;
        const u64 per_block =
            3 * h * h + h * h + 2 * h + 3 * static_cast<u64>(model_.ffn_dim) * h + 6 * h * td + 6 * h;
        for (int d = 0; d < topo_.dp; ++d) {
            auto tree = [&](int stage, u64 elems) {
                // Group ranks in (a, b, j) order; fold pairwise. Each merge
                // ships one partial (the full stage arrays) from the
                // higher-index rank of the pair.
                std::vector<RankCoord> group;
                for (int a = 0; a < topo_.wp_a; ++a)
                    for (int b = 0; b < topo_.wp_b; ++b)
                        for (int j = 0; j < topo_.sp; ++j) group.push_back({a, b, j, stage, d});
                while (group.size() > 1) {
                    std::vector<RankCoord> next;
                    for (std::size_t i = 0; i + 1 < group.size(); i += 2) {
                        const bool intra = node_of(topo_, group[i]) == node_of(topo_, group[i + 1]);
                        ledger.add(step, stage - 1, Collective::GradSum, flat_rank(topo_, group[i + 1]),
                                   elems * esize, intra);
                        next.push_back(group[i]);
                    }
                    if (group.size() % 2 == 1) next.push_back(group.back());
                    group = next;
                }
            };
            tree(0, enc);
            for (int l = 0; l < model_.n_layers; ++l) tree(1 + l, per_block + time_elems);
            tree(topo_.pp - 1, dec);
            // Shared time projection combined across the middle stages.
            for (int l = 0; l + 1 < model_.n_layers; ++l) {
                ledger.add(step, l + 1, Collective::GradSum,
                           flat_rank(topo_, RankCoord{0, 0, 0, 2 + l, d}), time_elems * esize,
                           /*intra=*/false);
            }
        }
    }

private:
    // Fragments of one distributed activation: [window][band] -> h x n matrix,
    // columns ordered by (row position within band, column).
    using Frags = std::vector<std::vector<MatX<T>>>;

    ModelConfig model_;
    GridSpec grid_;
    Topology topo_;
    DiffusionConfig dcfg_;
    LossWeights<T> weights_;
    SeedProtocol seeds_;
    MatX<T> pos_enc_;
    std::vector<WindowLayout> layouts_;
    std::vector<std::vector<int>> row_pos_in_band_;          // [block][rolled row]
    std::vector<std::vector<std::vector<int>>> band_rows_;   // [block][band] -> rows

    int heads_per_sp() const { return model_.n_heads / topo_.sp; }

    struct Instance {
        SwipeSimulator& sim;
        const Parameters<T>& params;
        const DataSet<T>& data;
        i64 first_sample;
        int dp_idx;
        int step_index;
        CommLedger* ledger;
        std::map<int, i64>* peaks;

        struct Mb {
            i64 sample_id = 0;
            double t = 0;
            TimeEmbedCache<T> temb;
            Frags wire;
            Frags s0_input;
            struct MidCache {
                Frags x_in, u1, x_mid, u2, x2m, gate_pre, up_pre, attn_concat;
                std::vector<std::vector<VecX<T>>> rms1, rms2;
                std::vector<MatX<T>> xm_full;
                std::vector<std::vector<ops::HeadCache<T>>> heads;
            };
            std::vector<MidCache> mid;
            Frags x_fin, u3, n3, derr;
            std::vector<std::vector<VecX<T>>> rms3;
            T loss = 0;
        };
        std::vector<Mb> mbs;
        std::vector<T> mb_losses;
        std::vector<MatX<T>> mb_outputs;

        Parameters<T> grads;  // instance contribution, unscaled
        // Shared time projection accumulated per middle stage so execution
        // order (pipelined vs sequential) cannot change the sums.
        std::vector<MatX<T>> w_time_stage;
        std::vector<VecX<T>> b_time_stage;
        std::map<int, i64> cur_elems;

        Instance(SwipeSimulator& s, const Parameters<T>& p, const DataSet<T>& d, i64 fs, int dpi,
                 int step, CommLedger* led, std::map<int, i64>* pk)
            : sim(s), params(p), data(d), first_sample(fs), dp_idx(dpi), step_index(step), ledger(led),
              peaks(pk) {
            mbs.resize(sim.topo_.gas);
            mb_losses.resize(sim.topo_.gas, T(0));
            mb_outputs.resize(sim.topo_.gas);
            grads = Parameters<T>::zeros(p.cfg);
            const int td = p.cfg.tdim();
            w_time_stage.assign(sim.model_.n_layers, MatX<T>::Zero(td, td));
            b_time_stage.assign(sim.model_.n_layers, VecX<T>::Zero(td));
        }

        Parameters<T> collect_grads() {
            for (int l = 0; l < sim.model_.n_layers; ++l) {
                grads.w_time += w_time_stage[l];
                grads.b_time += b_time_stage[l];
            }
            return std::move(grads);
        }

        int rank_of(int a, int b, int j, int stage) const {
            return flat_rank(sim.topo_, RankCoord{a, b, j, stage, dp_idx});
        }

        void charge_acts(int rank, i64 delta) {
            cur_elems[rank] += delta;
            auto& pk = (*peaks)[rank];
            pk = std::max(pk, cur_elems[rank]);
        }

        void execute(const PipeOp& op) {
            Mb& mb = mbs[op.microbatch];
            if (!op.backward) {
                if (op.stage == 0) fwd_stage0(mb, op);
                else if (op.stage == sim.topo_.pp - 1) fwd_decode(mb, op);
                else fwd_mid(mb, op);
            } else {
                if (op.stage == sim.topo_.pp - 1) bwd_decode(mb, op);
                else if (op.stage == 0) bwd_stage0(mb, op);
                else bwd_mid(mb, op);
            }
        }

        /// Per-cell noise, identical to noise_field(): keyed by the unshifted
        /// window grid, or (negative control) by the generating rank.
        T z_value(const Mb& mb, i64 pixel, int channel, int rank) const {
            const auto& model = sim.model_;
            if (sim.broken_z_keying) {
                const u64 key = sim.seeds_.z_rank_key(static_cast<u64>(mb.sample_id), static_cast<u64>(rank));
                return static_cast<T>(sim.dcfg_.sigma_d *
                                      gaussian(key, static_cast<u64>(pixel) * model.out_channels + channel));
            }
            const int gy = static_cast<int>(pixel / sim.grid_.width);
            const int gx = static_cast<int>(pixel % sim.grid_.width);
            const int w = model.window_px;
            const u64 zwin = static_cast<u64>(gy / w) * (sim.grid_.width / w) + gx / w;
            const u64 ztok = static_cast<u64>(gy % w) * w + gx % w;
            const u64 key = sim.seeds_.z_cell_key(static_cast<u64>(mb.sample_id), zwin, ztok);
            return static_cast<T>(sim.dcfg_.sigma_d * gaussian(key, static_cast<u64>(channel)));
        }

        // --- forward --------------------------------------------------------

        void fwd_stage0(Mb& mb, const PipeOp& op) {
            const auto& topo = sim.topo_;
            const auto& model = sim.model_;
            const WindowLayout& lay = sim.layouts_[0];
            mb.sample_id = first_sample + static_cast<i64>(dp_idx) * topo.gas + op.microbatch;
            const int idx = data.pair_of_sample(mb.sample_id);
            const NoiseDraw nd =
                sample_noise_draw(sim.seeds_.t_key(static_cast<u64>(mb.sample_id)), sim.dcfg_);
            mb.t = nd.t;
            mb.temb = time_embed(params, static_cast<T>(mb.t));
            const auto [ct, st] = trig_coeffs(static_cast<T>(mb.t));
            const T sd = static_cast<T>(sim.dcfg_.sigma_d);
            const int cp = static_cast<int>(data.states[idx].rows());
            const int cf = static_cast<int>(data.forcings[idx].rows());

            const int nw = lay.n_windows();
            mb.s0_input.assign(nw, std::vector<MatX<T>>(topo.sp));
            mb.wire.assign(nw, std::vector<MatX<T>>(topo.sp));
            for (int wy = 0; wy < lay.windows_y(); ++wy) {
                for (int wx = 0; wx < lay.windows_x(); ++wx) {
                    const int win = wy * lay.windows_x() + wx;
                    const auto [a, b] = window_owner(wy, wx, topo.wp_a, topo.wp_b);
                    for (int band = 0; band < topo.sp; ++band) {
                        const auto& rows = sim.band_rows_[0][band];
                        const int n = static_cast<int>(rows.size()) * lay.window_px;
                        const int rk = rank_of(a, b, band, 0);
                        MatX<T> x0(model.out_channels, n), z(model.out_channels, n);
                        MatX<T> cond(cp, n), forc(cf, n), pos(model.in_channels, n);
                        for (std::size_t i = 0; i < rows.size(); ++i) {
                            for (int c = 0; c < lay.window_px; ++c) {
                                const int col = static_cast<int>(i) * lay.window_px + c;
                                const i64 pix = lay.pixel_of(wy, wx, rows[i], c);
                                x0.col(col) = data.residuals[idx].col(pix);
                                cond.col(col) = data.states[idx].col(pix);
                                forc.col(col) = data.forcings[idx].col(pix);
                                pos.col(col) = sim.pos_enc_.col(pix);
                                for (int ch = 0; ch < model.out_channels; ++ch)
                                    z(ch, col) = z_value(mb, pix, ch, rk);
                            }
                        }
                        const MatX<T> x_t = ct * x0 + st * z;
                        MatX<T> input(model.in_channels, n);
                        input.topRows(model.out_channels) = x_t / sd;
                        input.middleRows(model.out_channels, cp) = cond;
                        input.bottomRows(cf) = forc;
                        input += pos;
                        MatX<T> enc = ops::linear_cols<T>(params.w_encode, input);
                        enc.colwise() += params.b_encode;
                        mb.s0_input[win][band] = std::move(input);
                        mb.wire[win][band] = std::move(enc);
                        charge_acts(rk, mb.s0_input[win][band].size());
                    }
                }
            }
            send_boundary(mb, 0, 0, op);
        }

        void fwd_mid(Mb& mb, const PipeOp& op) {
            const auto& topo = sim.topo_;
            const auto& model = sim.model_;
            const int blk = op.stage - 1;
            const WindowLayout& lay = sim.layouts_[blk];
            const BlockParams<T>& bp = params.blocks[blk];
            const AdaVecs<T> ada = ada_vectors(bp, mb.temb.embed);
            const int h = model.hidden_dim;
            const int d = model.head_dim();
            const int s_w = lay.tokens_per_window();
            const int hps = sim.heads_per_sp();

            if (mb.mid.empty()) mb.mid.resize(sim.model_.n_layers);
            auto& mc = mb.mid[blk];
            const int nw = lay.n_windows();
            mc.x_in = std::move(mb.wire);
            mc.u1.assign(nw, std::vector<MatX<T>>(topo.sp));
            mc.rms1.assign(nw, std::vector<VecX<T>>(topo.sp));
            mc.x_mid.assign(nw, std::vector<MatX<T>>(topo.sp));
            mc.u2.assign(nw, std::vector<MatX<T>>(topo.sp));
            mc.rms2.assign(nw, std::vector<VecX<T>>(topo.sp));
            mc.x2m.assign(nw, std::vector<MatX<T>>(topo.sp));
            mc.gate_pre.assign(nw, std::vector<MatX<T>>(topo.sp));
            mc.up_pre.assign(nw, std::vector<MatX<T>>(topo.sp));
            mc.attn_concat.assign(nw, std::vector<MatX<T>>(topo.sp));
            mc.xm_full.assign(nw, MatX<T>());
            mc.heads.assign(nw, std::vector<ops::HeadCache<T>>(model.n_heads));
            Frags x_out(nw, std::vector<MatX<T>>(topo.sp));

            for (int wy = 0; wy < lay.windows_y(); ++wy) {
                for (int wx = 0; wx < lay.windows_x(); ++wx) {
                    const int win = wy * lay.windows_x() + wx;
                    const auto [a, b] = window_owner(wy, wx, topo.wp_a, topo.wp_b);
                    std::vector<MatX<T>> xm_band(topo.sp);
                    for (int band = 0; band < topo.sp; ++band) {
                        ops::prenorm_modulate(mc.x_in[win][band], bp.g_attn, ada.a1, ada.b1, ada.g1,
                                              mc.u1[win][band], mc.rms1[win][band], xm_band[band]);
                    }
                    // alltoall #1: token-sharded -> head-sharded.
                    MatX<T>& xm = mc.xm_full[win];
                    xm.resize(h, s_w);
                    for (int band = 0; band < topo.sp; ++band) {
                        const auto& rows = sim.band_rows_[blk][band];
                        for (std::size_t i = 0; i < rows.size(); ++i)
                            for (int c = 0; c < lay.window_px; ++c)
                                xm.col(rows[i] * lay.window_px + c) =
                                    xm_band[band].col(static_cast<int>(i) * lay.window_px + c);
                    }
                    const MatX<T> angles = ops::window_rope_angles<T>(lay, wy, wx, d);
                    const MatX<T> mask = seam_mask<T>(lay, wy);
                    MatX<T> o_concat(h, s_w);
                    for (int head = 0; head < model.n_heads; ++head) {
                        MatX<T> O;
                        mc.heads[win][head] =
                            ops::head_attention_fwd(bp.w_qkv, head, d, xm, angles, mask, O);
                        o_concat.middleRows(head * d, d) = O;
                    }
                    // alltoall #2: head-sharded -> token-sharded.
                    for (int band = 0; band < topo.sp; ++band) {
                        const auto& rows = sim.band_rows_[blk][band];
                        MatX<T> oc(h, static_cast<int>(rows.size()) * lay.window_px);
                        for (std::size_t i = 0; i < rows.size(); ++i)
                            for (int c = 0; c < lay.window_px; ++c)
                                oc.col(static_cast<int>(i) * lay.window_px + c) =
                                    o_concat.col(rows[i] * lay.window_px + c);
                        mc.attn_concat[win][band] = std::move(oc);
                    }
                    for (int band = 0; band < topo.sp; ++band) {
                        MatX<T> attn_out = ops::linear_cols<T>(bp.w_out, mc.attn_concat[win][band]);
                        mc.x_mid[win][band] = mc.x_in[win][band] + attn_out;
                        ops::prenorm_modulate(mc.x_mid[win][band], bp.g_ffn, ada.a2, ada.b2, ada.g2,
                                              mc.u2[win][band], mc.rms2[win][band], mc.x2m[win][band]);
                        x_out[win][band] =
                            mc.x_mid[win][band] + ops::swiglu_fwd(bp, mc.x2m[win][band],
                                                                  mc.gate_pre[win][band],
                                                                  mc.up_pre[win][band]);
                    }
                    for (int band = 0; band < topo.sp; ++band) {
                        const int rk = rank_of(a, b, band, op.stage);
                        const u64 m_bytes = static_cast<u64>(s_w / topo.sp) * h * sizeof(T);
                        if (topo.sp > 1) {
                            ledger->add(step_index, blk, Collective::AllToAll, rk, m_bytes, true);
                            ledger->add(step_index, blk, Collective::AllToAll, rk, m_bytes, true);
                        }
                        i64 cached = mc.x_in[win][band].size() + mc.u1[win][band].size() +
                                     mc.x_mid[win][band].size() + mc.u2[win][band].size() +
                                     mc.x2m[win][band].size() + mc.gate_pre[win][band].size() +
                                     mc.up_pre[win][band].size() + mc.attn_concat[win][band].size();
                        for (int hh = band * hps; hh < (band + 1) * hps; ++hh) {
                            cached += mc.heads[win][hh].q.size() + mc.heads[win][hh].k.size() +
                                      mc.heads[win][hh].v.size() + mc.heads[win][hh].probs.size();
                        }
                        cached += static_cast<i64>(xm.size()) / topo.sp;
                        charge_acts(rk, cached);
                    }
                }
            }
            mb.wire = std::move(x_out);
            send_boundary(mb, blk, std::min(blk + 1, model.n_layers - 1), op);
        }

        void fwd_decode(Mb& mb, const PipeOp& op) {
            const auto& topo = sim.topo_;
            const auto& model = sim.model_;
            const int last_blk = model.n_layers - 1;
            const WindowLayout& lay = sim.layouts_[last_blk];
            const int idx = data.pair_of_sample(mb.sample_id);
            const auto [ct, st] = trig_coeffs(static_cast<T>(mb.t));
            const T sd = static_cast<T>(sim.dcfg_.sigma_d);
            const T n_pixels = static_cast<T>(sim.grid_.pixels());

            const int nw = lay.n_windows();
            mb.x_fin = std::move(mb.wire);
            mb.u3.assign(nw, std::vector<MatX<T>>(topo.sp));
            mb.n3.assign(nw, std::vector<MatX<T>>(topo.sp));
            mb.rms3.assign(nw, std::vector<VecX<T>>(topo.sp));
            mb.derr.assign(nw, std::vector<MatX<T>>(topo.sp));
            T loss_raw = 0;
            for (int wy = 0; wy < lay.windows_y(); ++wy) {
                for (int wx = 0; wx < lay.windows_x(); ++wx) {
                    const int win = wy * lay.windows_x() + wx;
                    const auto [a, b] = window_owner(wy, wx, topo.wp_a, topo.wp_b);
                    for (int band = 0; band < topo.sp; ++band) {
                        const int rk = rank_of(a, b, band, op.stage);
                        ops::prenorm_plain(mb.x_fin[win][band], params.g_decode, mb.u3[win][band],
                                           mb.rms3[win][band], mb.n3[win][band]);
                        MatX<T> y = ops::linear_cols<T>(params.w_decode, mb.n3[win][band]);
                        y.colwise() += params.b_decode;
                        if (sim.collect_outputs) {
                            if (mb_outputs[op.microbatch].size() == 0) {
                                mb_outputs[op.microbatch] =
                                    MatX<T>::Zero(model.out_channels, sim.grid_.pixels());
                            }
                            const auto& rws = sim.band_rows_[last_blk][band];
                            for (std::size_t i = 0; i < rws.size(); ++i)
                                for (int cc2 = 0; cc2 < lay.window_px; ++cc2)
                                    mb_outputs[op.microbatch].col(lay.pixel_of(wy, wx, rws[i], cc2)) =
                                        y.col(static_cast<int>(i) * lay.window_px + cc2);
                        }
                        const auto& rows = sim.band_rows_[last_blk][band];
                        const int n = static_cast<int>(rows.size()) * lay.window_px;
                        MatX<T> x0(model.out_channels, n), z(model.out_channels, n);
                        std::vector<i64> pix(n);
                        for (std::size_t i = 0; i < rows.size(); ++i) {
                            for (int c = 0; c < lay.window_px; ++c) {
                                const int col = static_cast<int>(i) * lay.window_px + c;
                                pix[col] = lay.pixel_of(wy, wx, rows[i], c);
                                x0.col(col) = data.residuals[idx].col(pix[col]);
                                for (int ch = 0; ch < model.out_channels; ++ch)
                                    z(ch, col) = z_value(mb, pix[col], ch, rk);
                            }
                        }
                        const MatX<T> v_t = ct * z - st * x0;
                        const MatX<T> err = sd * y - v_t;
                        MatX<T> derr(model.out_channels, n);
                        for (int col = 0; col < n; ++col) {
                            const T alpha = sim.weights_.alpha_at_pixel(pix[col], sim.grid_.width);
                            loss_raw +=
                                alpha * (sim.weights_.kappa.array() * err.col(col).array().square()).sum();
                            derr.col(col) = (T(2) * alpha / n_pixels) *
                                            (sim.weights_.kappa.array() * err.col(col).array()).matrix();
                        }
                        mb.derr[win][band] = sd * derr;
                        charge_acts(rk, mb.u3[win][band].size() + mb.n3[win][band].size() +
                                            mb.x_fin[win][band].size() + mb.derr[win][band].size());
                    }
                }
            }
            mb.loss = loss_raw / n_pixels;
            mb_losses[op.microbatch] = mb.loss;
        }

        // --- backward -------------------------------------------------------

        void bwd_decode(Mb& mb, const PipeOp& op) {
            const auto& topo = sim.topo_;
            const auto& model = sim.model_;
            const int last_blk = model.n_layers - 1;
            const WindowLayout& lay = sim.layouts_[last_blk];
            const int nw = lay.n_windows();
            Frags dx(nw, std::vector<MatX<T>>(topo.sp));
            for (int wy = 0; wy < lay.windows_y(); ++wy) {
                for (int wx = 0; wx < lay.windows_x(); ++wx) {
                    const int win = wy * lay.windows_x() + wx;
                    const auto [a, b] = window_owner(wy, wx, topo.wp_a, topo.wp_b);
                    for (int band = 0; band < topo.sp; ++band) {
                        const MatX<T>& dY = mb.derr[win][band];
                        ops::accum_outer<T>(grads.w_decode, dY, mb.n3[win][band]);
                        grads.b_decode += dY.rowwise().sum();
                        const MatX<T> dN3 = ops::linear_cols_t<T>(params.w_decode, dY);
                        MatX<T> dxf = MatX<T>::Zero(model.hidden_dim, dY.cols());
                        ops::prenorm_plain_bwd(mb.x_fin[win][band], mb.u3[win][band], mb.rms3[win][band],
                                               params.g_decode, dN3, dxf, grads.g_decode);
                        dx[win][band] = std::move(dxf);
                        charge_acts(rank_of(a, b, band, op.stage),
                                    -(mb.u3[win][band].size() + mb.n3[win][band].size() +
                                      mb.x_fin[win][band].size() + mb.derr[win][band].size()));
                        mb.u3[win][band].resize(0, 0);
                        mb.n3[win][band].resize(0, 0);
                        mb.x_fin[win][band].resize(0, 0);
                        mb.derr[win][band].resize(0, 0);
                    }
                }
            }
            mb.wire = std::move(dx);
            send_boundary(mb, last_blk, last_blk, op);
        }

        void bwd_mid(Mb& mb, const PipeOp& op) {
            const auto& topo = sim.topo_;
            const auto& model = sim.model_;
            const int blk = op.stage - 1;
            const WindowLayout& lay = sim.layouts_[blk];
            const BlockParams<T>& bp = params.blocks[blk];
            const AdaVecs<T> ada = ada_vectors(bp, mb.temb.embed);
            BlockParams<T>& gb = grads.blocks[blk];
            const int h = model.hidden_dim;
            const int d = model.head_dim();
            const int s_w = lay.tokens_per_window();
            const int hps = sim.heads_per_sp();
            auto& mc = mb.mid[blk];

            AdaVecs<T> dada;
            dada.a1 = VecX<T>::Zero(h);
            dada.b1 = VecX<T>::Zero(h);
            dada.g1 = VecX<T>::Zero(h);
            dada.a2 = VecX<T>::Zero(h);
            dada.b2 = VecX<T>::Zero(h);
            dada.g2 = VecX<T>::Zero(h);

            const int nw = lay.n_windows();
            Frags dx_prev(nw, std::vector<MatX<T>>(topo.sp));
            for (int wy = 0; wy < lay.windows_y(); ++wy) {
                for (int wx = 0; wx < lay.windows_x(); ++wx) {
                    const int win = wy * lay.windows_x() + wx;
                    const auto [a, b] = window_owner(wy, wx, topo.wp_a, topo.wp_b);
                    const MatX<T> angles = ops::window_rope_angles<T>(lay, wy, wx, d);
                    std::vector<MatX<T>> d_oc_band(topo.sp);
                    std::vector<MatX<T>> dx_mid_band(topo.sp);
                    for (int band = 0; band < topo.sp; ++band) {
                        const MatX<T>& dY = mb.wire[win][band];
                        MatX<T> dx_mid = dY;
                        const MatX<T> dX2m = ops::swiglu_bwd(bp, mc.x2m[win][band], mc.gate_pre[win][band],
                                                             mc.up_pre[win][band], dY, gb);
                        ops::prenorm_modulate_bwd(mc.x_mid[win][band], mc.u2[win][band],
                                                  mc.rms2[win][band], bp.g_ffn, ada.a2, ada.b2, ada.g2,
                                                  dX2m, dx_mid, gb.g_ffn, dada.a2, dada.b2, dada.g2);
                        ops::accum_outer<T>(gb.w_out, dx_mid, mc.attn_concat[win][band]);
                        d_oc_band[band] = ops::linear_cols_t<T>(bp.w_out, dx_mid);
                        dx_mid_band[band] = std::move(dx_mid);
                    }
                    // alltoall: token-sharded dO -> head-sharded.
                    MatX<T> d_oc(h, s_w);
                    for (int band = 0; band < topo.sp; ++band) {
                        const auto& rows = sim.band_rows_[blk][band];
                        for (std::size_t i = 0; i < rows.size(); ++i)
                            for (int c = 0; c < lay.window_px; ++c)
                                d_oc.col(rows[i] * lay.window_px + c) =
                                    d_oc_band[band].col(static_cast<int>(i) * lay.window_px + c);
                    }
                    MatX<T> dXm = MatX<T>::Zero(h, s_w);
                    for (int head = 0; head < model.n_heads; ++head) {
                        ops::head_attention_bwd(bp.w_qkv, head, d, mc.xm_full[win], mc.heads[win][head],
                                                angles, MatX<T>(d_oc.middleRows(head * d, d)), dXm,
                                                gb.w_qkv);
                    }
                    // reduce-scatter back to token owners (mirror alltoall).
                    for (int band = 0; band < topo.sp; ++band) {
                        const auto& rows = sim.band_rows_[blk][band];
                        MatX<T> dxm_band(h, static_cast<int>(rows.size()) * lay.window_px);
                        for (std::size_t i = 0; i < rows.size(); ++i)
                            for (int c = 0; c < lay.window_px; ++c)
                                dxm_band.col(static_cast<int>(i) * lay.window_px + c) =
                                    dXm.col(rows[i] * lay.window_px + c);
                        MatX<T> dx_in = dx_mid_band[band];
                        ops::prenorm_modulate_bwd(mc.x_in[win][band], mc.u1[win][band],
                                                  mc.rms1[win][band], bp.g_attn, ada.a1, ada.b1, ada.g1,
                                                  dxm_band, dx_in, gb.g_attn, dada.a1, dada.b1, dada.g1);
                        dx_prev[win][band] = std::move(dx_in);
                    }
                    for (int band = 0; band < topo.sp; ++band) {
                        const int rk = rank_of(a, b, band, op.stage);
                        const u64 m_bytes = static_cast<u64>(s_w / topo.sp) * h * sizeof(T);
                        if (topo.sp > 1) {
                            ledger->add(step_index, blk, Collective::AllToAll, rk, m_bytes, true);
                            ledger->add(step_index, blk, Collective::AllToAll, rk, m_bytes, true);
                        }
                        i64 cached = mc.x_in[win][band].size() + mc.u1[win][band].size() +
                                     mc.x_mid[win][band].size() + mc.u2[win][band].size() +
                                     mc.x2m[win][band].size() + mc.gate_pre[win][band].size() +
                                     mc.up_pre[win][band].size() + mc.attn_concat[win][band].size();
                        for (int hh = band * hps; hh < (band + 1) * hps; ++hh) {
                            cached += mc.heads[win][hh].q.size() + mc.heads[win][hh].k.size() +
                                      mc.heads[win][hh].v.size() + mc.heads[win][hh].probs.size();
                        }
                        cached += static_cast<i64>(mc.xm_full[win].size()) / topo.sp;
                        charge_acts(rk, -cached);
                    }
                    mc.x_in[win].assign(topo.sp, MatX<T>());
                    mc.u1[win].assign(topo.sp, MatX<T>());
                    mc.x_mid[win].assign(topo.sp, MatX<T>());
                    mc.u2[win].assign(topo.sp, MatX<T>());
                    mc.x2m[win].assign(topo.sp, MatX<T>());
                    mc.gate_pre[win].assign(topo.sp, MatX<T>());
                    mc.up_pre[win].assign(topo.sp, MatX<T>());
                    mc.attn_concat[win].assign(topo.sp, MatX<T>());
                    mc.xm_full[win].resize(0, 0);
                    mc.heads[win].assign(model.n_heads, ops::HeadCache<T>());
                }
            }
            VecX<T> d6(6 * h);
            d6 << dada.a1, dada.b1, dada.g1, dada.a2, dada.b2, dada.g2;
            gb.w_ada.noalias() += d6 * mb.temb.embed.transpose();
            gb.b_ada += d6;
            const VecX<T> d_embed = bp.w_ada.transpose() * d6;
            const VecX<T> dLin =
                (d_embed.array() * mb.temb.lin.unaryExpr([](T v) { return silu_grad(v); }).array())
                    .matrix();
            w_time_stage[blk].noalias() += dLin * mb.temb.feat.transpose();
            b_time_stage[blk] += dLin;

            mb.wire = std::move(dx_prev);
            send_boundary(mb, blk, std::max(blk - 1, 0), op);
        }

        void bwd_stage0(Mb& mb, const PipeOp&) {
            const auto& topo = sim.topo_;
            const WindowLayout& lay = sim.layouts_[0];
            for (int wy = 0; wy < lay.windows_y(); ++wy) {
                for (int wx = 0; wx < lay.windows_x(); ++wx) {
                    const int win = wy * lay.windows_x() + wx;
                    const auto [a, b] = window_owner(wy, wx, topo.wp_a, topo.wp_b);
                    for (int band = 0; band < topo.sp; ++band) {
                        const MatX<T>& dEnc = mb.wire[win][band];
                        ops::accum_outer<T>(grads.w_encode, dEnc, mb.s0_input[win][band]);
                        grads.b_encode += dEnc.rowwise().sum();
                        charge_acts(rank_of(a, b, band, 0), -mb.s0_input[win][band].size());
                        mb.s0_input[win][band].resize(0, 0);
                    }
                }
            }
            mb.wire.clear();
        }

        // --- transfers ------------------------------------------------------

        /// Move the wire payload across a stage boundary: every rank at the
        /// source stage ships its M-element slab. When the destination block
        /// uses a different shift, fragments are regrouped to the destination
        /// layout (the shift-transfer plan); sp indices never change.
        void send_boundary(Mb& mb, int from_block, int to_block, const PipeOp& op) {
            const auto& topo = sim.topo_;
            const auto& model = sim.model_;
            const WindowLayout& from_lay = sim.layouts_[from_block];
            const WindowLayout& to_lay = sim.layouts_[to_block];

            const u64 slab_bytes = static_cast<u64>(from_lay.n_windows() / topo.wp()) *
                                   (from_lay.tokens_per_window() / topo.sp) * model.hidden_dim * sizeof(T);
            for (int a = 0; a < topo.wp_a; ++a)
                for (int b = 0; b < topo.wp_b; ++b)
                    for (int j = 0; j < topo.sp; ++j)
                        ledger->add(step_index, from_block, Collective::SendRecv,
                                    rank_of(a, b, j, op.stage), slab_bytes, false);

            if (from_lay.shift == to_lay.shift) return;

            const int w = model.window_px;
            const int nw_to = to_lay.n_windows();
            Frags out(nw_to, std::vector<MatX<T>>(topo.sp));
            for (int wy = 0; wy < to_lay.windows_y(); ++wy) {
                for (int wx = 0; wx < to_lay.windows_x(); ++wx) {
                    const int win = wy * to_lay.windows_x() + wx;
                    for (int band = 0; band < topo.sp; ++band) {
                        const auto& rows = sim.band_rows_[to_block][band];
                        MatX<T> frag(model.hidden_dim, static_cast<int>(rows.size()) * w);
                        for (std::size_t i = 0; i < rows.size(); ++i) {
                            for (int c = 0; c < w; ++c) {
                                const i64 pix = to_lay.pixel_of(wy, wx, rows[i], c);
                                const int y = static_cast<int>(pix / to_lay.grid_w);
                                const int x = static_cast<int>(pix % to_lay.grid_w);
                                const int sy = (y - from_lay.shift + from_lay.grid_h) % from_lay.grid_h;
                                const int sx = (x - from_lay.shift + from_lay.grid_w) % from_lay.grid_w;
                                const int swin = (sy / w) * from_lay.windows_x() + sx / w;
                                const int scol =
                                    sim.row_pos_in_band_[from_block][sy % w] * w + sx % w;
                                frag.col(static_cast<int>(i) * w + c) = mb.wire[swin][band].col(scol);
                            }
                        }
                        out[win][band] = std::move(frag);
                    }
                }
            }
            mb.wire = std::move(out);
        }
    };

    friend struct Instance;
};

}  // namespace swinflow
