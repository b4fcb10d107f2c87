// Copyright (c) 2026 swinflow contributors
// SPDX-License-Identifier: Apache-2.0
//
// Parallelism topology: a 2D window-parallel grid (A x B) of nodes, SP
// sequence ranks inside each node, PP pipeline stages (= Swin layers + 2;
// the first and last stages host encode+I/O and decode+I/O), and DP data
// replicas. Windows go to WP ranks round-robin in both axes; sequence slices
// are row bands keyed by global row phase so a token never changes its SP
// peer across window shifts.

#pragma once

#include "swinflow/grid.hpp"
#include "swinflow/model.hpp"
#include "swinflow/window.hpp"

#include <map>
#include <vector>

namespace swinflow {

struct Topology {
    int wp_a = 1;  // WP grid rows
    int wp_b = 1;  // WP grid cols
    int sp = 1;
    int pp = 1;
    int dp = 1;
    int gas = 1;
    int layers = 1;  // Swin layers hosted by the middle stages

    int wp() const { return wp_a * wp_b; }
    int total_ranks() const { return wp() * sp * pp * dp; }
    int nodes_per_instance() const { return wp() * pp; }
    int nodes_total() const { return nodes_per_instance() * dp; }
    int global_batch() const { return dp * gas; }
};

struct RankCoord {
    int wp_y = 0;
    int wp_x = 0;
    int sp_idx = 0;
    int pp_stage = 0;
    int dp_idx = 0;

    bool operator==(const RankCoord&) const = default;
};

inline int flat_rank(const Topology& t, const RankCoord& c) {
    return (((c.dp_idx * t.pp + c.pp_stage) * t.wp_a + c.wp_y) * t.wp_b + c.wp_x) * t.sp + c.sp_idx;
}

inline RankCoord coord_of_rank(const Topology& t, int flat) {
    RankCoord c;
    c.sp_idx = flat % t.sp;
    flat /= t.sp;
    c.wp_x = flat % t.wp_b;
    flat /= t.wp_b;
    c.wp_y = flat % t.wp_a;
    flat /= t.wp_a;
    c.pp_stage = flat % t.pp;
    flat /= t.pp;
    c.dp_idx = flat;
    return c;
}

/// Simulated node identity: one WP rank of one stage of one replica; SP
/// sub-ranks share the node (alltoall stays intra-node).
inline int node_of(const Topology& t, const RankCoord& c) {
    return ((c.dp_idx * t.pp + c.pp_stage) * t.wp_a + c.wp_y) * t.wp_b + c.wp_x;
}

/// Validate a topology against the model and grid; throws ConfigError naming
/// the failing constraint.
inline Topology build_topology(int wp_a, int wp_b, int sp, int pp, int dp, int gas,
                               const ModelConfig& model, const GridSpec& grid) {
    Topology t;
    t.wp_a = wp_a;
    t.wp_b = wp_b;
    t.sp = sp;
    t.pp = pp;
    t.dp = dp;
    t.gas = gas;
    t.layers = model.n_layers;
    require(wp_a >= 1 && wp_b >= 1 && sp >= 1 && pp >= 1 && dp >= 1 && gas >= 1,
            "topology: all degrees must be >= 1");
    require(pp == model.n_layers + 2,
            "topology: PP must equal layers + 2 (got PP=" + std::to_string(pp) + ", layers=" +
                std::to_string(model.n_layers) + ")");
    model.validate_grid(grid.height, grid.width);
    const int wy = grid.height / model.window_px, wx = grid.width / model.window_px;
    require(wy % wp_a == 0, "topology: window rows " + std::to_string(wy) + " not divisible by WP grid A=" +
                                std::to_string(wp_a));
    require(wx % wp_b == 0, "topology: window cols " + std::to_string(wx) + " not divisible by WP grid B=" +
                                std::to_string(wp_b));
    const int s_w = model.window_px * model.window_px;
    require(s_w % sp == 0, "topology: SP=" + std::to_string(sp) + " does not divide window token count " +
                               std::to_string(s_w));
    require(model.window_px % sp == 0,
            "topology: SP=" + std::to_string(sp) + " does not divide window side " +
                std::to_string(model.window_px) + " (row-band slicing)");
    require(model.n_heads % sp == 0, "topology: SP=" + std::to_string(sp) + " does not divide head count " +
                                         std::to_string(model.n_heads));
    return t;
}

/// Owner (a, b) of window (wy, wx): round-robin in both axes.
inline std::pair<int, int> window_owner(int wy, int wx, int wp_a, int wp_b) {
    return {wy % wp_a, wx % wp_b};
}

/// The set of (window-id, band) pairs one rank owns at one layout.
struct ShardView {
    std::vector<int> window_ids;  // under the layout's window grid, id-ordered
    int band = 0;
    int tokens_per_window = 0;

    i64 total_tokens() const { return static_cast<i64>(window_ids.size()) * tokens_per_window; }
};

inline ShardView shard_view(const WindowLayout& lay, const Topology& t, int a, int b, int sp_idx) {
    ShardView v;
    v.band = sp_idx;
    v.tokens_per_window = lay.tokens_per_window() / t.sp;
    for (int wy = 0; wy < lay.windows_y(); ++wy) {
        for (int wx = 0; wx < lay.windows_x(); ++wx) {
            if (window_owner(wy, wx, t.wp_a, t.wp_b) == std::make_pair(a, b)) {
                v.window_ids.push_back(wy * lay.windows_x() + wx);
            }
        }
    }
    return v;
}

// ---------------------------------------------------------------------------
// Window-shift transfer plan: which fragments leave their (wp, sp) coordinate
// at a stage boundary. The aligned remainder rides the ordinary pipeline hop.

struct TransferMsg {
    int src_wy = 0, src_wx = 0;  // source WP coordinate
    int dst_wy = 0, dst_wx = 0;  // destination WP coordinate
    int sp_idx = 0;              // preserved across the hop
    int dst_window = 0;          // window id under the destination layout
    i64 tokens = 0;
};

/// Brute-force ownership diff between two layouts. Each token appears in at
/// most one message; destination sp equals source sp by construction of the
/// row-band slicing.
inline std::vector<TransferMsg> shift_transfer_plan(const WindowLayout& from, const WindowLayout& to,
                                                    const Topology& t) {
    std::map<std::tuple<int, int, int, int, int, int>, i64> agg;  // src(a,b) dst(a,b) sp dst_window
    const int w = from.window_px;
    for (int wy = 0; wy < to.windows_y(); ++wy) {
        for (int wx = 0; wx < to.windows_x(); ++wx) {
            const auto [da, db] = window_owner(wy, wx, t.wp_a, t.wp_b);
            for (int r = 0; r < w; ++r) {
                const int dst_band = to.band_of_row(r, t.sp);
                for (int c = 0; c < w; ++c) {
                    const i64 pix = to.pixel_of(wy, wx, r, c);
                    const int y = static_cast<int>(pix / to.grid_w);
                    const int x = static_cast<int>(pix % to.grid_w);
                    // Source window/token under `from`.
                    const int sy = (y - from.shift + from.grid_h) % from.grid_h;
                    const int sx = (x - from.shift + from.grid_w) % from.grid_w;
                    const int swy = sy / w, swx = sx / w;
                    const int sr = sy % w;
                    const auto [sa, sb] = window_owner(swy, swx, t.wp_a, t.wp_b);
                    const int src_band = from.band_of_row(sr, t.sp);
                    // Row-band slicing by global row phase keeps sp fixed.
                    if (src_band != dst_band) {
                        throw ConfigError("shift plan: sp slice changed across boundary (internal error)");
                    }
                    if (sa != da || sb != db) {
                        agg[{sa, sb, da, db, src_band, wy * to.windows_x() + wx}] += 1;
                    }
                }
            }
        }
    }
    std::vector<TransferMsg> plan;
    for (const auto& [key, count] : agg) {
        TransferMsg m;
        std::tie(m.src_wy, m.src_wx, m.dst_wy, m.dst_wx, m.sp_idx, m.dst_window) = key;
        m.tokens = count;
        plan.push_back(m);
    }
    return plan;
}

// ---------------------------------------------------------------------------
// Communication ledger: exact integer byte counts per collective class, per
// rank, with intra/inter-node tags.

enum class Collective { AllToAll, SendRecv, AllReduce, GradSum };

inline const char* collective_name(Collective c) {
    switch (c) {
        case Collective::AllToAll: return "alltoall";
        case Collective::SendRecv: return "sendrecv";
        case Collective::AllReduce: return "allreduce";
        case Collective::GradSum: return "gradsum";
    }
    return "?";
}

class CommLedger {
public:
    void add(int step, int layer, Collective coll, int rank, u64 bytes, bool intra) {
        rows_[{step, layer, static_cast<int>(coll), rank, intra}] += bytes;
        totals_[static_cast<int>(coll)] += bytes;
        rank_totals_[{rank, static_cast<int>(coll)}] += bytes;
    }

    u64 total(Collective c) const {
        const auto it = totals_.find(static_cast<int>(c));
        return it == totals_.end() ? 0 : it->second;
    }

    u64 rank_total(int rank, Collective c) const {
        const auto it = rank_totals_.find({rank, static_cast<int>(c)});
        return it == rank_totals_.end() ? 0 : it->second;
    }

    void reset() {
        rows_.clear();
        totals_.clear();
        rank_totals_.clear();
    }

    /// CSV dump: step, layer, collective, rank, bytes, intra|inter.
    std::string to_csv() const {
        std::string out = "step,layer,collective,rank,bytes,locality\n";
        for (const auto& [key, bytes] : rows_) {
            const auto& [step, layer, coll, rank, intra] = key;
            out += std::to_string(step) + "," + std::to_string(layer) + "," +
                   collective_name(static_cast<Collective>(coll)) + "," + std::to_string(rank) + "," +
                   std::to_string(bytes) + "," + (intra ? "intra" : "inter") + "\n";
        }
        return out;
    }

private:
    std::map<std::tuple<int, int, int, int, bool>, u64> rows_;
    std::map<int, u64> totals_;
    std::map<std::pair<int, int>, u64> rank_totals_;
};

// ---------------------------------------------------------------------------
// Closed-form communication accounting shared by the simulator's assertions
// and the analytic performance model. All quantities are exact integers.

struct CommCounts {
    u64 alltoall_per_rank_call = 0;    // elements, one alltoall event
    u64 sendrecv_per_rank_hop = 0;     // elements, one stage-boundary send
    u64 alltoall_total = 0;            // elements per optimizer step, all ranks
    u64 sendrecv_total = 0;            // elements per optimizer step, all ranks
    u64 gradsum_total = 0;             // elements per optimizer step
    u64 allreduce_total_bytes = 0;     // ring-equivalent bytes per step
};

inline CommCounts comm_counts(const ModelConfig& model, const GridSpec& grid, const Topology& t,
                              int bytes_per_element) {
    CommCounts cc;
    const u64 s = static_cast<u64>(grid.height) * grid.width;
    const u64 h = static_cast<u64>(model.hidden_dim);
    const u64 m_elems = s * h / (static_cast<u64>(t.wp()) * t.sp);  // M = b*s*h / SP / WP, b = 1
    cc.alltoall_per_rank_call = t.sp > 1 ? m_elems : 0;  // SP=1 degenerates to a no-op
    cc.sendrecv_per_rank_hop = m_elems;
    const u64 blocks = static_cast<u64>(model.n_blocks());
    const u64 group = static_cast<u64>(t.wp()) * t.sp;
    // 2 alltoalls forward + 2 backward per block per microbatch, per replica.
    cc.alltoall_total =
        static_cast<u64>(t.dp) * t.gas * blocks * 4 * cc.alltoall_per_rank_call * group;
    // One send per boundary per direction per microbatch.
    cc.sendrecv_total = static_cast<u64>(t.dp) * t.gas * 2 * static_cast<u64>(t.pp - 1) * m_elems * group;

    // Per-stage parameter element counts.
    const u64 hh = h;
    const u64 enc = static_cast<u64>(model.in_channels) * hh + hh;
    const u64 dec = hh + static_cast<u64>(model.out_channels) * hh + model.out_channels;
    const u64 td = static_cast<u64>(model.tdim());
    const u64 time_elems = td * td + td;
    const u64 per_block = 3 * hh * hh + hh * hh + 2 * hh + 3 * static_cast<u64>(model.ffn_dim) * hh +
                          6 * hh * td + 6 * hh;
    const u64 block_stage = static_cast<u64>(model.blocks_per_layer) * per_block + time_elems;
    u64 gradsum = (group - 1) * enc + (group - 1) * dec;
    gradsum += static_cast<u64>(model.n_layers) * (group - 1) * block_stage;
    if (model.n_layers > 1) gradsum += static_cast<u64>(model.n_layers - 1) * time_elems;
    cc.gradsum_total = static_cast<u64>(t.dp) * gradsum;

    const u64 param_bytes =
        static_cast<u64>(parameter_count_formula(model)) * static_cast<u64>(bytes_per_element);
    cc.allreduce_total_bytes = t.dp > 1 ? (2 * static_cast<u64>(t.dp - 1) * param_bytes) / t.dp : 0;
    return cc;
}

}  // namespace swinflow
