// Copyright (c) 2026 swinflow contributors
// SPDX-License-Identifier: Apache-2.0
//
// 1F1B pipeline schedule: per-stage op orders, dependency-driven timeline
// simulation with deadlock detection, and the idle-fraction measurement the
// bubble law is checked against.

#pragma once

#include "swinflow/common.hpp"

#include <optional>
#include <string>
#include <vector>

namespace swinflow {

struct PipeOp {
    int stage = 0;
    int microbatch = 0;
    bool backward = false;

    bool operator==(const PipeOp&) const = default;
    std::string name() const {
        return std::string(backward ? "B" : "F") + std::to_string(microbatch) + "@s" + std::to_string(stage);
    }
};

/// One-forward-one-backward order: stage s warms up with min(gas, stages - s)
/// forwards, then alternates backward/forward, then drains backwards.
inline std::vector<std::vector<PipeOp>> one_f_one_b_order(int stages, int gas) {
    require(stages >= 1 && gas >= 1, "pipeline: stages and gas must be >= 1");
    std::vector<std::vector<PipeOp>> order(stages);
    for (int s = 0; s < stages; ++s) {
        const int warmup = std::min(gas, stages - s);
        for (int m = 0; m < warmup; ++m) order[s].push_back({s, m, false});
        for (int m = warmup; m < gas; ++m) {
            order[s].push_back({s, m - warmup, true});
            order[s].push_back({s, m, false});
        }
        for (int m = gas - warmup; m < gas; ++m) order[s].push_back({s, m, true});
    }
    return order;
}

/// Naive non-pipelined order: each microbatch runs forward through all stages
/// and backward through all stages before the next starts. Used by the
/// schedule-transparency test.
inline std::vector<std::vector<PipeOp>> sequential_order(int stages, int gas) {
    std::vector<std::vector<PipeOp>> order(stages);
    for (int m = 0; m < gas; ++m) {
        for (int s = 0; s < stages; ++s) order[s].push_back({s, m, false});
        for (int s = stages - 1; s >= 0; --s) order[s].push_back({s, m, true});
    }
    return order;
}

struct TimelineEntry {
    int stage = 0;
    double t_start = 0;
    double t_end = 0;
    PipeOp op;
};

struct TimelineResult {
    std::vector<TimelineEntry> entries;  // in start-time order
    double makespan = 0;
    double bubble_fraction = 0;

    /// CSV dump: rank (stage), t_start, t_end, op, microbatch.
    std::string to_csv() const {
        std::string out = "rank,t_start,t_end,op,microbatch\n";
        for (const auto& e : entries) {
            out += std::to_string(e.stage) + "," + std::to_string(e.t_start) + "," + std::to_string(e.t_end) +
                   "," + (e.op.backward ? "backward" : "forward") + "," + std::to_string(e.op.microbatch) +
                   "\n";
        }
        return out;
    }
};

struct ScheduleError : std::runtime_error {
    explicit ScheduleError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Execute per-stage op sequences against the forward/backward dependency
/// graph: F(s,m) needs F(s-1,m); B(s,m) needs B(s+1,m) and F(s,m). Throws
/// ScheduleError naming a blocked edge when the order deadlocks.
inline TimelineResult simulate_timeline(const std::vector<std::vector<PipeOp>>& order, int stages, int gas,
                                        double t_fwd = 1.0, double t_bwd = 1.0) {
    std::vector<std::size_t> next(stages, 0);
    std::vector<double> stage_free(stages, 0.0);
    std::vector<double> stage_busy(stages, 0.0);
    // completion times, -1 while pending
    std::vector<std::vector<double>> f_done(stages, std::vector<double>(gas, -1.0));
    std::vector<std::vector<double>> b_done(stages, std::vector<double>(gas, -1.0));

    TimelineResult res;
    std::size_t total = 0;
    for (const auto& seq : order) total += seq.size();

    std::size_t done = 0;
    while (done < total) {
        bool progressed = false;
        for (int s = 0; s < stages; ++s) {
            while (next[s] < order[s].size()) {
                const PipeOp& op = order[s][next[s]];
                double dep = 0.0;
                if (!op.backward) {
                    if (s > 0) {
                        if (f_done[s - 1][op.microbatch] < 0) break;
                        dep = f_done[s - 1][op.microbatch];
                    }
                } else {
                    if (f_done[s][op.microbatch] < 0) break;
                    dep = f_done[s][op.microbatch];
                    if (s < stages - 1) {
                        if (b_done[s + 1][op.microbatch] < 0) break;
                        dep = std::max(dep, b_done[s + 1][op.microbatch]);
                    }
                }
                const double start = std::max(stage_free[s], dep);
                const double dur = op.backward ? t_bwd : t_fwd;
                const double end = start + dur;
                stage_free[s] = end;
                stage_busy[s] += dur;
                (op.backward ? b_done : f_done)[s][op.microbatch] = end;
                res.entries.push_back({s, start, end, op});
                ++next[s];
                ++done;
                progressed = true;
            }
        }
        if (!progressed && done < total) {
            for (int s = 0; s < stages; ++s) {
                if (next[s] < order[s].size()) {
                    const PipeOp& op = order[s][next[s]];
                    throw ScheduleError("pipeline deadlock: " + op.name() + " waits on " +
                                        (op.backward && s < stages - 1 && b_done[s + 1][op.microbatch] < 0
                                             ? PipeOp{s + 1, op.microbatch, true}.name()
                                             : PipeOp{std::max(0, s - 1), op.microbatch, false}.name()) +
                                        " which is not scheduled before it");
                }
            }
            throw ScheduleError("pipeline deadlock (no runnable op)");
        }
    }

    std::sort(res.entries.begin(), res.entries.end(), [](const TimelineEntry& a, const TimelineEntry& b) {
        return a.t_start < b.t_start || (a.t_start == b.t_start && a.stage < b.stage);
    });
    for (int s = 0; s < stages; ++s) res.makespan = std::max(res.makespan, stage_free[s]);
    double idle = 0;
    for (int s = 0; s < stages; ++s) idle += res.makespan - stage_busy[s];
    res.bubble_fraction = idle / (stages * res.makespan);
    return res;
}

/// Ideal 1F1B idle fraction for uniform stage costs.
inline double bubble_fraction_ideal(int pp, int gas) {
    return double(pp - 1) / double(gas + pp - 1);
}

}  // namespace swinflow
