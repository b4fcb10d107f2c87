// Copyright (c) 2026 swinflow contributors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "swinflow/simulator.hpp"
#include "swinflow/toy_dataset.hpp"

#include <set>

using namespace swinflow;

namespace {

ModelConfig desk_model(int h, int layers, int w_px, int heads = 4) {
    ModelConfig c;
    c.hidden_dim = h;
    c.n_heads = heads;
    c.ffn_dim = 2 * h;
    c.n_layers = layers;
    c.window_px = w_px;
    c.in_channels = 8;  // 3 residual + 3 state + 2 forcing
    c.out_channels = 3;
    c.time_dim = 16;
    return c;
}

GridSpec desk_grid(int hgt, int wdt) {
    GridSpec g;
    g.height = hgt;
    g.width = wdt;
    g.channels_prognostic = 3;
    g.channels_forcing = 2;
    return g;
}

template <class T>
DataSet<T> make_data(const GridSpec& grid, int n_steps, u64 seed) {
    const auto toy = make_toy_dataset<T>(seed, grid, n_steps);
    auto state_std = Standardizer<T>::from_fields(toy.states);
    auto forc_std = Standardizer<T>::from_fields(toy.forcings);
    std::vector<FieldTensor<T>> resid;
    for (std::size_t i = 0; i + 1 < toy.states.size(); ++i) {
        FieldTensor<T> r = toy.states[i + 1];
        r.values -= toy.states[i].values;
        resid.push_back(r);
    }
    auto resid_std = Standardizer<T>::from_fields(resid);
    DataSet<T> ds;
    for (std::size_t i = 0; i + 1 < toy.states.size(); ++i) {
        ds.states.push_back(state_std.apply_mat(toy.states[i].values));
        ds.forcings.push_back(forc_std.apply_mat(toy.forcings[i].values));
        ds.residuals.push_back(resid_std.apply_mat(resid[i].values));
    }
    return ds;
}

template <class T>
double max_rel_grad_err(Parameters<T>& a, Parameters<T>& b) {
    auto aa = parameter_arrays(a);
    auto bb = parameter_arrays(b);
    double worst = 0;
    for (std::size_t i = 0; i < aa.size(); ++i) {
        const T* pa = param_data<T>(aa[i]);
        const T* pb = param_data<T>(bb[i]);
        double scale = 0;
        for (i64 j = 0; j < aa[i].size; ++j) scale = std::max(scale, double(std::abs(pa[j])));
        scale = std::max(scale, 1e-30);
        for (i64 j = 0; j < aa[i].size; ++j) {
            worst = std::max(worst, double(std::abs(pa[j] - pb[j])) / scale);
        }
    }
    return worst;
}

}  // namespace

TEST_CASE("build_topology: paper rows and failing constraints") {
    // 1.3B row: WP=4 (2x2), PP=12, SP=12, DP=1 -> 48 nodes per instance.
    {
        ModelConfig m = desk_model(48, 10, 12, 12);  // head_dim 4, sp 12 divides window 12
        GridSpec g = desk_grid(48, 96);              // windows 4x8
        const Topology t = build_topology(2, 2, 12, 12, 1, 1, m, g);
        CHECK(t.nodes_per_instance() == 48);
        CHECK(t.total_ranks() == 2 * 2 * 12 * 12);
    }
    // 40B scale text values: WP=36 (6x6), PP=20, DP=14 -> 10080 nodes.
    {
        ModelConfig m = desk_model(48, 18, 4, 12);
        GridSpec g = desk_grid(24 * 4, 24 * 8);  // windows 24x48, divisible by 6x6
        const Topology t = build_topology(6, 6, 4, 20, 14, 140, m, g);
        CHECK(t.nodes_total() == 10080);
    }
    // Minimal degenerate topology: WP=1, L=1, PP=3.
    {
        ModelConfig m = desk_model(16, 1, 6);
        GridSpec g = desk_grid(12, 12);
        const Topology t = build_topology(1, 1, 1, 3, 1, 1, m, g);
        CHECK(t.total_ranks() == 3);
    }
    // Failing constraints are named.
    {
        ModelConfig m = desk_model(16, 2, 6);
        GridSpec g = desk_grid(12, 12);
        CHECK_THROWS_WITH_AS(build_topology(1, 1, 1, 3, 1, 1, m, g),
                             doctest::Contains("PP must equal layers + 2"), ConfigError);
        CHECK_THROWS_WITH_AS(build_topology(4, 1, 1, 4, 1, 1, m, g),
                             doctest::Contains("not divisible by WP grid"), ConfigError);
        CHECK_THROWS_WITH_AS(build_topology(1, 1, 4, 4, 1, 1, m, g),
                             doctest::Contains("does not divide window side"), ConfigError);
    }
}

TEST_CASE("rank coordinate mapping is a bijection") {
    ModelConfig m = desk_model(16, 2, 6);
    GridSpec g = desk_grid(24, 48);
    const Topology t = build_topology(2, 2, 2, 4, 3, 2, m, g);
    std::set<int> seen;
    for (int flat = 0; flat < t.total_ranks(); ++flat) {
        const RankCoord c = coord_of_rank(t, flat);
        CHECK(flat_rank(t, c) == flat);
        seen.insert(flat);
    }
    CHECK(static_cast<int>(seen.size()) == t.total_ranks());
}

TEST_CASE("assign_windows: round-robin ownership, balanced and exhaustive") {
    WindowLayout lay{24, 48, 6, 0};  // 4x8 windows
    ModelConfig m = desk_model(16, 2, 6);
    GridSpec g = desk_grid(24, 48);
    const Topology t = build_topology(2, 2, 1, 4, 1, 1, m, g);
    // Each of the 4 ranks owns 8 of the 32 windows.
    std::set<int> all;
    for (int a = 0; a < 2; ++a) {
        for (int b = 0; b < 2; ++b) {
            const ShardView v = shard_view(lay, t, a, b, 0);
            CHECK(v.window_ids.size() == 8);
            for (int id : v.window_ids) {
                CHECK(all.insert(id).second);
                const int wy = id / lay.windows_x(), wx = id % lay.windows_x();
                CHECK(wy % 2 == a);
                CHECK(wx % 2 == b);
            }
        }
    }
    CHECK(all.size() == 32);
    // Window (3,5) on a 2x2 WP grid belongs to rank (1,1).
    CHECK(window_owner(3, 5, 2, 2) == std::make_pair(1, 1));
}

TEST_CASE("assign_windows: 12x24 windows on 6x6 WP matches brute-force mod enumeration") {
    WindowLayout lay{12 * 5, 24 * 5, 5, 0};
    ModelConfig m;  // only used for divisibility checks; construct topology directly
    Topology t;
    t.wp_a = 6;
    t.wp_b = 6;
    for (int a = 0; a < 6; ++a) {
        for (int b = 0; b < 6; ++b) {
            const ShardView v = shard_view(lay, t, a, b, 0);
            CHECK(v.window_ids.size() == 8);  // (12/6) * (24/6)
            for (int id : v.window_ids) {
                CHECK((id / lay.windows_x()) % 6 == a);
                CHECK((id % lay.windows_x()) % 6 == b);
            }
        }
    }
}

TEST_CASE("sequence slices: equal sizes, disjoint, shift-invariant band index") {
    for (int shift : {0, 3}) {
        WindowLayout lay{24, 48, 6, shift};
        for (int sp : {1, 2, 3}) {
            std::set<int> rows_seen;
            for (int band = 0; band < sp; ++band) {
                const auto rows = lay.band_rows(band, sp);
                CHECK(static_cast<int>(rows.size()) == 6 / sp);
                for (int r : rows) CHECK(rows_seen.insert(r).second);
            }
            CHECK(static_cast<int>(rows_seen.size()) == 6);
        }
    }
    // A token's band depends only on its global row phase, not the shift.
    WindowLayout l0{24, 48, 6, 0}, l3{24, 48, 6, 3};
    for (int gy = 0; gy < 24; ++gy) {
        // find (window,row) under each layout for a pixel in global row gy
        const int r0 = gy % 6;
        const int r3 = (gy - 3 + 24) % 24 % 6;
        CHECK(l0.band_of_row(r0, 3) == l3.band_of_row(r3, 3));
    }
}

TEST_CASE("shift transfer plan: empty for aligned layouts, exact ownership diff otherwise") {
    ModelConfig m = desk_model(16, 2, 6);
    GridSpec g = desk_grid(24, 48);
    const Topology t = build_topology(2, 2, 2, 4, 1, 1, m, g);
    WindowLayout l0{24, 48, 6, 0}, l3{24, 48, 6, 3};

    CHECK(shift_transfer_plan(l0, l0, t).empty());

    const auto plan = shift_transfer_plan(l0, l3, t);
    CHECK(!plan.empty());
    // Conservation: displaced tokens counted once, equal per-rank totals.
    std::map<std::tuple<int, int, int>, i64> sent;
    i64 total = 0;
    for (const auto& msg : plan) {
        CHECK(msg.tokens > 0);
        sent[{msg.src_wy, msg.src_wx, msg.sp_idx}] += msg.tokens;
        total += msg.tokens;
        // sp preserved by construction; destination differs from source.
        CHECK(!(msg.src_wy == msg.dst_wy && msg.src_wx == msg.dst_wx));
    }
    // Brute-force displaced-token count.
    i64 expect = 0;
    for (int y = 0; y < 24; ++y) {
        for (int x = 0; x < 48; ++x) {
            const auto own0 = window_owner(y / 6, x / 6, 2, 2);
            const int sy = (y - 3 + 24) % 24, sx = (x - 3 + 48) % 48;
            // pixel (y,x) sits in shifted window (sy/6, sx/6)
            const auto own3 = window_owner(sy / 6, sx / 6, 2, 2);
            if (own0 != own3) ++expect;
        }
    }
    CHECK(total == expect);
    // Balance: displaced volume is equal across WP ranks (aggregated over
    // their SP peers; bands aligned with the shift boundary displace more
    // than the others, but the round-robin keeps WP ranks symmetric).
    std::map<std::pair<int, int>, i64> by_wp;
    for (const auto& [key, v] : sent) by_wp[{std::get<0>(key), std::get<1>(key)}] += v;
    i64 per = -1;
    for (const auto& [key, v] : by_wp) {
        if (per < 0) per = v;
        CHECK(v == per);
    }
}

TEST_CASE("1F1B timeline: bubble law, schedule transparency, deadlock detection") {
    for (int pp : {2, 4, 8}) {
        for (int gas : {1, 4, 16, 64}) {
            const auto order = one_f_one_b_order(pp, gas);
            const auto res = simulate_timeline(order, pp, gas);
            const double ideal = bubble_fraction_ideal(pp, gas);
            CHECK(std::abs(res.bubble_fraction - ideal) < 0.01);
            // Dependencies respected: F(s,m) after F(s-1,m), B(s,m) after B(s+1,m).
            std::map<std::pair<int, int>, double> f_end, b_end;
            for (const auto& e : res.entries) {
                (e.op.backward ? b_end : f_end)[{e.stage, e.op.microbatch}] = e.t_end;
            }
            for (const auto& e : res.entries) {
                if (!e.op.backward && e.stage > 0) {
                    CHECK(e.t_start >= f_end[{e.stage - 1, e.op.microbatch}] - 1e-12);
                }
                if (e.op.backward && e.stage < pp - 1) {
                    CHECK(e.t_start >= b_end[{e.stage + 1, e.op.microbatch}] - 1e-12);
                }
            }
            // Steady state holds at most PP microbatches in flight per stage.
            // (warmup depth = min(gas, pp - s) <= pp by construction)
        }
    }
    // PP=2, GAS=1 closed form.
    const auto r = simulate_timeline(one_f_one_b_order(2, 1), 2, 1);
    CHECK(r.bubble_fraction == doctest::Approx(0.5));
    // PP=4, GAS=12 -> 3/15.
    const auto r2 = simulate_timeline(one_f_one_b_order(4, 12), 4, 12);
    CHECK(r2.bubble_fraction == doctest::Approx(0.2).epsilon(1e-9));

    // Deadlock: stage 1 wants its backward before its forward.
    auto bad = one_f_one_b_order(2, 1);
    std::swap(bad[1][0], bad[1][1]);
    CHECK_THROWS_AS(simulate_timeline(bad, 2, 1), ScheduleError);
}

TEST_CASE("grad_allreduce: identity, cancellation, matches a high-precision mean") {
    ModelConfig m = desk_model(16, 1, 6);
    m.in_channels = 8;
    // DP=1: identity, zero bytes.
    {
        std::vector<Parameters<float>> one{init_parameters_random<float>(m, 1)};
        const auto copy = one[0];
        CommLedger led;
        auto out = grad_allreduce(one, &led, 0);
        CHECK(led.total(Collective::AllReduce) == 0);
        auto oa = parameter_arrays(out);
        auto ca = parameter_arrays(const_cast<Parameters<float>&>(copy));
        for (std::size_t i = 0; i < oa.size(); ++i)
            CHECK(std::memcmp(oa[i].data, ca[i].data, sizeof(float) * oa[i].size) == 0);
    }
    // DP=2 with g and -g cancels exactly.
    {
        std::vector<Parameters<double>> two;
        two.push_back(init_parameters_random<double>(m, 2));
        two.push_back(two[0]);
        auto neg = parameter_arrays(two[1]);
        for (auto& a : neg) {
            double* p = param_data<double>(a);
            for (i64 j = 0; j < a.size; ++j) p[j] = -p[j];
        }
        auto out = grad_allreduce(two);
        auto oa = parameter_arrays(out);
        for (auto& a : oa) {
            const double* p = param_data<double>(a);
            for (i64 j = 0; j < a.size; ++j) CHECK(p[j] == 0.0);
        }
    }
    // DP=4 float tree vs double sequential mean within 1e-7.
    {
        std::vector<Parameters<float>> four;
        std::vector<Parameters<double>> ref;
        for (int d = 0; d < 4; ++d) {
            four.push_back(init_parameters_random<float>(m, 100 + d));
            ref.push_back(init_parameters_random<double>(m, 100 + d));
        }
        auto out = grad_allreduce(four);
        Parameters<double> mean = Parameters<double>::zeros(m);
        auto ma = parameter_arrays(mean);
        for (int d = 0; d < 4; ++d) {
            auto ra = parameter_arrays(ref[d]);
            for (std::size_t i = 0; i < ma.size(); ++i) {
                double* dst = param_data<double>(ma[i]);
                // the float replicas hold float values; accumulate those
                auto fa = parameter_arrays(four[d]);
                (void)fa;
                const double* src = param_data<double>(ra[i]);
                for (i64 j = 0; j < ma[i].size; ++j) dst[j] += src[j];
            }
        }
        // Compare against the double mean of the same float inputs instead:
        Parameters<double> mean2 = Parameters<double>::zeros(m);
        auto m2 = parameter_arrays(mean2);
        for (int d = 0; d < 4; ++d) {
            auto fresh = init_parameters_random<float>(m, 100 + d);
            auto fa = parameter_arrays(fresh);
            for (std::size_t i = 0; i < m2.size(); ++i) {
                double* dst = param_data<double>(m2[i]);
                const float* src = param_data<float>(fa[i]);
                for (i64 j = 0; j < m2[i].size; ++j) dst[j] += double(src[j]);
            }
        }
        auto oa = parameter_arrays(out);
        double worst = 0;
        for (std::size_t i = 0; i < oa.size(); ++i) {
            const float* p = param_data<float>(oa[i]);
            const double* q = param_data<double>(m2[i]);
            for (i64 j = 0; j < oa[i].size; ++j) {
                worst = std::max(worst, std::abs(double(p[j]) - q[j] / 4.0));
            }
        }
        CHECK(worst < 1e-7);
    }
}

TEST_CASE("seed protocol: shared t across model-parallel ranks, window-keyed z is topology invariant") {
    SeedProtocol sp{77};
    // Model-parallel ranks of one (sample, dp slot) share t; samples differ.
    CHECK(sp.t_key(3) == sp.t_key(3));
    CHECK(sp.t_key(3) != sp.t_key(4));
    CHECK(sp.z_rank_key(3, 10) != sp.z_rank_key(3, 11));
    // Full-field z assembled from per-window cells equals a single generator
    // pass (this keying makes sharded-vs-reference equivalence possible).
    WindowLayout lay{12, 12, 6, 0};
    const MatX<double> whole = noise_field<double>(sp, 9, 2, lay, 1.0);
    MatX<double> assembled(2, 144);
    for (int wy = 0; wy < 2; ++wy)
        for (int wx = 0; wx < 2; ++wx)
            for (int tok = 0; tok < 36; ++tok) {
                const i64 pix = lay.pixel_of(wy, wx, tok / 6, tok % 6);
                const u64 key = sp.z_cell_key(9, static_cast<u64>(wy * 2 + wx), static_cast<u64>(tok));
                for (int c = 0; c < 2; ++c) assembled(c, pix) = gaussian(key, c);
            }
    CHECK(whole == assembled);
}

TEST_CASE("sharded train step: trivial sharding equals the reference") {
    ModelConfig m = desk_model(16, 1, 6);
    GridSpec g = desk_grid(12, 12);
    const Topology t = build_topology(1, 1, 1, 3, 1, 1, m, g);
    const auto data = make_data<double>(g, 6, 5);
    const auto w = LossWeights<double>::uniform(g, 3);
    DiffusionConfig dc;
    SeedProtocol seeds{11};
    auto params = init_parameters_random<double>(m, 6, 0.1);

    SwipeSimulator<double> sim(m, g, t, dc, w, seeds);
    const auto sharded = sim.train_step(params, data, 0);
    const auto ref = reference_train_step(params, data, 0, 1, 1, w, dc, seeds,
                                          sinusoidal_pos_encode<double>(g, m.in_channels), g);
    CHECK(std::abs(sharded.loss - ref.loss) / std::abs(ref.loss) < 1e-12);
    auto sg = const_cast<Parameters<double>&>(sharded.grads);
    auto rg = const_cast<Parameters<double>&>(ref.grads);
    CHECK(max_rel_grad_err(sg, rg) < 1e-12);
}

TEST_CASE("sharded train step: WP/SP/PP/DP composition matches the reference at 1e-10") {
    ModelConfig m = desk_model(32, 2, 6);
    GridSpec g = desk_grid(24, 48);
    const auto data = make_data<double>(g, 10, 7);
    const auto w = LossWeights<double>::uniform(g, 3);
    DiffusionConfig dc;
    SeedProtocol seeds{13};
    auto params = init_parameters_random<double>(m, 8, 0.1);
    const MatX<double> pos = sinusoidal_pos_encode<double>(g, m.in_channels);

    struct Case {
        int a, b, sp, pp, dp, gas;
    };
    for (const Case c : {Case{2, 2, 2, 4, 2, 2}, Case{4, 4, 1, 4, 1, 2}}) {
        const Topology t = build_topology(c.a, c.b, c.sp, c.pp, c.dp, c.gas, m, g);
        SwipeSimulator<double> sim(m, g, t, dc, w, seeds);
        const auto sharded = sim.train_step(params, data, 100);
        const auto ref = reference_train_step(params, data, 100, c.dp, c.gas, w, dc, seeds, pos, g);
        CHECK(std::abs(sharded.loss - ref.loss) / std::abs(ref.loss) < 1e-10);
        auto sg = const_cast<Parameters<double>&>(sharded.grads);
        auto rg = const_cast<Parameters<double>&>(ref.grads);
        CHECK(max_rel_grad_err(sg, rg) < 1e-10);
    }
}

TEST_CASE("sharded train step: pipelined and sequential schedules give bitwise-identical results") {
    ModelConfig m = desk_model(16, 2, 6);
    GridSpec g = desk_grid(12, 24);
    const auto data = make_data<double>(g, 8, 9);
    const auto w = LossWeights<double>::uniform(g, 3);
    DiffusionConfig dc;
    SeedProtocol seeds{17};
    auto params = init_parameters_random<double>(m, 10, 0.1);
    const Topology t = build_topology(2, 2, 1, 4, 1, 3, m, g);
    SwipeSimulator<double> sim(m, g, t, dc, w, seeds);
    const auto piped = sim.train_step(params, data, 0, /*pipelined=*/true);
    const auto seq = sim.train_step(params, data, 0, /*pipelined=*/false);
    CHECK(piped.loss == seq.loss);
    auto pa = parameter_arrays(const_cast<Parameters<double>&>(piped.grads));
    auto sa = parameter_arrays(const_cast<Parameters<double>&>(seq.grads));
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(std::memcmp(pa[i].data, sa[i].data, sizeof(double) * pa[i].size) == 0);
    }
}

TEST_CASE("byte law: ledger equals the analytic model exactly; WP halves alltoall+sendrecv") {
    ModelConfig m = desk_model(32, 2, 12);  // window 12 so SP in {1,2,3,4} divides
    GridSpec g = desk_grid(48, 96);         // 4x8 windows
    const auto data = make_data<double>(g, 4, 21);
    const auto w = LossWeights<double>::uniform(g, 3);
    DiffusionConfig dc;
    SeedProtocol seeds{23};
    auto params = init_parameters_random<double>(m, 11, 0.05);

    struct Case {
        int a, b, sp;
    };
    std::vector<Case> cases;
    for (int sp : {1, 2, 3, 4}) {
        cases.push_back({1, 1, sp});
        cases.push_back({2, 2, sp});
        cases.push_back({2, 4, sp});
        cases.push_back({4, 4, sp});
    }
    std::map<int, u64> a2a_by_wp, sr_by_wp, ar_by_wp;
    for (const Case c : cases) {
        if (m.n_heads % c.sp != 0 && c.sp != 1 && c.sp != 2 && c.sp != 4) continue;  // heads=4: sp=3 invalid
        if (m.n_heads % c.sp != 0) continue;
        const Topology t = build_topology(c.a, c.b, c.sp, 4, 1, 1, m, g);
        SwipeSimulator<double> sim(m, g, t, dc, w, seeds);
        const auto res = sim.train_step(params, data, 0);
        const CommCounts cc = comm_counts(m, g, t, sizeof(double));
        CHECK(res.ledger.total(Collective::AllToAll) == cc.alltoall_total * sizeof(double));
        CHECK(res.ledger.total(Collective::SendRecv) == cc.sendrecv_total * sizeof(double));
        CHECK(res.ledger.total(Collective::GradSum) == cc.gradsum_total * sizeof(double));
        CHECK(res.ledger.total(Collective::AllReduce) == cc.allreduce_total_bytes);
        // Per-rank alltoall payload equals M exactly per call (4 calls per block per mb).
        if (c.sp > 1) {
            const u64 m_bytes = cc.alltoall_per_rank_call * sizeof(double);
            const int rank0 = flat_rank(t, RankCoord{0, 0, 0, 1, 0});
            CHECK(res.ledger.rank_total(rank0, Collective::AllToAll) ==
                  4 * static_cast<u64>(t.gas) * m_bytes);
        }
        if (c.sp == 2) {
            a2a_by_wp[c.a * c.b] = res.ledger.total(Collective::AllToAll);
            sr_by_wp[c.a * c.b] = res.ledger.total(Collective::SendRecv);
            ar_by_wp[c.a * c.b] = res.ledger.total(Collective::AllReduce);
        }
    }
    // Per-rank load halves when WP doubles: global totals are WP-invariant
    // while rank counts scale, so compare per-rank numbers.
    const u64 ranks4 = 4 * 2 * 4;   // wp * sp * pp
    const u64 ranks8 = 8 * 2 * 4;
    const u64 ranks16 = 16 * 2 * 4;
    CHECK(a2a_by_wp[4] / ranks4 == 2 * (a2a_by_wp[8] / ranks8));
    CHECK(sr_by_wp[4] / ranks4 == 2 * (sr_by_wp[8] / ranks8));
    CHECK(a2a_by_wp[4] / ranks4 == 4 * (a2a_by_wp[16] / ranks16));
    CHECK(sr_by_wp[4] / ranks4 == 4 * (sr_by_wp[16] / ranks16));
    CHECK(ar_by_wp[4] == ar_by_wp[8]);  // allreduce unchanged by WP
    CHECK(ar_by_wp[4] == ar_by_wp[16]);
}

TEST_CASE("activation footprint scales as 1/WP") {
    ModelConfig m = desk_model(16, 2, 6);
    GridSpec g = desk_grid(24, 48);
    const auto data = make_data<double>(g, 4, 31);
    const auto w = LossWeights<double>::uniform(g, 3);
    DiffusionConfig dc;
    SeedProtocol seeds{37};
    auto params = init_parameters_random<double>(m, 12, 0.05);

    std::map<int, i64> peak_by_wp;
    for (int wpa : {1, 2, 4}) {
        const Topology t = build_topology(wpa, wpa == 4 ? 4 : wpa, 1, 4, 1, 2, m, g);
        SwipeSimulator<double> sim(m, g, t, dc, w, seeds);
        const auto res = sim.train_step(params, data, 0);
        i64 peak = 0;
        for (const auto& [rank, v] : res.peak_activation_elems) peak = std::max(peak, v);
        peak_by_wp[t.wp()] = peak;
    }
    // 1/WP within 10%.
    CHECK(std::abs(double(peak_by_wp[1]) / double(peak_by_wp[4]) - 4.0) < 0.4);
    CHECK(std::abs(double(peak_by_wp[1]) / double(peak_by_wp[16]) - 16.0) < 1.6);
}

TEST_CASE("broken z keying is detected as a sharded-vs-reference mismatch") {
    ModelConfig m = desk_model(16, 1, 6);
    GridSpec g = desk_grid(12, 12);
    const Topology t = build_topology(2, 2, 1, 3, 1, 1, m, g);
    const auto data = make_data<double>(g, 4, 41);
    const auto w = LossWeights<double>::uniform(g, 3);
    DiffusionConfig dc;
    SeedProtocol seeds{43};
    auto params = init_parameters_random<double>(m, 13, 0.1);
    SwipeSimulator<double> sim(m, g, t, dc, w, seeds);
    sim.broken_z_keying = true;
    const auto sharded = sim.train_step(params, data, 0);
    const auto ref = reference_train_step(params, data, 0, 1, 1, w, dc, seeds,
                                          sinusoidal_pos_encode<double>(g, m.in_channels), g);
    CHECK(std::abs(sharded.loss - ref.loss) / std::abs(ref.loss) > 1e-6);
}
