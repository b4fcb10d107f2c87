// Copyright (c) 2026 swinflow contributors
// SPDX-License-Identifier: Apache-2.0
//
// Training orchestration shared by the CLI and the acceptance suite: dataset
// standardization, the optimizer loop (reference or sharded), EMA, loss
// logging and resumable checkpoints.

#pragma once

#include "swinflow/checkpoint.hpp"
#include "swinflow/optim.hpp"
#include "swinflow/simulator.hpp"
#include "swinflow/toy_dataset.hpp"

#include <atomic>
#include <functional>
#include <optional>
#include <thread>

namespace swinflow {

/// Standardized dataset plus the statistics needed to leave and re-enter
/// physical units.
template <class T>
struct PreparedData {
    DataSet<T> set;
    Standardizer<T> state_std;
    Standardizer<T> resid_std;
    Standardizer<T> forcing_std;
    GridSpec spec;
};

template <class T>
PreparedData<T> prepare_dataset(const ToyDataset<T>& toy) {
    PreparedData<T> out;
    out.spec = toy.spec;
    out.state_std = Standardizer<T>::from_fields(toy.states);
    out.forcing_std = Standardizer<T>::from_fields(toy.forcings);
    std::vector<FieldTensor<T>> resid;
    for (std::size_t i = 0; i + 1 < toy.states.size(); ++i) {
        FieldTensor<T> r = toy.states[i + 1];
        r.values -= toy.states[i].values;
        resid.push_back(std::move(r));
    }
    out.resid_std = Standardizer<T>::from_fields(resid);
    for (std::size_t i = 0; i + 1 < toy.states.size(); ++i) {
        out.set.states.push_back(out.state_std.apply_mat(toy.states[i].values));
        out.set.forcings.push_back(out.forcing_std.apply_mat(toy.forcings[i].values));
        out.set.residuals.push_back(out.resid_std.apply_mat(resid[i].values));
    }
    return out;
}

/// Microbatch-parallel reference step: per-microbatch gradients computed on a
/// small thread pool, then folded in a fixed order so results do not depend
/// on thread count.
template <class T>
TrainStepResult<T> reference_train_step_mt(const Parameters<T>& params, const DataSet<T>& data,
                                           i64 first_sample, int n_mb, const LossWeights<T>& w,
                                           const DiffusionConfig& dcfg, const SeedProtocol& seeds,
                                           const MatX<T>& pos_enc, const GridSpec& grid, int n_threads) {
    std::vector<T> losses(n_mb);
    std::vector<Parameters<T>> grads(n_mb);
    const WindowLayout zlay{grid.height, grid.width, params.cfg.window_px, 0};
    std::atomic<int> next{0};
    auto worker = [&]() {
        for (;;) {
            const int m = next.fetch_add(1);
            if (m >= n_mb) return;
            const i64 sample_id = first_sample + m;
            const int idx = data.pair_of_sample(sample_id);
            SampleBatch<T> sb;
            sb.x_prev = data.states[idx];
            sb.x0 = data.residuals[idx];
            sb.forcings = data.forcings[idx];
            const MatX<T> z = noise_field<T>(seeds, static_cast<u64>(sample_id), params.cfg.out_channels,
                                             zlay, dcfg.sigma_d);
            auto one = diffusion_loss_sample(params, sb, w, dcfg, seeds.t_key(static_cast<u64>(sample_id)),
                                             z, pos_enc, grid.height, grid.width);
            losses[m] = one.loss;
            grads[m] = std::move(one.grads);
        }
    };
    std::vector<std::thread> pool;
    const int workers = std::max(1, std::min(n_threads, n_mb));
    for (int i = 0; i < workers - 1; ++i) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();

    TrainStepResult<T> res;
    res.grads = std::move(grads[0]);
    auto acc = parameter_arrays(res.grads);
    for (int m = 1; m < n_mb; ++m) {
        auto ga = parameter_arrays(grads[m]);
        for (std::size_t i = 0; i < acc.size(); ++i) {
            T* dst = param_data<T>(acc[i]);
            const T* src = param_data<T>(ga[i]);
            for (i64 j = 0; j < acc[i].size; ++j) dst[j] += src[j];
        }
    }
    const T scale = T(1) / static_cast<T>(n_mb);
    for (auto& a : acc) {
        T* p = param_data<T>(a);
        for (i64 j = 0; j < a.size; ++j) p[j] *= scale;
    }
    for (int m = 0; m < n_mb; ++m) {
        res.mb_losses.push_back(losses[m]);
        res.loss += losses[m];
    }
    res.loss *= scale;
    return res;
}

struct LossPoint {
    i64 step = 0;
    i64 images = 0;
    double loss = 0;
    double lr = 0;
};

inline std::string loss_csv(const std::vector<LossPoint>& points) {
    std::string out = "step,images,loss,lr\n";
    for (const auto& p : points) {
        out += std::to_string(p.step) + "," + std::to_string(p.images) + "," + std::to_string(p.loss) +
               "," + std::to_string(p.lr) + "\n";
    }
    return out;
}

/// The optimizer loop. Runs reference (multithreaded) or sharded (virtual
/// ranks) steps; both consume the same sample stream and seeds.
template <class T>
class Trainer {
public:
    Trainer(const ModelConfig& model, const GridSpec& grid, const DiffusionConfig& dcfg,
            const TrainConfig& tcfg, const LossWeights<T>& weights, SeedProtocol seeds, int dp, int gas)
        : model_(model),
          grid_(grid),
          dcfg_(dcfg),
          tcfg_(tcfg),
          weights_(weights),
          seeds_(seeds),
          dp_(dp),
          gas_(gas),
          opt_(model, tcfg),
          params_(init_parameters<T>(model, seeds.run_seed)),
          ema_(params_) {
        pos_enc_ = sinusoidal_pos_encode<T>(grid, model.in_channels);
    }

    /// Attach a topology to run sharded steps through the simulator.
    void set_topology(const Topology& topo) {
        sim_.emplace(model_, grid_, topo, dcfg_, weights_, seeds_);
    }

    int global_batch() const { return dp_ * gas_; }
    i64 images_seen() const { return images_seen_; }
    i64 step() const { return step_count_; }
    Parameters<T>& params() { return params_; }
    Parameters<T>& ema() { return ema_; }
    const std::vector<LossPoint>& loss_curve() const { return curve_; }
    CommLedger& ledger() { return ledger_; }

    /// Run n optimizer steps (or until total_images).
    void run_steps(i64 n, const DataSet<T>& data, int n_threads = 1) {
        for (i64 i = 0; i < n && images_seen_ < tcfg_.total_images; ++i) {
            const i64 first_sample = step_count_ * global_batch();
            TrainStepResult<T> res;
            if (sim_) {
                auto s = sim_->train_step(params_, data, first_sample, true,
                                          static_cast<int>(step_count_));
                res.loss = s.loss;
                res.grads = std::move(s.grads);
                // fold this step's ledger rows into the run ledger
                ledger_ = std::move(s.ledger);
            } else {
                res = reference_train_step_mt(params_, data, first_sample, global_batch(), weights_,
                                              dcfg_, seeds_, pos_enc_, grid_, n_threads);
            }
            const double lr = lr_at(tcfg_, images_seen_);
            opt_.step(params_, res.grads, lr);
            images_seen_ += global_batch();
            ema_update(ema_, params_, double(global_batch()), tcfg_.ema_halflife_images);
            ++step_count_;
            curve_.push_back({step_count_, images_seen_, double(res.loss), lr});
        }
    }

    /// Checkpoint everything needed for an identical continuation.
    void save(const std::string& base) {
        save_params(base + "/checkpoint", params_);
        save_params(base + "/checkpoint_ema", ema_);
        save_params(base + "/adamw_m", opt_.moments_m());
        save_params(base + "/adamw_v", opt_.moments_v());
        KvFile st;
        st.set_int("images_seen", images_seen_);
        st.set_int("step", step_count_);
        st.set_int("adamw_steps", opt_.step_count());
        st.write_file(base + "/train_state.kv");
    }

    void resume(const std::string& base) {
        load_params(base + "/checkpoint", params_);
        load_params(base + "/checkpoint_ema", ema_);
        load_params(base + "/adamw_m", opt_.moments_m());
        load_params(base + "/adamw_v", opt_.moments_v());
        const KvFile st = KvFile::parse_file(base + "/train_state.kv");
        images_seen_ = st.get_int("images_seen");
        step_count_ = st.get_int("step");
        opt_.set_step_count(st.get_int("adamw_steps"));
    }

    ForecastModel<T> forecast_model(const PreparedData<T>& pd, bool use_ema = true) const {
        ForecastModel<T> fm;
        fm.params = use_ema ? ema_ : params_;
        fm.state_std = pd.state_std;
        fm.resid_std = pd.resid_std;
        fm.forcing_std = pd.forcing_std;
        fm.pos_enc = pos_enc_;
        fm.dcfg = dcfg_;
        fm.spec = grid_;
        return fm;
    }

private:
    ModelConfig model_;
    GridSpec grid_;
    DiffusionConfig dcfg_;
    TrainConfig tcfg_;
    LossWeights<T> weights_;
    SeedProtocol seeds_;
    int dp_, gas_;
    AdamW<T> opt_;
    Parameters<T> params_;
    Parameters<T> ema_;
    MatX<T> pos_enc_;
    std::optional<SwipeSimulator<T>> sim_;
    CommLedger ledger_;
    i64 images_seen_ = 0;
    i64 step_count_ = 0;
    std::vector<LossPoint> curve_;
};

}  // namespace swinflow
