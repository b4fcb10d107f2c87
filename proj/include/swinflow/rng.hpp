// Copyright (c) 2026 swinflow contributors
// SPDX-License-Identifier: Apache-2.0
//
// Counter-based splittable random numbers. Every draw is a pure function of a
// 64-bit key and a 64-bit counter, so any rank can regenerate any value
// without shared state, and assembled fields are independent of which rank
// generated which piece.

#pragma once

#include "swinflow/common.hpp"

#include <cmath>

namespace swinflow {

inline u64 splitmix64(u64 x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Derive a child key from a parent key and a stream tag.
inline u64 key_derive(u64 key, u64 tag) { return splitmix64(key ^ splitmix64(tag)); }

inline u64 key_derive(u64 key, u64 a, u64 b) { return key_derive(key_derive(key, a), b); }
inline u64 key_derive(u64 key, u64 a, u64 b, u64 c) { return key_derive(key_derive(key, a, b), c); }

inline u64 random_bits(u64 key, u64 counter) { return splitmix64(key + 0x632be59bd9b4e019ULL * (counter + 1)); }

/// Uniform in [0, 1).
inline double uniform01(u64 key, u64 counter) {
    return static_cast<double>(random_bits(key, counter) >> 11) * 0x1.0p-53;
}

/// Standard normal via Box-Muller; one value per (key, counter).
inline double gaussian(u64 key, u64 counter) {
    const u64 b0 = random_bits(key, 2 * counter);
    const u64 b1 = random_bits(key, 2 * counter + 1);
    // (0,1] for the log argument.
    const double u1 = (static_cast<double>(b0 >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = static_cast<double>(b1 >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

/// Stateful convenience wrapper over the counter stream.
class CounterRng {
public:
    explicit CounterRng(u64 key) : key_(key) {}

    u64 bits() { return random_bits(key_, counter_++); }
    double uniform() { return uniform01(key_, counter_++); }
    double normal() { return gaussian(key_, counter_++); }
    i64 uniform_int(i64 lo, i64 hi) {  // inclusive bounds
        return lo + static_cast<i64>(bits() % static_cast<u64>(hi - lo + 1));
    }

    u64 key() const { return key_; }

private:
    u64 key_;
    u64 counter_ = 0;
};

// ---------------------------------------------------------------------------
// Seed-sharing protocol: the diffusion time t of a sample is drawn from a key
// shared by every model-parallel rank touching that sample, while the noise
// field z is keyed by (sample, window, token) so the assembled field does not
// depend on the topology that generated it.

struct SeedProtocol {
    u64 run_seed = 0;

    /// Shared across (wp, sp, pp) for a fixed sample; differs per sample.
    u64 t_key(u64 sample_id) const { return key_derive(run_seed, 0x74u, sample_id); }

    /// Base key for the noise field of one sample (rank independent).
    u64 z_field_key(u64 sample_id) const { return key_derive(run_seed, 0x7au, sample_id); }

    /// Rank-scoped noise key, unique per virtual rank (protocol surface only;
    /// field generation uses window keys below).
    u64 z_rank_key(u64 sample_id, u64 flat_rank) const {
        return key_derive(z_field_key(sample_id), 0x72u, flat_rank);
    }

    /// Key of one (window, token) cell of the sample's noise field.
    u64 z_cell_key(u64 sample_id, u64 window_id, u64 token_in_window) const {
        return key_derive(z_field_key(sample_id), window_id, token_in_window);
    }
};

}  // namespace swinflow
