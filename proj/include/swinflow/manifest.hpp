// Copyright (c) 2026 swinflow contributors
// SPDX-License-Identifier: Apache-2.0
//
// Experiment manifests: a flat key/value snapshot of the configs, seeds and
// artifact checksums of one run directory. Re-running a manifest reproduces
// the artifacts bit for bit in 64-bit mode, which `verify` checks.

#pragma once

#include "swinflow/chunked_file.hpp"
#include "swinflow/kv.hpp"

#include <filesystem>

namespace swinflow {

class ExperimentManifest {
public:
    explicit ExperimentManifest(std::string run_dir) : dir_(std::move(run_dir)) {
        kv_.set("provenance", "swinflow-0.1");
    }

    KvFile& kv() { return kv_; }

    void set_command(const std::string& cmd) { kv_.set("command", cmd); }
    void set_seed(u64 seed) { kv_.set_int("seed", static_cast<i64>(seed)); }

    /// Snapshot a config under a prefix.
    void add_config(const std::string& prefix, const KvFile& cfg) {
        for (const auto& k : cfg.keys()) kv_.set(prefix + "." + k, cfg.get_string(k));
    }

    /// Record the checksum of an artifact file (path relative to the run dir).
    void add_artifact(const std::string& rel_path) {
        const std::string full = dir_ + "/" + rel_path;
        std::ifstream in(full, std::ios::binary);
        if (!in) throw IoError("manifest: missing artifact " + full);
        std::ostringstream ss;
        ss << in.rdbuf();
        const std::string bytes = ss.str();
        kv_.set("artifact." + rel_path, std::to_string(fnv1a64(bytes.data(), bytes.size())));
    }

    void write() const { kv_.write_file(dir_ + "/manifest.kv"); }

    /// Re-hash recorded artifacts; returns the relative paths that changed.
    static std::vector<std::string> verify(const std::string& run_dir) {
        const KvFile kv = KvFile::parse_file(run_dir + "/manifest.kv");
        std::vector<std::string> stale;
        for (const auto& key : kv.keys()) {
            if (key.rfind("artifact.", 0) != 0) continue;
            const std::string rel = key.substr(9);
            std::ifstream in(run_dir + "/" + rel, std::ios::binary);
            if (!in) {
                stale.push_back(rel);
                continue;
            }
            std::ostringstream ss;
            ss << in.rdbuf();
            const std::string bytes = ss.str();
            if (std::to_string(fnv1a64(bytes.data(), bytes.size())) != kv.get_string(key)) {
                stale.push_back(rel);
            }
        }
        return stale;
    }

private:
    std::string dir_;
    KvFile kv_;
};

/// Resolve an output directory against the run-root environment variable and
/// create it.
inline std::string resolve_run_dir(const std::string& out) {
    std::filesystem::path p(out);
    if (p.is_relative()) {
        if (const char* root = std::getenv("SWINFLOW_RUN_ROOT")) p = std::filesystem::path(root) / p;
    }
    std::filesystem::create_directories(p);
    return p.string();
}

}  // namespace swinflow
