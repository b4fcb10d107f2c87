// Copyright (c) 2026 swinflow contributors
// SPDX-License-Identifier: Apache-2.0
//
// Parameter checkpoints: a flat binary of named arrays plus a text manifest
// line per array (name, shape, offset, checksum). Loads are strict: names,
// shapes, dtype and checksums must all match.

#pragma once

#include "swinflow/chunked_file.hpp"
#include "swinflow/kv.hpp"
#include "swinflow/model.hpp"

#include <fstream>

namespace swinflow {

template <class T>
const char* dtype_name();
template <>
inline const char* dtype_name<float>() {
    return "f32";
}
template <>
inline const char* dtype_name<double>() {
    return "f64";
}

template <class T>
void save_named_arrays(const std::string& base, const std::vector<ArrayRef>& arrays) {
    std::ofstream bin(base + ".bin", std::ios::binary);
    if (!bin) throw IoError("cannot create checkpoint: " + base + ".bin");
    std::ofstream man(base + ".manifest");
    if (!man) throw IoError("cannot create manifest: " + base + ".manifest");
    man << "dtype " << dtype_name<T>() << "\n";
    u64 offset = 0;
    for (const auto& a : arrays) {
        const u64 bytes = static_cast<u64>(a.size) * sizeof(T);
        const u64 sum = fnv1a64(a.data, bytes);
        man << a.name << " " << a.rows << "x" << a.cols << " " << offset << " " << sum << "\n";
        bin.write(static_cast<const char*>(a.data), static_cast<std::streamsize>(bytes));
        offset += bytes;
    }
    if (!bin || !man) throw IoError("checkpoint write failed: " + base);
}

template <class T>
void load_named_arrays(const std::string& base, const std::vector<ArrayRef>& arrays) {
    std::ifstream man(base + ".manifest");
    if (!man) throw IoError("cannot open manifest: " + base + ".manifest");
    std::ifstream bin(base + ".bin", std::ios::binary);
    if (!bin) throw IoError("cannot open checkpoint: " + base + ".bin");
    std::string tag, dtype;
    man >> tag >> dtype;
    if (tag != "dtype" || dtype != dtype_name<T>()) {
        throw IoError("checkpoint dtype mismatch in " + base + " (found `" + dtype + "`, need `" +
                      dtype_name<T>() + "`)");
    }
    for (const auto& a : arrays) {
        std::string name, shape;
        u64 offset = 0, sum = 0;
        if (!(man >> name >> shape >> offset >> sum)) {
            throw IoError("manifest truncated at array `" + a.name + "` in " + base);
        }
        const auto xpos = shape.find('x');
        const i64 rows = std::stoll(shape.substr(0, xpos));
        const i64 cols = std::stoll(shape.substr(xpos + 1));
        if (name != a.name || rows * cols != a.size) {
            throw IoError("checkpoint layout mismatch: expected `" + a.name + "` (" +
                          std::to_string(a.size) + " elements), manifest has `" + name + "` " + shape);
        }
        bin.seekg(static_cast<std::streamoff>(offset));
        bin.read(static_cast<char*>(a.data), static_cast<std::streamsize>(a.size * sizeof(T)));
        if (!bin) throw IoError("checkpoint truncated at `" + a.name + "` in " + base);
        if (fnv1a64(a.data, static_cast<std::size_t>(a.size) * sizeof(T)) != sum) {
            throw IntegrityError("checksum mismatch for `" + a.name + "` in " + base);
        }
    }
}

template <class T>
void save_params(const std::string& base, Parameters<T>& p) {
    save_named_arrays<T>(base, parameter_arrays(p));
}

template <class T>
void load_params(const std::string& base, Parameters<T>& p) {
    load_named_arrays<T>(base, parameter_arrays(p));
}

// ---------------------------------------------------------------------------
// Standardizer statistics as key/value text (comma-joined per-channel lists).

template <class T>
void stats_to_kv(KvFile& kv, const std::string& prefix, const Standardizer<T>& s) {
    auto join = [](const VecX<T>& v) {
        std::string out;
        for (i64 i = 0; i < v.size(); ++i) {
            if (i) out += ",";
            std::ostringstream ss;
            ss.precision(17);
            ss << double(v[i]);
            out += ss.str();
        }
        return out;
    };
    kv.set(prefix + ".mean", join(s.mean));
    kv.set(prefix + ".std", join(s.std));
}

template <class T>
Standardizer<T> stats_from_kv(const KvFile& kv, const std::string& prefix) {
    auto split = [&](const std::string& key) {
        const std::string& text = kv.get_string(key);
        std::vector<T> vals;
        std::size_t pos = 0;
        while (pos <= text.size()) {
            const auto comma = text.find(',', pos);
            const std::string tok = text.substr(pos, comma == std::string::npos ? comma : comma - pos);
            if (!tok.empty()) vals.push_back(static_cast<T>(std::stod(tok)));
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        VecX<T> v(vals.size());
        for (std::size_t i = 0; i < vals.size(); ++i) v[i] = vals[i];
        return v;
    };
    Standardizer<T> s;
    s.mean = split(prefix + ".mean");
    s.std = split(prefix + ".std");
    require(s.mean.size() == s.std.size(), "stats: mean/std length mismatch for " + prefix);
    return s;
}

}  // namespace swinflow
