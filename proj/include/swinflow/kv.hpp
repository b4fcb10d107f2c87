// Copyright (c) 2026 swinflow contributors
// SPDX-License-Identifier: Apache-2.0
//
// Plain-text key/value config files: one `key = value` per line, `#` starts a
// comment. Kept deliberately flat so run manifests diff cleanly.

#pragma once

#include "swinflow/common.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace swinflow {

class KvFile {
public:
    KvFile() = default;

    static KvFile parse_file(const std::string& path);
    static KvFile parse_text(const std::string& text, const std::string& origin = "<text>");

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    const std::string& get_string(const std::string& key) const;
    i64 get_int(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;

    std::string get_string_or(const std::string& key, const std::string& fallback) const;
    i64 get_int_or(const std::string& key, i64 fallback) const;
    double get_double_or(const std::string& key, double fallback) const;
    bool get_bool_or(const std::string& key, bool fallback) const;

    void set(const std::string& key, const std::string& value);
    void set_int(const std::string& key, i64 value);
    void set_double(const std::string& key, double value);

    /// Keys in insertion order (stable round trips).
    const std::vector<std::string>& keys() const { return order_; }

    std::string to_text() const;
    void write_file(const std::string& path) const;

private:
    std::map<std::string, std::string> values_;
    std::vector<std::string> order_;
    std::string origin_ = "<empty>";
};

}  // namespace swinflow
