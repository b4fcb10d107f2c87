// Copyright (c) 2026 swinflow contributors
// SPDX-License-Identifier: Apache-2.0

#include "swinflow/kv.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace swinflow {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

KvFile KvFile::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_text(ss.str(), path);
}

KvFile KvFile::parse_text(const std::string& text, const std::string& origin) {
    KvFile kv;
    kv.origin_ = origin;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected `key = value`, got `" + line + "`");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        }
        kv.set(key, value);
    }
    return kv;
}

const std::string& KvFile::get_string(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError(origin_ + ": missing required key `" + key + "`");
    return it->second;
}

i64 KvFile::get_int(const std::string& key) const {
    const std::string& v = get_string(key);
    i64 out = 0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
        throw ConfigError(origin_ + ": key `" + key + "` is not an integer: `" + v + "`");
    }
    return out;
}

double KvFile::get_double(const std::string& key) const {
    const std::string& v = get_string(key);
    try {
        std::size_t pos = 0;
        const double out = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError(origin_ + ": key `" + key + "` is not a number: `" + v + "`");
    }
}

bool KvFile::get_bool(const std::string& key) const {
    const std::string& v = get_string(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(origin_ + ": key `" + key + "` is not a bool: `" + v + "`");
}

std::string KvFile::get_string_or(const std::string& key, const std::string& fallback) const {
    return has(key) ? get_string(key) : fallback;
}
i64 KvFile::get_int_or(const std::string& key, i64 fallback) const { return has(key) ? get_int(key) : fallback; }
double KvFile::get_double_or(const std::string& key, double fallback) const {
    return has(key) ? get_double(key) : fallback;
}
bool KvFile::get_bool_or(const std::string& key, bool fallback) const { return has(key) ? get_bool(key) : fallback; }

void KvFile::set(const std::string& key, const std::string& value) {
    if (!values_.count(key)) order_.push_back(key);
    values_[key] = value;
}

void KvFile::set_int(const std::string& key, i64 value) { set(key, std::to_string(value)); }

void KvFile::set_double(const std::string& key, double value) {
    std::ostringstream ss;
    ss.precision(17);
    ss << value;
    set(key, ss.str());
}

std::string KvFile::to_text() const {
    std::ostringstream ss;
    for (const auto& k : order_) ss << k << " = " << values_.at(k) << "\n";
    return ss.str();
}

void KvFile::write_file(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write config file: " + path);
    out << to_text();
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace swinflow
