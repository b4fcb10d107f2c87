// Copyright (c) 2026 swinflow contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace swinflow {

template <class T>
using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <class T>
using VecX = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <class T>
using ArrX = Eigen::Array<T, Eigen::Dynamic, 1>;

using MatXd = MatX<double>;
using VecXd = VecX<double>;

using u64 = std::uint64_t;
using i64 = std::int64_t;

/// Bad or inconsistent configuration. CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Filesystem / serialization failure. CLI maps this to exit code 3.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Stored checksum does not match payload.
struct IntegrityError : IoError {
    explicit IntegrityError(const std::string& msg) : IoError(msg) {}
};

/// A numeric tolerance or audit gate was breached. CLI maps this to exit code 1.
struct ToleranceError : std::runtime_error {
    explicit ToleranceError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Non-finite values where finite ones are required (forward inputs, solver
/// intermediate states).
struct NumericsError : std::runtime_error {
    explicit NumericsError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ConfigError(msg);
}

}  // namespace swinflow
