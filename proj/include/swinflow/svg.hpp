// Copyright (c) 2026 swinflow contributors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal SVG line charts (log-log capable) for the perf-model reports.

#pragma once

#include "swinflow/common.hpp"

#include <string>
#include <vector>

namespace swinflow {

struct SvgSeries {
    std::string label;
    std::string color = "#1f77b4";
    std::vector<double> x;
    std::vector<double> y;
};

struct SvgChart {
    std::string title;
    std::string x_label;
    std::string y_label;
    bool log_x = false;
    bool log_y = false;
    int width = 720;
    int height = 480;
    std::vector<SvgSeries> series;

    std::string render() const;
    void write_file(const std::string& path) const;
};

}  // namespace swinflow
