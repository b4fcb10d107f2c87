// Copyright (c) 2026 swinflow contributors
// SPDX-License-Identifier: Apache-2.0

#include "swinflow/svg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace swinflow {

namespace {

double tx(double v, bool log_axis) { return log_axis ? std::log10(v) : v; }

std::string fmt(double v) {
    std::ostringstream ss;
    ss.precision(6);
    ss << v;
    return ss.str();
}

}  // namespace

std::string SvgChart::render() const {
    const int ml = 70, mr = 20, mt = 40, mb = 55;
    const double pw = width - ml - mr, ph = height - mt - mb;

    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
    double ymin = xmin, ymax = -xmin;
    for (const auto& s : series) {
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            const double x = tx(s.x[i], log_x), y = tx(s.y[i], log_y);
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    }
    if (!(xmin < xmax)) {
        xmin -= 0.5;
        xmax += 0.5;
    }
    if (!(ymin < ymax)) {
        ymin -= 0.5;
        ymax += 0.5;
    }
    const double xpad = 0.04 * (xmax - xmin), ypad = 0.06 * (ymax - ymin);
    xmin -= xpad;
    xmax += xpad;
    ymin -= ypad;
    ymax += ypad;

    auto px = [&](double x) { return ml + (tx(x, log_x) - xmin) / (xmax - xmin) * pw; };
    auto py = [&](double y) { return mt + ph - (tx(y, log_y) - ymin) / (ymax - ymin) * ph; };

    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\" "
        << "font-family=\"sans-serif\">" << title << "</text>\n";
    out << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << pw << "\" height=\"" << ph
        << "\" fill=\"none\" stroke=\"#444\"/>\n";

    // Axis ticks: 5 per axis at round positions in transformed space.
    for (int i = 0; i <= 4; ++i) {
        const double fx = xmin + (xmax - xmin) * i / 4.0;
        const double fy = ymin + (ymax - ymin) * i / 4.0;
        const double vx = log_x ? std::pow(10.0, fx) : fx;
        const double vy = log_y ? std::pow(10.0, fy) : fy;
        const double sx = ml + pw * i / 4.0;
        const double sy = mt + ph - ph * i / 4.0;
        out << "<line x1=\"" << sx << "\" y1=\"" << mt + ph << "\" x2=\"" << sx << "\" y2=\"" << mt + ph + 5
            << "\" stroke=\"#444\"/>\n";
        out << "<text x=\"" << sx << "\" y=\"" << mt + ph + 20 << "\" text-anchor=\"middle\" font-size=\"11\" "
            << "font-family=\"sans-serif\">" << fmt(vx) << "</text>\n";
        out << "<line x1=\"" << ml - 5 << "\" y1=\"" << sy << "\" x2=\"" << ml << "\" y2=\"" << sy
            << "\" stroke=\"#444\"/>\n";
        out << "<text x=\"" << ml - 8 << "\" y=\"" << sy + 4 << "\" text-anchor=\"end\" font-size=\"11\" "
            << "font-family=\"sans-serif\">" << fmt(vy) << "</text>\n";
    }
    out << "<text x=\"" << ml + pw / 2 << "\" y=\"" << height - 12
        << "\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\">" << x_label << "</text>\n";
    out << "<text x=\"16\" y=\"" << mt + ph / 2 << "\" text-anchor=\"middle\" font-size=\"12\" "
        << "font-family=\"sans-serif\" transform=\"rotate(-90 16 " << mt + ph / 2 << ")\">" << y_label
        << "</text>\n";

    int li = 0;
    for (const auto& s : series) {
        out << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i) out << px(s.x[i]) << "," << py(s.y[i]) << " ";
        out << "\"/>\n";
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            out << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i]) << "\" r=\"3\" fill=\"" << s.color
                << "\"/>\n";
        }
        out << "<text x=\"" << ml + 10 << "\" y=\"" << mt + 16 + 16 * li << "\" font-size=\"12\" fill=\""
            << s.color << "\" font-family=\"sans-serif\">" << s.label << "</text>\n";
        ++li;
    }
    out << "</svg>\n";
    return out.str();
}

void SvgChart::write_file(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write chart: " + path);
    out << render();
}

}  // namespace swinflow
