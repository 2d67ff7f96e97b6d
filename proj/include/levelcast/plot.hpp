#pragma once

// Minimal SVG renderers for the two report figures: prediction-vs-truth
// overlay and the error histogram with the +/-2 sigma band marked. No
// dependencies, deterministic output.

#include <algorithm>
#include <cstdio>
#include <string>
#include <vector>

#include "levelcast/common.hpp"
#include "levelcast/eval.hpp"

namespace levelcast::plot {

namespace detail {

inline std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

struct Mapper {
    double x0, x1, y0, y1;  // data range
    double px0, px1, py0, py1;  // pixel range (y inverted)
    double x(double v) const { return px0 + (v - x0) / (x1 - x0) * (px1 - px0); }
    double y(double v) const { return py0 - (v - y0) / (y1 - y0) * (py0 - py1); }
};

}  // namespace detail

struct NamedSeries {
    std::string name;
    std::string color;
    const std::vector<double>* values = nullptr;
};

/// Overlay line chart; x axis is the sample index.
inline std::string line_chart_svg(const std::vector<NamedSeries>& series, const std::string& title,
                                  const std::string& y_label) {
    require(!series.empty() && series[0].values && !series[0].values->empty(),
            ErrorCode::EmptyInput, "nothing to plot");
    const int width = 960, height = 420;
    double lo = (*series[0].values)[0], hi = lo;
    std::size_t n = 0;
    for (const auto& s : series) {
        n = std::max(n, s.values->size());
        for (double v : *s.values) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    if (hi <= lo) hi = lo + 1.0;
    const double pad = 0.05 * (hi - lo);
    detail::Mapper map{0.0, static_cast<double>(n - 1), lo - pad, hi + pad,
                       60.0, width - 20.0, height - 40.0, 20.0};

    std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
                      "\" height=\"" + std::to_string(height) + "\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg += "<text x=\"60\" y=\"16\" font-family=\"sans-serif\" font-size=\"14\">" + title +
           "</text>\n";
    // axes
    svg += "<line x1=\"60\" y1=\"20\" x2=\"60\" y2=\"" + detail::num(height - 40) +
           "\" stroke=\"black\"/>\n";
    svg += "<line x1=\"60\" y1=\"" + detail::num(height - 40) + "\" x2=\"" +
           detail::num(width - 20) + "\" y2=\"" + detail::num(height - 40) +
           "\" stroke=\"black\"/>\n";
    svg += "<text x=\"4\" y=\"" + detail::num(height / 2) +
           "\" font-family=\"sans-serif\" font-size=\"11\" transform=\"rotate(-90 12 " +
           detail::num(height / 2) + ")\">" + y_label + "</text>\n";
    for (int tick = 0; tick <= 4; ++tick) {
        const double v = (lo - pad) + (hi - lo + 2 * pad) * tick / 4.0;
        svg += "<text x=\"6\" y=\"" + detail::num(map.y(v) + 4) +
               "\" font-family=\"sans-serif\" font-size=\"10\">" + detail::num(v) + "</text>\n";
    }

    int legend_y = 34;
    for (const auto& s : series) {
        std::string points;
        // subsample long series so the file stays small
        const std::size_t step = std::max<std::size_t>(1, s.values->size() / 2000);
        for (std::size_t i = 0; i < s.values->size(); i += step) {
            points += detail::num(map.x(static_cast<double>(i))) + "," +
                      detail::num(map.y((*s.values)[i])) + " ";
        }
        svg += "<polyline fill=\"none\" stroke=\"" + s.color + "\" stroke-width=\"1\" points=\"" +
               points + "\"/>\n";
        svg += "<rect x=\"" + detail::num(width - 190) + "\" y=\"" + detail::num(legend_y - 9) +
               "\" width=\"12\" height=\"3\" fill=\"" + s.color + "\"/>\n";
        svg += "<text x=\"" + detail::num(width - 172) + "\" y=\"" + detail::num(legend_y - 3) +
               "\" font-family=\"sans-serif\" font-size=\"11\">" + s.name + "</text>\n";
        legend_y += 16;
    }
    svg += "</svg>\n";
    return svg;
}

/// Error histogram with the mean and the +/-2 sigma band marked.
inline std::string histogram_svg(const eval::ErrorDistribution& dist, const std::string& title) {
    const int width = 640, height = 400;
    std::size_t max_count = 1;
    for (const auto& b : dist.histogram) max_count = std::max(max_count, b.count);
    const double lo = dist.histogram.front().left;
    const double hi = dist.histogram.back().right;
    detail::Mapper map{lo, hi, 0.0, static_cast<double>(max_count),
                       50.0, width - 20.0, height - 40.0, 20.0};

    std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
                      "\" height=\"" + std::to_string(height) + "\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg += "<text x=\"50\" y=\"16\" font-family=\"sans-serif\" font-size=\"14\">" + title +
           "</text>\n";
    for (const auto& b : dist.histogram) {
        if (b.count == 0) continue;
        const double x = map.x(b.left);
        const double w = map.x(b.right) - x;
        const double y = map.y(static_cast<double>(b.count));
        svg += "<rect x=\"" + detail::num(x) + "\" y=\"" + detail::num(y) + "\" width=\"" +
               detail::num(w) + "\" height=\"" + detail::num(map.y(0) - y) +
               "\" fill=\"steelblue\"/>\n";
    }
    auto vline = [&](double v, const std::string& color, const std::string& label) {
        if (v < lo || v > hi) return std::string();
        const double x = map.x(v);
        std::string s = "<line x1=\"" + detail::num(x) + "\" y1=\"20\" x2=\"" + detail::num(x) +
                        "\" y2=\"" + detail::num(height - 40) + "\" stroke=\"" + color +
                        "\" stroke-dasharray=\"4 3\"/>\n";
        s += "<text x=\"" + detail::num(x + 3) + "\" y=\"32\" font-family=\"sans-serif\" "
             "font-size=\"10\" fill=\"" + color + "\">" + label + "</text>\n";
        return s;
    };
    svg += vline(dist.mean, "black", "mean");
    svg += vline(dist.band_low, "crimson", "-2s");
    svg += vline(dist.band_high, "crimson", "+2s");
    svg += "<line x1=\"50\" y1=\"" + detail::num(height - 40) + "\" x2=\"" +
           detail::num(width - 20) + "\" y2=\"" + detail::num(height - 40) +
           "\" stroke=\"black\"/>\n";
    for (int tick = 0; tick <= 4; ++tick) {
        const double v = lo + (hi - lo) * tick / 4.0;
        svg += "<text x=\"" + detail::num(map.x(v) - 10) + "\" y=\"" + detail::num(height - 24) +
               "\" font-family=\"sans-serif\" font-size=\"10\">" + detail::num(v) + "</text>\n";
    }
    svg += "</svg>\n";
    return svg;
}

}  // namespace levelcast::plot
