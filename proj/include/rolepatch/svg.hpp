#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>

#include "rolepatch/patching.hpp"

namespace rolepatch {

namespace detail {

inline std::string rgb(int r, int g, int b) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", r, g, b);
    return buf;
}

// Symmetric diverging scale centered at 0: red for negative, white at zero,
// blue for positive (the paper's grids use darker blue for stronger gains).
inline std::string diverging_color(double v, double range) {
    if (std::isnan(v)) return "#bbbbbb";
    double t = std::clamp(v / range, -1.0, 1.0);
    auto mix = [](int from, int to, double a) {
        return static_cast<int>(std::lround(from + (to - from) * a));
    };
    if (t >= 0.0)
        return rgb(mix(255, 33, t), mix(255, 102, t), mix(255, 172, t));
    return rgb(mix(255, 178, -t), mix(255, 24, -t), mix(255, 43, -t));
}

inline std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            default: out += c;
        }
    }
    return out;
}

} // namespace detail

// Renders a ScoreGrid as an SVG heatmap. `range` sets the symmetric color
// scale [-range, range]; 0 picks the smallest symmetric range covering the
// data. Output is fully deterministic.
inline std::string render_heatmap_svg(const ScoreGrid& grid,
                                      double range = 0.0,
                                      const std::string& title = "") {
    const int cell = 28;
    const int left = 64;
    const int top = title.empty() ? 40 : 60;
    const int rows = static_cast<int>(grid.rows());
    const int cols = static_cast<int>(grid.cols());
    const int legend_h = 44;
    const int width = left + cols * cell + 20;
    const int height = top + rows * cell + legend_h + 20;

    if (range <= 0.0) {
        range = std::max(std::abs(grid.min_value), std::abs(grid.max_value));
        if (range <= 0.0) range = 1.0;
    }

    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
           std::to_string(width) + "\" height=\"" + std::to_string(height) +
           "\" font-family=\"monospace\" font-size=\"11\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    if (!title.empty())
        svg += "<text x=\"" + std::to_string(left) +
               "\" y=\"20\" font-size=\"13\">" + detail::xml_escape(title) +
               "</text>\n";

    // Column labels, rotated when long.
    for (int c = 0; c < cols; ++c) {
        const int x = left + c * cell + cell / 2;
        svg += "<text x=\"" + std::to_string(x) + "\" y=\"" +
               std::to_string(top - 6) +
               "\" text-anchor=\"middle\">" +
               detail::xml_escape(grid.col_labels[static_cast<std::size_t>(c)]) +
               "</text>\n";
    }
    for (int r = 0; r < rows; ++r) {
        const int y = top + r * cell + cell / 2 + 4;
        svg += "<text x=\"" + std::to_string(left - 8) + "\" y=\"" +
               std::to_string(y) + "\" text-anchor=\"end\">" +
               detail::xml_escape(grid.row_labels[static_cast<std::size_t>(r)]) +
               "</text>\n";
    }

    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            const double v =
                grid.values[static_cast<std::size_t>(r)]
                           [static_cast<std::size_t>(c)];
            svg += "<rect x=\"" + std::to_string(left + c * cell) + "\" y=\"" +
                   std::to_string(top + r * cell) + "\" width=\"" +
                   std::to_string(cell) + "\" height=\"" +
                   std::to_string(cell) + "\" fill=\"" +
                   detail::diverging_color(v, range) +
                   "\" stroke=\"#dddddd\"><title>" +
                   detail::xml_escape(
                       grid.row_axis + "=" +
                       grid.row_labels[static_cast<std::size_t>(r)] + " " +
                       grid.col_axis + "=" +
                       grid.col_labels[static_cast<std::size_t>(c)] + " " +
                       ScoreGrid::format_value(v)) +
                   "</title></rect>\n";
        }

    // Legend: min / 0 / max swatches under the grid.
    const int ly = top + rows * cell + 16;
    struct Stop {
        double v;
        const char* label;
    };
    const Stop stops[] = {{-range, "-"}, {0.0, "0"}, {range, "+"}};
    int lx = left;
    for (const auto& s : stops) {
        svg += "<rect x=\"" + std::to_string(lx) + "\" y=\"" +
               std::to_string(ly) +
               "\" width=\"18\" height=\"12\" fill=\"" +
               detail::diverging_color(s.v, range) +
               "\" stroke=\"#888888\"/>\n";
        svg += "<text x=\"" + std::to_string(lx + 24) + "\" y=\"" +
               std::to_string(ly + 10) + "\">" +
               (s.label[0] == '0' ? std::string("0")
                                  : std::string(s.label) +
                                        ScoreGrid::format_value(range)) +
               "</text>\n";
        lx += 110;
    }
    svg += "</svg>\n";
    return svg;
}

} // namespace rolepatch
