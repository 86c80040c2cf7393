// Minimal deterministic SVG plotting: line plots and heatmaps with axes,
// ticks, legends, and overlay curves. No raster dependencies; output is
// plain text suitable for diffing.
#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace polsim {

struct PlotSeries {
    std::string label;
    std::vector<double> x, y;
    std::string color;      // "" = palette by index
    double stroke = 1.5;
    bool points = false;    // draw markers instead of a connected line
    bool dashed = false;
};

struct LinePlot {
    std::string title, xlabel, ylabel;
    std::vector<PlotSeries> series;
    double width = 640, height = 420;
    bool logy = false;  // plot log10 of positive y values, decade ticks
    std::optional<std::pair<double, double>> xlim, ylim;
    // vertical reference lines (x position, css color)
    std::vector<std::pair<double, std::string>> vlines;
};

std::string render_line_plot(const LinePlot& spec);

struct Heatmap {
    std::string title, xlabel, ylabel;
    Eigen::MatrixXd values;  // row i -> y axis (row 0 at yrange.first)
    std::pair<double, double> xrange{0, 1}, yrange{0, 1};
    std::vector<PlotSeries> overlays;  // curves in data coordinates
    double width = 640, height = 420;
    bool log_scale = false;  // color by log10(value) over the top 6 decades
    // color limits; NaN = from data
    double vmin = std::numeric_limits<double>::quiet_NaN();
    double vmax = std::numeric_limits<double>::quiet_NaN();
};

std::string render_heatmap(const Heatmap& spec);

// atomic_write wrapper for rendered documents.
void write_svg(const std::string& path, const std::string& svg);

}  // namespace polsim
