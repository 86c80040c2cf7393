#include "polsim/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "polsim/artifacts.hpp"

namespace polsim {

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

// "nice" tick positions: step 1/2/5 * 10^n, covering [lo, hi] with ~target.
std::vector<double> ticks(double lo, double hi, int target = 6) {
    std::vector<double> out;
    if (!(hi > lo)) return {lo};
    double raw = (hi - lo) / target;
    double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double m : {1.0, 2.0, 5.0, 10.0}) {
        if (raw <= m * mag) {
            step = m * mag;
            break;
        }
    }
    double first = std::ceil(lo / step) * step;
    for (double v = first; v <= hi + 0.5 * step; v += step)
        out.push_back(std::abs(v) < 1e-12 * step ? 0.0 : v);
    return out;
}

struct Frame {
    double x0, y0, w, h;  // plot area in svg coordinates
    double xlo, xhi, ylo, yhi;
    double sx(double x) const { return x0 + (x - xlo) / (xhi - xlo) * w; }
    double sy(double y) const { return y0 + h - (y - ylo) / (yhi - ylo) * h; }
};

void open_svg(std::ostringstream& os, double w, double h) {
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(w)
       << "\" height=\"" << num(h) << "\" viewBox=\"0 0 " << num(w) << " " << num(h)
       << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

void draw_frame(std::ostringstream& os, const Frame& f, const std::string& title,
                const std::string& xlabel, const std::string& ylabel, bool logy) {
    os << "<rect x=\"" << num(f.x0) << "\" y=\"" << num(f.y0) << "\" width=\""
       << num(f.w) << "\" height=\"" << num(f.h)
       << "\" fill=\"none\" stroke=\"black\"/>\n";
    os << "<text x=\"" << num(f.x0 + f.w / 2) << "\" y=\"" << num(f.y0 - 10)
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">"
       << title << "</text>\n";
    os << "<text x=\"" << num(f.x0 + f.w / 2) << "\" y=\"" << num(f.y0 + f.h + 36)
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">"
       << xlabel << "</text>\n";
    os << "<text x=\"14\" y=\"" << num(f.y0 + f.h / 2)
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
          "transform=\"rotate(-90 14 "
       << num(f.y0 + f.h / 2) << ")\">" << ylabel << "</text>\n";
    for (double t : ticks(f.xlo, f.xhi)) {
        double X = f.sx(t);
        os << "<line x1=\"" << num(X) << "\" y1=\"" << num(f.y0 + f.h) << "\" x2=\""
           << num(X) << "\" y2=\"" << num(f.y0 + f.h + 5) << "\" stroke=\"black\"/>\n";
        os << "<text x=\"" << num(X) << "\" y=\"" << num(f.y0 + f.h + 18)
           << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">"
           << num(t) << "</text>\n";
    }
    for (double t : ticks(f.ylo, f.yhi)) {
        double Y = f.sy(t);
        os << "<line x1=\"" << num(f.x0 - 5) << "\" y1=\"" << num(Y) << "\" x2=\""
           << num(f.x0) << "\" y2=\"" << num(Y) << "\" stroke=\"black\"/>\n";
        os << "<text x=\"" << num(f.x0 - 8) << "\" y=\"" << num(Y + 3)
           << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">"
           << (logy ? "1e" + num(t) : num(t)) << "</text>\n";
    }
}

void draw_series(std::ostringstream& os, const Frame& f, const PlotSeries& s,
                 const std::string& color, bool logy) {
    auto yval = [&](double y) { return logy ? std::log10(std::max(y, 1e-300)) : y; };
    if (s.points) {
        for (size_t i = 0; i < s.x.size(); ++i) {
            double y = yval(s.y[i]);
            if (!std::isfinite(y) || !std::isfinite(s.x[i])) continue;
            if (s.x[i] < f.xlo || s.x[i] > f.xhi || y < f.ylo || y > f.yhi) continue;
            os << "<circle cx=\"" << num(f.sx(s.x[i])) << "\" cy=\"" << num(f.sy(y))
               << "\" r=\"2.4\" fill=\"" << color << "\"/>\n";
        }
        return;
    }
    os << "<path d=\"";
    bool pen_up = true;
    for (size_t i = 0; i < s.x.size(); ++i) {
        double y = yval(s.y[i]);
        if (!std::isfinite(y) || !std::isfinite(s.x[i])) {
            pen_up = true;
            continue;
        }
        double X = f.sx(std::clamp(s.x[i], f.xlo, f.xhi));
        double Y = f.sy(std::clamp(y, f.ylo, f.yhi));
        os << (pen_up ? "M" : "L") << num(X) << " " << num(Y) << " ";
        pen_up = false;
    }
    os << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\""
       << num(s.stroke) << "\"" << (s.dashed ? " stroke-dasharray=\"6 4\"" : "")
       << "/>\n";
}

// viridis, 9 anchor stops
void viridis(double t, int rgb[3]) {
    static const int stops[9][3] = {{68, 1, 84},    {72, 40, 120},  {62, 74, 137},
                                    {49, 104, 142}, {38, 130, 142}, {31, 158, 137},
                                    {53, 183, 121}, {109, 205, 89}, {253, 231, 37}};
    t = std::clamp(t, 0.0, 1.0) * 8.0;
    int i = std::min(static_cast<int>(t), 7);
    double f = t - i;
    for (int c = 0; c < 3; ++c)
        rgb[c] = static_cast<int>(std::lround(stops[i][c] +
                                              f * (stops[i + 1][c] - stops[i][c])));
}

}  // namespace

std::string render_line_plot(const LinePlot& spec) {
    Frame f;
    f.x0 = 62;
    f.y0 = 30;
    f.w = spec.width - 82;
    f.h = spec.height - 80;

    auto yv = [&](double y) { return spec.logy ? std::log10(std::max(y, 1e-300)) : y; };
    double xlo = std::numeric_limits<double>::infinity(), xhi = -xlo;
    double ylo = xlo, yhi = -xlo;
    for (const PlotSeries& s : spec.series)
        for (size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            if (spec.logy && s.y[i] <= 0) continue;
            xlo = std::min(xlo, s.x[i]);
            xhi = std::max(xhi, s.x[i]);
            ylo = std::min(ylo, yv(s.y[i]));
            yhi = std::max(yhi, yv(s.y[i]));
        }
    if (!std::isfinite(xlo)) {
        xlo = 0;
        xhi = 1;
        ylo = 0;
        yhi = 1;
    }
    if (spec.xlim) {
        xlo = spec.xlim->first;
        xhi = spec.xlim->second;
    }
    if (spec.ylim) {
        ylo = spec.ylim->first;
        yhi = spec.ylim->second;
        if (spec.logy) {
            ylo = std::log10(std::max(ylo, 1e-300));
            yhi = std::log10(std::max(yhi, 1e-300));
        }
    } else {
        double pad = 0.05 * (yhi - ylo + 1e-30);
        ylo -= pad;
        yhi += pad;
    }
    if (!(xhi > xlo)) xhi = xlo + 1;
    if (!(yhi > ylo)) yhi = ylo + 1;
    f.xlo = xlo;
    f.xhi = xhi;
    f.ylo = ylo;
    f.yhi = yhi;

    std::ostringstream os;
    open_svg(os, spec.width, spec.height);
    draw_frame(os, f, spec.title, spec.xlabel, spec.ylabel, spec.logy);
    for (const auto& [x, color] : spec.vlines) {
        if (x < f.xlo || x > f.xhi) continue;
        os << "<line x1=\"" << num(f.sx(x)) << "\" y1=\"" << num(f.y0) << "\" x2=\""
           << num(f.sx(x)) << "\" y2=\"" << num(f.y0 + f.h) << "\" stroke=\"" << color
           << "\" stroke-dasharray=\"4 3\"/>\n";
    }
    double ly = f.y0 + 12;
    for (size_t si = 0; si < spec.series.size(); ++si) {
        const PlotSeries& s = spec.series[si];
        std::string color = s.color.empty() ? kPalette[si % 8] : s.color;
        draw_series(os, f, s, color, spec.logy);
        if (!s.label.empty()) {
            os << "<line x1=\"" << num(f.x0 + f.w - 130) << "\" y1=\"" << num(ly - 4)
               << "\" x2=\"" << num(f.x0 + f.w - 110) << "\" y2=\"" << num(ly - 4)
               << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
            os << "<text x=\"" << num(f.x0 + f.w - 105) << "\" y=\"" << num(ly)
               << "\" font-family=\"sans-serif\" font-size=\"11\">" << s.label
               << "</text>\n";
            ly += 15;
        }
    }
    os << "</svg>\n";
    return os.str();
}

std::string render_heatmap(const Heatmap& spec) {
    Frame f;
    f.x0 = 62;
    f.y0 = 30;
    f.w = spec.width - 82;
    f.h = spec.height - 80;
    f.xlo = spec.xrange.first;
    f.xhi = spec.xrange.second;
    f.ylo = spec.yrange.first;
    f.yhi = spec.yrange.second;

    // max-pool to at most 220x220 cells so ridges survive the downsampling
    const Eigen::MatrixXd& V = spec.values;
    int rows = static_cast<int>(V.rows()), cols = static_cast<int>(V.cols());
    int br = (rows + 219) / 220, bc = (cols + 219) / 220;
    int nr = (rows + br - 1) / br, nc = (cols + bc - 1) / bc;
    Eigen::MatrixXd P(nr, nc);
    for (int i = 0; i < nr; ++i)
        for (int j = 0; j < nc; ++j) {
            double m = -std::numeric_limits<double>::infinity();
            for (int a = i * br; a < std::min((i + 1) * br, rows); ++a)
                for (int b = j * bc; b < std::min((j + 1) * bc, cols); ++b)
                    m = std::max(m, V(a, b));
            P(i, j) = m;
        }

    auto cv = [&](double v) { return spec.log_scale ? std::log10(std::max(v, 1e-300)) : v; };
    double vmin = spec.vmin, vmax = spec.vmax;
    if (std::isnan(vmax)) {
        vmax = -std::numeric_limits<double>::infinity();
        for (int i = 0; i < nr; ++i)
            for (int j = 0; j < nc; ++j) vmax = std::max(vmax, cv(P(i, j)));
    } else {
        vmax = cv(vmax);
    }
    if (std::isnan(vmin)) {
        vmin = spec.log_scale ? vmax - 6 : 0.0;
        if (!spec.log_scale) {
            vmin = std::numeric_limits<double>::infinity();
            for (int i = 0; i < nr; ++i)
                for (int j = 0; j < nc; ++j) vmin = std::min(vmin, P(i, j));
        }
    } else {
        vmin = cv(vmin);
    }
    if (!(vmax > vmin)) vmax = vmin + 1;

    std::ostringstream os;
    open_svg(os, spec.width, spec.height);
    double cw = f.w / nc, ch = f.h / nr;
    for (int i = 0; i < nr; ++i)
        for (int j = 0; j < nc; ++j) {
            int rgb[3];
            viridis((cv(P(i, j)) - vmin) / (vmax - vmin), rgb);
            // row i spans y in [ylo + i/nr*(yhi-ylo), ...): row 0 at the bottom
            double X = f.x0 + j * cw;
            double Y = f.y0 + f.h - (i + 1) * ch;
            char color[16];
            std::snprintf(color, sizeof color, "#%02x%02x%02x", rgb[0], rgb[1], rgb[2]);
            os << "<rect x=\"" << num(X) << "\" y=\"" << num(Y) << "\" width=\""
               << num(cw + 0.5) << "\" height=\"" << num(ch + 0.5) << "\" fill=\""
               << color << "\"/>\n";
        }
    for (size_t si = 0; si < spec.overlays.size(); ++si) {
        const PlotSeries& s = spec.overlays[si];
        std::string color = s.color.empty() ? "white" : s.color;
        draw_series(os, f, s, color, false);
    }
    draw_frame(os, f, spec.title, spec.xlabel, spec.ylabel, false);
    os << "</svg>\n";
    return os.str();
}

void write_svg(const std::string& path, const std::string& svg) {
    atomic_write(path, svg);
}

}  // namespace polsim
