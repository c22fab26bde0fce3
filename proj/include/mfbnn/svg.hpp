#pragma once

// Minimal static SVG line/band charts for the experiment outputs.

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace mfbnn::svg {

struct Series {
    std::string label;
    std::vector<double> x, y;
    std::string color = "#1f77b4";
    double width = 1.5;
    double opacity = 1.0;
    bool dashed = false;
    bool markers = false;
};

struct Band {
    std::string label;
    std::vector<double> x, lo, hi;
    std::string color = "#1f77b4";
    double opacity = 0.2;
};

struct Chart {
    std::string title, x_label, y_label;
    bool log_x = false;
    bool log_y = false;
    int width = 720, height = 440;
    std::vector<Band> bands;
    std::vector<Series> series;
};

inline const std::vector<std::string>& palette() {
    static const std::vector<std::string> p{"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                            "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};
    return p;
}

namespace detail {

inline std::string escape(const std::string& s) {
    std::string o;
    for (char c : s) {
        switch (c) {
            case '<': o += "&lt;"; break;
            case '>': o += "&gt;"; break;
            case '&': o += "&amp;"; break;
            default: o += c;
        }
    }
    return o;
}

inline std::string fmt(double v) {
    std::ostringstream ss;
    ss.precision(3);
    ss << v;
    return ss.str();
}

}  // namespace detail

inline void render(std::ostream& os, const Chart& c) {
    const double ml = 70, mr = 170, mt = 40, mb = 50;
    const double pw = c.width - ml - mr, ph = c.height - mt - mb;
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    auto tx = [&](double v) { return c.log_x ? std::log10(std::max(v, 1e-300)) : v; };
    auto ty = [&](double v) { return c.log_y ? std::log10(std::max(v, 1e-300)) : v; };
    auto grow = [&](const std::vector<double>& xs, const std::vector<double>& ys) {
        for (double v : xs) if (std::isfinite(tx(v))) { x0 = std::min(x0, tx(v)); x1 = std::max(x1, tx(v)); }
        for (double v : ys) if (std::isfinite(ty(v))) { y0 = std::min(y0, ty(v)); y1 = std::max(y1, ty(v)); }
    };
    for (const auto& b : c.bands) { grow(b.x, b.lo); grow(b.x, b.hi); }
    for (const auto& s : c.series) grow(s.x, s.y);
    if (!(x1 > x0)) { x0 -= 1; x1 += 1; }
    if (!(y1 > y0)) { y0 -= 1; y1 += 1; }
    const double pad = 0.05 * (y1 - y0);
    y0 -= pad;
    y1 += pad;
    auto px = [&](double v) { return ml + (tx(v) - x0) / (x1 - x0) * pw; };
    auto py = [&](double v) { return mt + (1.0 - (ty(v) - y0) / (y1 - y0)) * ph; };

    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << c.width << "\" height=\"" << c.height
       << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << ml + pw / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
       << detail::escape(c.title) << "</text>\n";
    os << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << pw << "\" height=\"" << ph
       << "\" fill=\"none\" stroke=\"#444\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double fx = x0 + (x1 - x0) * i / 4.0, fy = y0 + (y1 - y0) * i / 4.0;
        const double sx = ml + pw * i / 4.0, sy = mt + ph * (1.0 - i / 4.0);
        os << "<text x=\"" << sx << "\" y=\"" << mt + ph + 16 << "\" text-anchor=\"middle\">"
           << detail::fmt(c.log_x ? std::pow(10.0, fx) : fx) << "</text>\n";
        os << "<text x=\"" << ml - 6 << "\" y=\"" << sy + 4 << "\" text-anchor=\"end\">"
           << detail::fmt(c.log_y ? std::pow(10.0, fy) : fy) << "</text>\n";
        os << "<line x1=\"" << ml << "\" x2=\"" << ml + pw << "\" y1=\"" << sy << "\" y2=\"" << sy
           << "\" stroke=\"#eee\"/>\n";
    }
    os << "<text x=\"" << ml + pw / 2 << "\" y=\"" << c.height - 10 << "\" text-anchor=\"middle\">"
       << detail::escape(c.x_label) << "</text>\n";
    os << "<text transform=\"translate(16," << mt + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
       << detail::escape(c.y_label) << "</text>\n";

    for (const auto& b : c.bands) {
        os << "<polygon fill=\"" << b.color << "\" fill-opacity=\"" << b.opacity << "\" stroke=\"none\" points=\"";
        for (std::size_t i = 0; i < b.x.size(); ++i) os << px(b.x[i]) << ',' << py(b.hi[i]) << ' ';
        for (std::size_t i = b.x.size(); i-- > 0;) os << px(b.x[i]) << ',' << py(b.lo[i]) << ' ';
        os << "\"/>\n";
    }
    for (const auto& s : c.series) {
        os << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"" << s.width
           << "\" stroke-opacity=\"" << s.opacity << "\"" << (s.dashed ? " stroke-dasharray=\"6,4\"" : "")
           << " points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i)
            if (std::isfinite(ty(s.y[i]))) os << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
        os << "\"/>\n";
        if (s.markers)
            for (std::size_t i = 0; i < s.x.size(); ++i)
                if (std::isfinite(ty(s.y[i])))
                    os << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i]) << "\" r=\"3\" fill=\""
                       << s.color << "\"/>\n";
    }
    // legend, skipping unlabeled entries
    double ly = mt + 10;
    auto legend = [&](const std::string& label, const std::string& color, double op) {
        if (label.empty()) return;
        os << "<rect x=\"" << ml + pw + 12 << "\" y=\"" << ly - 9 << "\" width=\"14\" height=\"10\" fill=\"" << color
           << "\" fill-opacity=\"" << op << "\"/>\n";
        os << "<text x=\"" << ml + pw + 32 << "\" y=\"" << ly << "\">" << detail::escape(label) << "</text>\n";
        ly += 18;
    };
    for (const auto& b : c.bands) legend(b.label, b.color, std::max(b.opacity, 0.4));
    for (const auto& s : c.series) legend(s.label, s.color, 1.0);
    os << "</svg>\n";
}

}  // namespace mfbnn::svg
