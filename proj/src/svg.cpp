#include "normdae/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "normdae/errors.hpp"

namespace normdae::svg {

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                    "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
constexpr int kPaletteSize = 8;

constexpr int kMarginLeft = 64;
constexpr int kMarginRight = 16;
constexpr int kMarginTop = 36;
constexpr int kMarginBottom = 52;

std::string fmt2(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

// Trim a tick label like printf %g but with stable formatting.
std::string fmt_tick(double v) {
    if (v == 0.0) return "0";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '&') out += "&amp;";
        else if (c == '<') out += "&lt;";
        else if (c == '>') out += "&gt;";
        else out.push_back(c);
    }
    return out;
}

struct Range {
    double lo = 0.0, hi = 1.0;
};

Range pad_range(double lo, double hi) {
    if (!(lo < hi)) {
        const double mid = lo;
        lo = mid - 0.5;
        hi = mid + 0.5;
    }
    const double pad = 0.04 * (hi - lo);
    return {lo - pad, hi + pad};
}

// Tick step from the 1-2-5 ladder giving roughly `target` ticks.
double nice_step(double span, int target) {
    const double raw = span / target;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    for (double m : {1.0, 2.0, 5.0, 10.0}) {
        if (mag * m >= raw) return mag * m;
    }
    return mag * 10.0;
}

std::vector<double> ticks(const Range& r, int target = 6) {
    const double step = nice_step(r.hi - r.lo, target);
    std::vector<double> out;
    double t = std::ceil(r.lo / step) * step;
    for (; t <= r.hi + 1e-12 * step; t += step) {
        out.push_back(std::abs(t) < 1e-12 * step ? 0.0 : t);
    }
    return out;
}

class Canvas {
public:
    Canvas(const PlotSpec& spec, Range xr, Range yr) : spec_(spec), xr_(xr), yr_(yr) {
        body_ += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
                 std::to_string(spec.width) + "\" height=\"" + std::to_string(spec.height) +
                 "\" viewBox=\"0 0 " + std::to_string(spec.width) + " " +
                 std::to_string(spec.height) + "\">\n";
        body_ += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    }

    double px(double x) const {
        const double w = spec_.width - kMarginLeft - kMarginRight;
        return kMarginLeft + (x - xr_.lo) / (xr_.hi - xr_.lo) * w;
    }
    double py(double y) const {
        const double h = spec_.height - kMarginTop - kMarginBottom;
        return kMarginTop + (yr_.hi - y) / (yr_.hi - yr_.lo) * h;
    }

    void axes_and_grid() {
        const double x0 = kMarginLeft, x1 = spec_.width - kMarginRight;
        const double y0 = spec_.height - kMarginBottom, y1 = kMarginTop;
        for (double t : ticks(xr_)) {
            const double x = px(t);
            body_ += "<line x1=\"" + fmt2(x) + "\" y1=\"" + fmt2(y0) + "\" x2=\"" + fmt2(x) +
                     "\" y2=\"" + fmt2(y1) + "\" stroke=\"#e0e0e0\" stroke-width=\"1\"/>\n";
            body_ += "<text x=\"" + fmt2(x) + "\" y=\"" + fmt2(y0 + 18) +
                     "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">" +
                     fmt_tick(t) + "</text>\n";
        }
        for (double t : ticks(yr_)) {
            const double y = py(t);
            body_ += "<line x1=\"" + fmt2(x0) + "\" y1=\"" + fmt2(y) + "\" x2=\"" + fmt2(x1) +
                     "\" y2=\"" + fmt2(y) + "\" stroke=\"#e0e0e0\" stroke-width=\"1\"/>\n";
            body_ += "<text x=\"" + fmt2(x0 - 6) + "\" y=\"" + fmt2(y + 4) +
                     "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"end\">" +
                     fmt_tick(t) + "</text>\n";
        }
        body_ += "<rect x=\"" + fmt2(x0) + "\" y=\"" + fmt2(y1) + "\" width=\"" +
                 fmt2(x1 - x0) + "\" height=\"" + fmt2(y0 - y1) +
                 "\" fill=\"none\" stroke=\"#333333\" stroke-width=\"1\"/>\n";
        body_ += "<text x=\"" + fmt2((x0 + x1) / 2) + "\" y=\"" + fmt2(22) +
                 "\" font-family=\"sans-serif\" font-size=\"15\" text-anchor=\"middle\">" +
                 escape(spec_.title) + "</text>\n";
        body_ += "<text x=\"" + fmt2((x0 + x1) / 2) + "\" y=\"" +
                 fmt2(spec_.height - 12) +
                 "\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">" +
                 escape(spec_.xlabel) + "</text>\n";
        body_ += "<text x=\"16\" y=\"" + fmt2((y0 + y1) / 2) +
                 "\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\" "
                 "transform=\"rotate(-90 16 " +
                 fmt2((y0 + y1) / 2) + ")\">" + escape(spec_.ylabel) + "</text>\n";
    }

    void raw(const std::string& s) { body_ += s; }

    void legend(const std::vector<std::pair<std::string, std::string>>& entries) {
        if (entries.empty()) return;
        const double x = spec_.width - kMarginRight - 180;
        double y = kMarginTop + 14;
        body_ += "<rect x=\"" + fmt2(x - 8) + "\" y=\"" + fmt2(y - 12) +
                 "\" width=\"184\" height=\"" + fmt2(entries.size() * 18 + 8.0) +
                 "\" fill=\"white\" fill-opacity=\"0.85\" stroke=\"#cccccc\"/>\n";
        for (const auto& [label, color] : entries) {
            body_ += "<line x1=\"" + fmt2(x) + "\" y1=\"" + fmt2(y - 4) + "\" x2=\"" +
                     fmt2(x + 22) + "\" y2=\"" + fmt2(y - 4) + "\" stroke=\"" + color +
                     "\" stroke-width=\"2.5\"/>\n";
            body_ += "<text x=\"" + fmt2(x + 28) + "\" y=\"" + fmt2(y) +
                     "\" font-family=\"sans-serif\" font-size=\"12\">" + escape(label) +
                     "</text>\n";
            y += 18;
        }
    }

    std::string finish() {
        body_ += "</svg>\n";
        return std::move(body_);
    }

private:
    PlotSpec spec_;
    Range xr_, yr_;
    std::string body_;
};

} // namespace

std::string line_plot(const PlotSpec& spec, const std::vector<Series>& series) {
    if (series.empty()) throw DataError("svg: no series to plot");
    double xlo = 0, xhi = 0, ylo = 0, yhi = 0;
    bool first = true;
    for (const Series& s : series) {
        if (s.xs.size() != s.ys.size()) throw DimensionError("svg: series length mismatch");
        for (size_t i = 0; i < s.xs.size(); ++i) {
            if (first) {
                xlo = xhi = s.xs[i];
                ylo = yhi = s.ys[i];
                first = false;
            }
            xlo = std::min(xlo, s.xs[i]);
            xhi = std::max(xhi, s.xs[i]);
            ylo = std::min(ylo, s.ys[i]);
            yhi = std::max(yhi, s.ys[i]);
        }
    }
    if (first) throw DataError("svg: all series empty");
    const Range xr = pad_range(xlo, xhi);
    const Range yr = spec.fix_y01 ? Range{-0.02, 1.02} : pad_range(ylo, yhi);

    Canvas canvas(spec, xr, yr);
    canvas.axes_and_grid();
    std::vector<std::pair<std::string, std::string>> legend;
    for (size_t si = 0; si < series.size(); ++si) {
        const Series& s = series[si];
        const std::string color =
            s.color.empty() ? kPalette[si % kPaletteSize] : s.color;
        if (!s.label.empty()) legend.emplace_back(s.label, color);
        if (s.xs.empty()) continue;
        std::string d = "M" + fmt2(canvas.px(s.xs[0])) + " " + fmt2(canvas.py(s.ys[0]));
        for (size_t i = 1; i < s.xs.size(); ++i) {
            if (s.step) {
                d += " L" + fmt2(canvas.px(s.xs[i])) + " " + fmt2(canvas.py(s.ys[i - 1]));
            }
            d += " L" + fmt2(canvas.px(s.xs[i])) + " " + fmt2(canvas.py(s.ys[i]));
        }
        canvas.raw("<path d=\"" + d + "\" fill=\"none\" stroke=\"" + color +
                   "\" stroke-width=\"2\"/>\n");
    }
    canvas.legend(legend);
    return canvas.finish();
}

std::string histogram_plot(const PlotSpec& spec, const std::vector<HistogramSeries>& series) {
    if (series.empty()) throw DataError("svg: no series to plot");
    double xlo = 0, xhi = 0, yhi = 0;
    bool first = true;
    for (const HistogramSeries& s : series) {
        if (s.edges.size() != s.counts.size() + 1) {
            throw DimensionError("svg: histogram needs counts.size()+1 edges");
        }
        if (s.counts.empty()) throw DataError("svg: empty histogram");
        if (first) {
            xlo = s.edges.front();
            xhi = s.edges.back();
            first = false;
        }
        xlo = std::min(xlo, s.edges.front());
        xhi = std::max(xhi, s.edges.back());
        for (double c : s.counts) yhi = std::max(yhi, c);
    }
    const Range xr = pad_range(xlo, xhi);
    const Range yr = {0.0, yhi <= 0.0 ? 1.0 : yhi * 1.08};

    Canvas canvas(spec, xr, yr);
    canvas.axes_and_grid();
    std::vector<std::pair<std::string, std::string>> legend;
    for (size_t si = 0; si < series.size(); ++si) {
        const HistogramSeries& s = series[si];
        const std::string color =
            s.color.empty() ? kPalette[si % kPaletteSize] : s.color;
        if (!s.label.empty()) legend.emplace_back(s.label, color);
        for (size_t b = 0; b < s.counts.size(); ++b) {
            if (s.counts[b] <= 0.0) continue;
            const double x0 = canvas.px(s.edges[b]);
            const double x1 = canvas.px(s.edges[b + 1]);
            const double y0 = canvas.py(s.counts[b]);
            const double y1 = canvas.py(0.0);
            canvas.raw("<rect x=\"" + fmt2(x0) + "\" y=\"" + fmt2(y0) + "\" width=\"" +
                       fmt2(x1 - x0) + "\" height=\"" + fmt2(y1 - y0) + "\" fill=\"" + color +
                       "\" fill-opacity=\"0.45\" stroke=\"" + color +
                       "\" stroke-width=\"1\"/>\n");
        }
    }
    canvas.legend(legend);
    return canvas.finish();
}

} // namespace normdae::svg
