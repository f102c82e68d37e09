#pragma once

// Minimal self-contained SVG plotting: line/step plots and overlaid
// histograms with axes, tick labels, and a legend. Output is deterministic
// (fixed-precision coordinates) so plots can be byte-compared across runs.

#include <string>
#include <vector>

namespace normdae::svg {

struct Series {
    std::string label;
    std::vector<double> xs;
    std::vector<double> ys;
    std::string color;  // CSS color; empty selects from the default palette
    bool step = false;  // render horizontal-then-vertical steps (survival curves)
};

struct HistogramSeries {
    std::string label;
    std::string color;
    std::vector<double> edges;   // bin edges, size counts.size() + 1
    std::vector<double> counts;  // per-bin counts
};

struct PlotSpec {
    std::string title;
    std::string xlabel;
    std::string ylabel;
    int width = 720;
    int height = 480;
    bool fix_y01 = false;  // pin the y-range to [0, 1] (survival probabilities)
};

std::string line_plot(const PlotSpec& spec, const std::vector<Series>& series);
std::string histogram_plot(const PlotSpec& spec, const std::vector<HistogramSeries>& series);

} // namespace normdae::svg
