#pragma once

#include <string>
#include <utility>
#include <vector>

namespace btdz {

struct ChartSeries {
    std::string label;
    std::vector<std::pair<double, double>> points; // (x, y), x ascending
};

/// Self-contained SVG line chart (no external plotting dependency).
std::string line_chart_svg(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<ChartSeries>& series);

} // namespace btdz
