#pragma once

#include <string>
#include <vector>

namespace capmt {

// Dependency-free SVG heatmap: one rectangle per cell, blue-white-red scale
// centered at zero and normalized by the largest magnitude.
void write_heatmap_svg(const std::string& path, const std::string& title,
                       const std::vector<std::vector<double>>& values,
                       const std::vector<std::string>& row_labels = {},
                       const std::string& x_label = "", const std::string& y_label = "");

}  // namespace capmt
