#include "capmt/svg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "capmt/error.hpp"

namespace capmt {

namespace {

struct Color {
  int r, g, b;
};

// value in [-1, 1] -> blue through white to red.
Color diverging(double v) {
  v = std::clamp(v, -1.0, 1.0);
  if (v >= 0.0) {
    const int other = static_cast<int>(std::lround(255.0 * (1.0 - v)));
    return {255, other, other};
  }
  const int other = static_cast<int>(std::lround(255.0 * (1.0 + v)));
  return {other, other, 255};
}

}  // namespace

void write_heatmap_svg(const std::string& path, const std::string& title,
                       const std::vector<std::vector<double>>& values,
                       const std::vector<std::string>& row_labels, const std::string& x_label,
                       const std::string& y_label) {
  if (values.empty() || values[0].empty()) throw InputError("heatmap needs a non-empty matrix");
  const std::size_t rows = values.size(), cols = values[0].size();
  double peak = 0.0;
  for (const auto& row : values) {
    if (row.size() != cols) throw InputError("heatmap rows differ in length");
    for (double v : row) peak = std::max(peak, std::fabs(v));
  }
  if (peak == 0.0) peak = 1.0;

  const int cell = 14;
  const int left = row_labels.empty() ? 10 : 90;
  const int top = 34;
  const int width = left + static_cast<int>(cols) * cell + 10;
  const int height = top + static_cast<int>(rows) * cell + 28;

  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << left << "\" y=\"18\" font-family=\"monospace\" font-size=\"13\">"
      << title << "</text>\n";
  for (std::size_t r = 0; r < rows; ++r) {
    if (!row_labels.empty() && r < row_labels.size())
      out << "<text x=\"4\" y=\"" << top + static_cast<int>(r) * cell + cell - 3
          << "\" font-family=\"monospace\" font-size=\"9\">" << row_labels[r] << "</text>\n";
    for (std::size_t c = 0; c < cols; ++c) {
      const Color col = diverging(values[r][c] / peak);
      out << "<rect x=\"" << left + static_cast<int>(c) * cell << "\" y=\""
          << top + static_cast<int>(r) * cell << "\" width=\"" << cell << "\" height=\"" << cell
          << "\" fill=\"rgb(" << col.r << "," << col.g << "," << col.b
          << ")\" stroke=\"#ddd\" stroke-width=\"0.5\"/>\n";
    }
  }
  if (!x_label.empty())
    out << "<text x=\"" << left << "\" y=\"" << height - 8
        << "\" font-family=\"monospace\" font-size=\"10\">" << x_label << "</text>\n";
  if (!y_label.empty())
    out << "<text x=\"4\" y=\"28\" font-family=\"monospace\" font-size=\"10\">" << y_label
        << "</text>\n";
  out << "</svg>\n";
}

}  // namespace capmt
