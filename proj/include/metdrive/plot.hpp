#pragma once

// Minimal SVG line charts for loss curves and speed traces.

#include <string>
#include <vector>

namespace metdrive::plot {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

/// Renders the series on shared axes. Throws ValidationError if a series has
/// mismatched x/y lengths or no finite points.
std::string line_chart_svg(const std::string& title, const std::vector<Series>& series,
                           const std::string& x_label, const std::string& y_label);

/// Writes text to a file, throwing IoError naming the path on failure.
void write_text(const std::string& path, const std::string& text);

}  // namespace metdrive::plot
