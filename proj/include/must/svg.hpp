#pragma once

#include <string>
#include <vector>

#include "must/evalkit.hpp"

namespace must {

/// Minimal SVG chart emitters; output is deterministic for fixed inputs.
namespace svg {

struct Series {
  std::string label;
  std::string color;
  std::vector<double> x;
  std::vector<double> y;
  // Optional band (same x grid); drawn as a translucent polygon when set.
  std::vector<double> band_lo;
  std::vector<double> band_hi;
  // Optional tick marks (e.g. censoring positions on a survival curve).
  std::vector<double> tick_x;
  std::vector<double> tick_y;
  bool step = false;  // right-continuous step interpolation
};

/// Line/step chart with axes; y range clamped to [y_min, y_max].
std::string line_chart(const std::string& title, const std::string& x_label,
                       const std::string& y_label,
                       const std::vector<Series>& series, double y_min,
                       double y_max);

/// Labelled heat map of values in [-1, 1] (blue-white-red).
std::string heat_map(const std::string& title,
                     const std::vector<std::string>& row_labels,
                     const std::vector<std::string>& col_labels,
                     const std::vector<std::vector<double>>& values);

void write_file(const std::string& path, const std::string& content);

}  // namespace svg
}  // namespace must
