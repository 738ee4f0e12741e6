#include "must/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "must/errors.hpp"

namespace must {
namespace svg {

namespace {

constexpr int kWidth = 640;
constexpr int kHeight = 420;
constexpr int kMarginL = 60, kMarginR = 20, kMarginT = 40, kMarginB = 50;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

struct Scale {
  double x0, x1, y0, y1;
  double px(double x) const {
    const double t = x1 > x0 ? (x - x0) / (x1 - x0) : 0.5;
    return kMarginL + t * (kWidth - kMarginL - kMarginR);
  }
  double py(double y) const {
    const double t = y1 > y0 ? (y - y0) / (y1 - y0) : 0.5;
    return kHeight - kMarginB - t * (kHeight - kMarginT - kMarginB);
  }
};

void axes(std::ostringstream& os, const Scale& s, const std::string& title,
          const std::string& xl, const std::string& yl) {
  os << "<rect width='" << kWidth << "' height='" << kHeight
     << "' fill='white'/>\n";
  os << "<text x='" << kWidth / 2 << "' y='24' text-anchor='middle' "
     << "font-size='15' font-family='sans-serif'>" << title << "</text>\n";
  os << "<line x1='" << kMarginL << "' y1='" << kHeight - kMarginB << "' x2='"
     << kWidth - kMarginR << "' y2='" << kHeight - kMarginB
     << "' stroke='black'/>\n";
  os << "<line x1='" << kMarginL << "' y1='" << kMarginT << "' x2='" << kMarginL
     << "' y2='" << kHeight - kMarginB << "' stroke='black'/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = s.x0 + (s.x1 - s.x0) * i / 4.0;
    const double fy = s.y0 + (s.y1 - s.y0) * i / 4.0;
    os << "<text x='" << s.px(fx) << "' y='" << kHeight - kMarginB + 18
       << "' text-anchor='middle' font-size='11' font-family='sans-serif'>"
       << fmt(fx) << "</text>\n";
    os << "<text x='" << kMarginL - 8 << "' y='" << s.py(fy) + 4
       << "' text-anchor='end' font-size='11' font-family='sans-serif'>"
       << fmt(fy) << "</text>\n";
  }
  os << "<text x='" << kWidth / 2 << "' y='" << kHeight - 12
     << "' text-anchor='middle' font-size='12' font-family='sans-serif'>" << xl
     << "</text>\n";
  os << "<text x='16' y='" << kHeight / 2
     << "' text-anchor='middle' font-size='12' font-family='sans-serif' "
     << "transform='rotate(-90 16 " << kHeight / 2 << ")'>" << yl
     << "</text>\n";
}

// Expands (x, y) into a right-continuous step path starting at (x0, 1st y).
std::vector<std::pair<double, double>> step_points(
    const std::vector<double>& x, const std::vector<double>& y, double x_start,
    double y_start) {
  std::vector<std::pair<double, double>> pts;
  pts.emplace_back(x_start, y_start);
  double prev = y_start;
  for (std::size_t i = 0; i < x.size(); ++i) {
    pts.emplace_back(x[i], prev);
    pts.emplace_back(x[i], y[i]);
    prev = y[i];
  }
  return pts;
}

}  // namespace

std::string line_chart(const std::string& title, const std::string& x_label,
                       const std::string& y_label,
                       const std::vector<Series>& series, double y_min,
                       double y_max) {
  double x0 = 0.0, x1 = 1.0;
  bool first = true;
  for (const auto& s : series) {
    for (double x : s.x) {
      if (first) {
        x0 = x1 = x;
        first = false;
      }
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
    }
  }
  if (x0 > 0.0) x0 = 0.0;
  Scale sc{x0, x1 > x0 ? x1 : x0 + 1.0, y_min, y_max};

  std::ostringstream os;
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << kWidth
     << "' height='" << kHeight << "'>\n";
  axes(os, sc, title, x_label, y_label);

  int legend_row = 0;
  for (const auto& s : series) {
    if (!s.band_lo.empty() && s.band_lo.size() == s.x.size()) {
      auto lo = s.step ? step_points(s.x, s.band_lo, sc.x0, 1.0)
                       : std::vector<std::pair<double, double>>{};
      auto hi = s.step ? step_points(s.x, s.band_hi, sc.x0, 1.0)
                       : std::vector<std::pair<double, double>>{};
      if (!s.step) {
        for (std::size_t i = 0; i < s.x.size(); ++i) {
          lo.emplace_back(s.x[i], s.band_lo[i]);
          hi.emplace_back(s.x[i], s.band_hi[i]);
        }
      }
      os << "<polygon fill='" << s.color << "' fill-opacity='0.15' "
         << "stroke='none' points='";
      for (const auto& [x, y] : hi) os << fmt(sc.px(x)) << "," << fmt(sc.py(y)) << " ";
      for (auto it = lo.rbegin(); it != lo.rend(); ++it)
        os << fmt(sc.px(it->first)) << "," << fmt(sc.py(it->second)) << " ";
      os << "'/>\n";
    }
    std::vector<std::pair<double, double>> pts;
    if (s.step) {
      pts = step_points(s.x, s.y, sc.x0, 1.0);
    } else {
      for (std::size_t i = 0; i < s.x.size(); ++i) pts.emplace_back(s.x[i], s.y[i]);
    }
    os << "<polyline fill='none' stroke='" << s.color << "' stroke-width='1.5' points='";
    for (const auto& [x, y] : pts) os << fmt(sc.px(x)) << "," << fmt(sc.py(y)) << " ";
    os << "'/>\n";
    for (std::size_t i = 0; i < s.tick_x.size(); ++i) {
      const double px = sc.px(s.tick_x[i]);
      const double py = sc.py(s.tick_y[i]);
      os << "<line x1='" << fmt(px) << "' y1='" << fmt(py - 4) << "' x2='"
         << fmt(px) << "' y2='" << fmt(py + 4) << "' stroke='" << s.color
         << "'/>\n";
    }
    os << "<text x='" << kWidth - kMarginR - 4 << "' y='"
       << kMarginT + 16 + 16 * legend_row
       << "' text-anchor='end' font-size='12' font-family='sans-serif' fill='"
       << s.color << "'>" << s.label << "</text>\n";
    ++legend_row;
  }
  os << "</svg>\n";
  return os.str();
}

std::string heat_map(const std::string& title,
                     const std::vector<std::string>& row_labels,
                     const std::vector<std::string>& col_labels,
                     const std::vector<std::vector<double>>& values) {
  const std::size_t rows = row_labels.size();
  const std::size_t cols = col_labels.size();
  const int cell = 64;
  const int left = 140, top = 70;
  const int w = left + int(cols) * cell + 20;
  const int h = top + int(rows) * cell + 20;
  std::ostringstream os;
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='"
     << h << "'>\n<rect width='" << w << "' height='" << h
     << "' fill='white'/>\n";
  os << "<text x='" << w / 2 << "' y='24' text-anchor='middle' "
     << "font-size='15' font-family='sans-serif'>" << title << "</text>\n";
  for (std::size_t c = 0; c < cols; ++c)
    os << "<text x='" << left + int(c) * cell + cell / 2 << "' y='" << top - 10
       << "' text-anchor='middle' font-size='11' font-family='sans-serif'>"
       << col_labels[c] << "</text>\n";
  for (std::size_t r = 0; r < rows; ++r) {
    os << "<text x='" << left - 8 << "' y='"
       << top + int(r) * cell + cell / 2 + 4
       << "' text-anchor='end' font-size='11' font-family='sans-serif'>"
       << row_labels[r] << "</text>\n";
    for (std::size_t c = 0; c < cols; ++c) {
      const double v = std::clamp(values[r][c], -1.0, 1.0);
      // -1 -> blue, 0 -> white, +1 -> red
      int red = 255, green = 255, blue = 255;
      if (v >= 0) {
        green = blue = int(255 * (1.0 - v));
      } else {
        red = green = int(255 * (1.0 + v));
      }
      os << "<rect x='" << left + int(c) * cell << "' y='" << top + int(r) * cell
         << "' width='" << cell << "' height='" << cell << "' fill='rgb(" << red
         << "," << green << "," << blue << ")' stroke='gray'/>\n";
      char vb[16];
      std::snprintf(vb, sizeof(vb), "%.2f", values[r][c]);
      os << "<text x='" << left + int(c) * cell + cell / 2 << "' y='"
         << top + int(r) * cell + cell / 2 + 4
         << "' text-anchor='middle' font-size='11' font-family='sans-serif'>"
         << vb << "</text>\n";
    }
  }
  os << "</svg>\n";
  return os.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  os << content;
}

}  // namespace svg
}  // namespace must
