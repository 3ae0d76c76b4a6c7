#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "drlqr/errors.hpp"

// Minimal static SVG line charts (median line plus optional quantile band),
// generated straight from the CSV data the tool already emits. No external
// plotting dependency; every plotted series is backed by a CSV in the same
// artifact directory.

namespace drlqr::plot {

struct Series {
  std::string label;
  std::string color = "#1f77b4";
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> band_lo;  // optional, same length as x
  std::vector<double> band_hi;
};

struct ChartSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_y = false;
  int width = 640;
  int height = 420;
};

namespace detail {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

}  // namespace detail

inline void write_line_chart(const std::filesystem::path& path, const ChartSpec& spec,
                             const std::vector<Series>& series) {
  const double ml = 70, mr = 20, mt = 40, mb = 50;
  const double pw = spec.width - ml - mr;
  const double ph = spec.height - mt - mb;

  double x_min = std::numeric_limits<double>::infinity(), x_max = -x_min;
  double y_min = x_min, y_max = -x_min;
  const auto consider = [&](double x, double y) {
    if (!std::isfinite(x) || !std::isfinite(y)) return;
    if (spec.log_y && y <= 0.0) return;
    x_min = std::min(x_min, x);
    x_max = std::max(x_max, x);
    y_min = std::min(y_min, y);
    y_max = std::max(y_max, y);
  };
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      consider(s.x[i], s.y[i]);
      if (s.band_lo.size() == s.x.size()) consider(s.x[i], s.band_lo[i]);
      if (s.band_hi.size() == s.x.size()) consider(s.x[i], s.band_hi[i]);
    }
  }
  if (!std::isfinite(x_min) || !std::isfinite(y_min)) {
    x_min = 0.0;
    x_max = 1.0;
    y_min = spec.log_y ? 0.1 : 0.0;
    y_max = 1.0;
  }
  if (x_max == x_min) x_max = x_min + 1.0;
  if (y_max == y_min) y_max = y_min + (spec.log_y ? y_min : 1.0);

  const auto ty = [&](double y) {
    double t = spec.log_y ? (std::log10(y) - std::log10(y_min)) /
                                (std::log10(y_max) - std::log10(y_min))
                          : (y - y_min) / (y_max - y_min);
    return mt + ph * (1.0 - t);
  };
  const auto tx = [&](double x) { return ml + pw * (x - x_min) / (x_max - x_min); };

  std::ofstream os(path);
  if (!os) throw IoError("cannot write plot: " + path.string());
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << spec.width << "\" height=\""
     << spec.height << "\" viewBox=\"0 0 " << spec.width << " " << spec.height << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << spec.width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\" "
        "font-family=\"sans-serif\">"
     << spec.title << "</text>\n";

  // Axis ticks.
  for (int i = 0; i <= 5; ++i) {
    const double fx = x_min + (x_max - x_min) * i / 5.0;
    const double px = tx(fx);
    os << "<line x1=\"" << px << "\" y1=\"" << mt + ph << "\" x2=\"" << px << "\" y2=\""
       << mt + ph + 4 << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << px << "\" y=\"" << mt + ph + 18
       << "\" text-anchor=\"middle\" font-size=\"11\" font-family=\"sans-serif\">"
       << detail::fmt(fx) << "</text>\n";

    const double fy = spec.log_y
                          ? std::pow(10.0, std::log10(y_min) +
                                               (std::log10(y_max) - std::log10(y_min)) * i / 5.0)
                          : y_min + (y_max - y_min) * i / 5.0;
    const double py = ty(fy);
    os << "<line x1=\"" << ml - 4 << "\" y1=\"" << py << "\" x2=\"" << ml << "\" y2=\"" << py
       << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << ml - 8 << "\" y=\"" << py + 4
       << "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">" << detail::fmt(fy)
       << "</text>\n";
  }
  os << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  os << "<text x=\"" << ml + pw / 2 << "\" y=\"" << spec.height - 8
     << "\" text-anchor=\"middle\" font-size=\"13\" font-family=\"sans-serif\">" << spec.x_label
     << "</text>\n";
  os << "<text x=\"16\" y=\"" << mt + ph / 2
     << "\" text-anchor=\"middle\" font-size=\"13\" font-family=\"sans-serif\" transform=\"rotate(-90 "
        "16 "
     << mt + ph / 2 << ")\">" << spec.y_label << "</text>\n";

  const auto clamp_y = [&](double y) {
    if (spec.log_y && y <= 0.0) return y_min;
    return std::min(std::max(y, y_min), y_max);
  };

  for (const auto& s : series) {
    if (s.band_lo.size() == s.x.size() && s.band_hi.size() == s.x.size() && !s.x.empty()) {
      std::string pts;
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        pts += detail::fmt(tx(s.x[i])) + "," + detail::fmt(ty(clamp_y(s.band_hi[i]))) + " ";
      }
      for (std::size_t i = s.x.size(); i-- > 0;) {
        pts += detail::fmt(tx(s.x[i])) + "," + detail::fmt(ty(clamp_y(s.band_lo[i]))) + " ";
      }
      os << "<polygon points=\"" << pts << "\" fill=\"" << s.color
         << "\" fill-opacity=\"0.18\" stroke=\"none\"/>\n";
    }
    std::string pts;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      const double y = clamp_y(s.y[i]);
      if (!std::isfinite(y)) continue;
      pts += detail::fmt(tx(s.x[i])) + "," + detail::fmt(ty(y)) + " ";
    }
    os << "<polyline points=\"" << pts << "\" fill=\"none\" stroke=\"" << s.color
       << "\" stroke-width=\"1.6\"/>\n";
  }

  // Legend.
  double ly = mt + 14;
  for (const auto& s : series) {
    os << "<line x1=\"" << ml + pw - 130 << "\" y1=\"" << ly << "\" x2=\"" << ml + pw - 108
       << "\" y2=\"" << ly << "\" stroke=\"" << s.color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << ml + pw - 102 << "\" y=\"" << ly + 4
       << "\" font-size=\"12\" font-family=\"sans-serif\">" << s.label << "</text>\n";
    ly += 18;
  }
  os << "</svg>\n";
  if (!os) throw IoError("failed writing plot: " + path.string());
}

}  // namespace drlqr::plot
