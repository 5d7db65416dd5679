#include "wflow/svg.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace wflow {

namespace {

// Fixed two-decimal coordinates, independent of the global locale.
std::string num(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, 2);
  if (ec != std::errc()) return "0";
  return std::string(buf, p);
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

SvgPlot::SvgPlot(std::string title, double width, double height)
    : title_(std::move(title)), width_(width), height_(height) {}

void SvgPlot::scatter(const std::string& label, const std::string& color, const Tensor& x, double radius) {
  std::vector<Point2> pts;
  pts.reserve(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) pts.push_back({x(i, 0), x.cols() > 1 ? x(i, 1) : 0.0});
  scatter(label, color, pts, radius);
}

void SvgPlot::scatter(const std::string& label, const std::string& color, const std::vector<Point2>& pts,
                      double radius) {
  layers_.push_back(Layer{label, color, pts, {}, radius, false});
}

void SvgPlot::colored_points(const std::vector<Point2>& pts, const std::vector<std::string>& colors, double radius) {
  if (pts.size() != colors.size()) throw std::invalid_argument("svg: one color per point");
  layers_.push_back(Layer{"", "", pts, colors, radius, false});
}

void SvgPlot::polyline(const std::string& color, const std::vector<Point2>& pts, double stroke,
                       const std::string& label) {
  layers_.push_back(Layer{label, color, pts, {}, stroke, true});
}

void SvgPlot::set_axis_labels(std::string x, std::string y) {
  xlabel_ = std::move(x);
  ylabel_ = std::move(y);
}

SvgPlot::Box SvgPlot::fitted_box() const {
  const double inf = std::numeric_limits<double>::infinity();
  Box b{inf, -inf, inf, -inf};
  for (const Layer& l : layers_) {
    for (const Point2& p : l.pts) {
      if (!std::isfinite(p[0]) || !std::isfinite(p[1])) continue;
      b.xmin = std::min(b.xmin, p[0]);
      b.xmax = std::max(b.xmax, p[0]);
      b.ymin = std::min(b.ymin, p[1]);
      b.ymax = std::max(b.ymax, p[1]);
    }
  }
  if (!(b.xmin <= b.xmax)) return Box{-1, 1, -1, 1};
  auto pad = [](double& lo, double& hi) {
    const double span = hi - lo;
    const double m = span > 0 ? 0.05 * span : 1.0;
    lo -= m;
    hi += m;
  };
  pad(b.xmin, b.xmax);
  pad(b.ymin, b.ymax);
  return b;
}

std::string SvgPlot::render() const {
  const Box b = box_.value_or(fitted_box());
  const double left = 50, right = 20, top = 30, bottom = 40;
  const double pw = width_ - left - right, ph = height_ - top - bottom;
  auto sx = [&](double x) { return left + (x - b.xmin) / (b.xmax - b.xmin) * pw; };
  auto sy = [&](double y) { return top + (b.ymax - y) / (b.ymax - b.ymin) * ph; };
  auto inside = [&](const Point2& p) {
    return std::isfinite(p[0]) && std::isfinite(p[1]) && p[0] >= b.xmin && p[0] <= b.xmax && p[1] >= b.ymin &&
           p[1] <= b.ymax;
  };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width_) << "\" height=\"" << num(height_)
     << "\" viewBox=\"0 0 " << num(width_) << ' ' << num(height_) << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << num(width_ / 2) << "\" y=\"18\" text-anchor=\"middle\" font-family=\"sans-serif\" "
     << "font-size=\"13\">" << escape(title_) << "</text>\n";
  os << "<rect x=\"" << num(left) << "\" y=\"" << num(top) << "\" width=\"" << num(pw) << "\" height=\"" << num(ph)
     << "\" fill=\"none\" stroke=\"#444\"/>\n";
  // Box extents as tick labels.
  os << "<g font-family=\"sans-serif\" font-size=\"10\" fill=\"#444\">\n";
  os << "<text x=\"" << num(left) << "\" y=\"" << num(top + ph + 14) << "\">" << num(b.xmin) << "</text>\n";
  os << "<text x=\"" << num(left + pw) << "\" y=\"" << num(top + ph + 14) << "\" text-anchor=\"end\">"
     << num(b.xmax) << "</text>\n";
  os << "<text x=\"" << num(left - 4) << "\" y=\"" << num(top + ph) << "\" text-anchor=\"end\">" << num(b.ymin)
     << "</text>\n";
  os << "<text x=\"" << num(left - 4) << "\" y=\"" << num(top + 10) << "\" text-anchor=\"end\">" << num(b.ymax)
     << "</text>\n";
  if (!xlabel_.empty()) {
    os << "<text x=\"" << num(left + pw / 2) << "\" y=\"" << num(height_ - 8) << "\" text-anchor=\"middle\">"
       << escape(xlabel_) << "</text>\n";
  }
  if (!ylabel_.empty()) {
    os << "<text x=\"12\" y=\"" << num(top + ph / 2) << "\" transform=\"rotate(-90 12 " << num(top + ph / 2)
       << ")\" text-anchor=\"middle\">" << escape(ylabel_) << "</text>\n";
  }
  os << "</g>\n";

  for (const Layer& l : layers_) {
    if (l.line) {
      os << "<polyline fill=\"none\" stroke=\"" << l.stroke << "\" stroke-width=\"" << num(l.size)
         << "\" points=\"";
      bool first = true;
      for (const Point2& p : l.pts) {
        if (!inside(p)) continue;
        os << (first ? "" : " ") << num(sx(p[0])) << ',' << num(sy(p[1]));
        first = false;
      }
      os << "\"/>\n";
      continue;
    }
    os << "<g" << (l.fills.empty() ? " fill=\"" + l.stroke + "\" fill-opacity=\"0.6\"" : std::string()) << ">\n";
    for (std::size_t i = 0; i < l.pts.size(); ++i) {
      if (!inside(l.pts[i])) continue;
      os << "<circle cx=\"" << num(sx(l.pts[i][0])) << "\" cy=\"" << num(sy(l.pts[i][1])) << "\" r=\""
         << num(l.size) << '"';
      if (!l.fills.empty()) os << " fill=\"" << l.fills[i] << '"';
      os << "/>\n";
    }
    os << "</g>\n";
  }

  double ly = top + 14;
  for (const Layer& l : layers_) {
    if (l.label.empty()) continue;
    os << "<rect x=\"" << num(left + pw - 110) << "\" y=\"" << num(ly - 8) << "\" width=\"10\" height=\"8\" fill=\""
       << l.stroke << "\"/>\n";
    os << "<text x=\"" << num(left + pw - 96) << "\" y=\"" << num(ly) << "\" font-family=\"sans-serif\" "
       << "font-size=\"10\">" << escape(l.label) << "</text>\n";
    ly += 14;
  }
  os << "</svg>\n";
  return os.str();
}

void SvgPlot::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << render();
  if (!os) throw std::runtime_error("failed writing " + path);
}

std::string ramp_color(double v) {
  v = std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 1.0);
  const int r = static_cast<int>(std::lround(40 + 200 * v));
  const int g = static_cast<int>(std::lround(80 + 60 * (1 - std::abs(2 * v - 1))));
  const int b = static_cast<int>(std::lround(240 - 200 * v));
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

}  // namespace wflow
