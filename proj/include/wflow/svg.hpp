#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "wflow/tensor.hpp"

namespace wflow {

using Point2 = std::array<double, 2>;

/// Minimal standalone SVG: scatter layers and polylines on one set of axes,
/// mapped linearly from a data box to the canvas.
class SvgPlot {
 public:
  struct Box {
    double xmin, xmax, ymin, ymax;
  };

  explicit SvgPlot(std::string title, double width = 480, double height = 480);

  /// First two columns of x.
  void scatter(const std::string& label, const std::string& color, const Tensor& x, double radius = 1.5);
  void scatter(const std::string& label, const std::string& color, const std::vector<Point2>& pts,
               double radius = 1.5);
  /// Points with per-point fill colors (e.g. a value map), no legend entry.
  void colored_points(const std::vector<Point2>& pts, const std::vector<std::string>& colors, double radius);
  void polyline(const std::string& color, const std::vector<Point2>& pts, double stroke = 1.0,
                const std::string& label = "");
  /// Fixes the data box; otherwise it is fitted to all layers plus a 5% margin.
  void set_box(Box b) { box_ = b; }
  void set_axis_labels(std::string x, std::string y);

  std::string render() const;
  void save(const std::string& path) const;

 private:
  struct Layer {
    std::string label;
    std::string stroke;
    std::vector<Point2> pts;
    std::vector<std::string> fills;
    double size = 1.0;
    bool line = false;
  };

  Box fitted_box() const;

  std::string title_;
  double width_, height_;
  std::string xlabel_, ylabel_;
  std::optional<Box> box_;
  std::vector<Layer> layers_;
};

/// Sequential color for v in [0, 1] (blue to red).
std::string ramp_color(double v);

}  // namespace wflow
