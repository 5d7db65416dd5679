#include "wflow/datasets.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>

#include "wflow/errors.hpp"

namespace wflow {
namespace {

Gaussian iso2(double x, double y, double variance) {
  Eigen::VectorXd mu(2);
  mu << x, y;
  return Gaussian::isotropic(mu, variance);
}

struct Segment {
  double x0, y0, x1, y1;
};

void grow(double x, double y, double angle, double length, int depth, std::vector<Segment>& out) {
  const double x1 = x + length * std::cos(angle);
  const double y1 = y + length * std::sin(angle);
  out.push_back({x, y, x1, y1});
  if (depth == 0) return;
  constexpr double spread = std::numbers::pi / 6.0;
  grow(x1, y1, angle + spread, 0.7 * length, depth - 1, out);
  grow(x1, y1, angle - spread, 0.7 * length, depth - 1, out);
}

bool is_planar_preset(const std::string& p) {
  return p == "fig10-p" || p == "fig10-q" || p == "two-moons" || p == "checkerboard" || p == "branch-tree";
}

Tensor sample_two_moons(std::size_t n, Rng& rng) {
  Tensor x = Tensor::zeros(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    const double theta = std::numbers::pi * rng.uniform();
    double a, b;
    if (rng.uniform() < 0.5) {
      a = std::cos(theta);
      b = std::sin(theta);
    } else {
      a = 1.0 - std::cos(theta);
      b = 0.5 - std::sin(theta);
    }
    x(i, 0) = 2.0 * (a - 0.5) + 0.1 * rng.normal();
    x(i, 1) = 2.0 * (b - 0.25) + 0.1 * rng.normal();
  }
  return x;
}

Tensor sample_checkerboard(std::size_t n, Rng& rng) {
  Tensor x = Tensor::zeros(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    const double a = 4.0 * rng.uniform() - 2.0;
    const double b = rng.uniform() - 2.0 * static_cast<double>(rng.index(2));
    x(i, 0) = a;
    x(i, 1) = b + std::fmod(std::floor(a) + 4.0, 2.0);
  }
  return x;
}

}  // namespace

const std::vector<std::string>& dataset_presets() {
  static const std::vector<std::string> names = {"standard-gaussian", "gaussian",   "mixture",
                                                 "fig10-p",           "fig10-q",    "two-moons",
                                                 "checkerboard",      "branch-tree"};
  return names;
}

AnalyticDensity fig10_p() {
  return AnalyticDensity(Mixture{{1.0 / 3, 1.0 / 3, 1.0 / 3},
                                 {iso2(-2.0, 2.0, 0.75), iso2(-1.5, 1.5, 0.25), iso2(-1.0, 1.0, 0.75)}});
}

AnalyticDensity fig10_q() {
  return AnalyticDensity(Mixture{{0.5, 0.5}, {iso2(0.75, -1.5, 0.5), iso2(-2.0, -3.0, 0.5)}});
}

AnalyticDensity branch_tree() {
  std::vector<Segment> segments;
  grow(0.0, -3.0, std::numbers::pi / 2.0, 2.0, 4, segments);
  Mixture mix;
  double total_length = 0.0;
  for (const auto& s : segments) total_length += std::hypot(s.x1 - s.x0, s.y1 - s.y0);
  constexpr int beads = 4;
  for (const auto& s : segments) {
    const double len = std::hypot(s.x1 - s.x0, s.y1 - s.y0);
    const double sd = 0.08 * len;
    for (int k = 0; k < beads; ++k) {
      const double f = (k + 0.5) / beads;
      mix.components.push_back(iso2(s.x0 + f * (s.x1 - s.x0), s.y0 + f * (s.y1 - s.y0), sd * sd));
      mix.weights.push_back(len / (total_length * beads));
    }
  }
  // Renormalize against rounding so the weights sum to 1 exactly enough.
  double w = 0.0;
  for (double v : mix.weights) w += v;
  for (double& v : mix.weights) v /= w;
  return AnalyticDensity(std::move(mix));
}

void DatasetSpec::validate() const {
  bool known = false;
  for (const auto& p : dataset_presets()) known = known || p == preset;
  if (!known) throw FormatError("unknown dataset preset '" + preset + "'");
  if (count < 1) throw FormatError("dataset count must be at least 1");
  if (dim < 1) throw FormatError("dataset dimension must be at least 1");
  if (is_planar_preset(preset) && dim != 2) throw FormatError("preset '" + preset + "' is two-dimensional");
  if (!shift.empty() && shift.size() != dim) throw FormatError("dataset shift must have one entry per dimension");
  if (scale == 0.0 || !std::isfinite(scale)) throw FormatError("dataset scale must be finite and nonzero");
  if (preset == "gaussian" && (means.size() != dim || variances.size() != 1)) {
    throw FormatError("preset 'gaussian' needs means (d values) and one variance");
  }
  if (preset == "mixture") {
    if (weights.empty() || means.size() != weights.size() * dim || variances.size() != weights.size()) {
      throw FormatError("preset 'mixture' needs k weights, k*d means and k variances");
    }
  }
}

std::optional<AnalyticDensity> dataset_density(const DatasetSpec& spec) {
  spec.validate();
  std::optional<AnalyticDensity> base;
  const auto d = static_cast<Eigen::Index>(spec.dim);
  if (spec.preset == "standard-gaussian") {
    base = AnalyticDensity::standard_normal(spec.dim);
  } else if (spec.preset == "gaussian") {
    base = AnalyticDensity(Gaussian::isotropic(Eigen::Map<const Eigen::VectorXd>(spec.means.data(), d),
                                               spec.variances.front()));
  } else if (spec.preset == "mixture") {
    Mixture mix;
    for (std::size_t k = 0; k < spec.weights.size(); ++k) {
      mix.weights.push_back(spec.weights[k]);
      mix.components.push_back(
          Gaussian::isotropic(Eigen::Map<const Eigen::VectorXd>(spec.means.data() + k * spec.dim, d),
                              spec.variances[k]));
    }
    base = AnalyticDensity(std::move(mix));
  } else if (spec.preset == "fig10-p") {
    base = fig10_p();
  } else if (spec.preset == "fig10-q") {
    base = fig10_q();
  } else if (spec.preset == "branch-tree") {
    base = branch_tree();
  }
  if (!base) return std::nullopt;
  if (spec.scale == 1.0 && spec.shift.empty()) return base;
  Eigen::VectorXd shift = Eigen::VectorXd::Zero(d);
  for (std::size_t j = 0; j < spec.shift.size(); ++j) shift(static_cast<Eigen::Index>(j)) = spec.shift[j];
  return base->affine_transformed(spec.scale, shift);
}

ParticleEnsemble sample_dataset(const DatasetSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  if (auto density = dataset_density(spec)) return ParticleEnsemble(density->sample(spec.count, rng));
  Tensor x = spec.preset == "two-moons" ? sample_two_moons(spec.count, rng) : sample_checkerboard(spec.count, rng);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) {
      x(i, j) = spec.scale * x(i, j) + (spec.shift.empty() ? 0.0 : spec.shift[j]);
    }
  }
  return ParticleEnsemble(std::move(x));
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw FormatError("cannot format number");
  return std::string(buf, ptr);
}

void write_ensemble_csv(std::ostream& os, const Tensor& x) {
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) {
      if (j) os << ',';
      os << format_double(x(i, j));
    }
    os << '\n';
  }
}

void write_ensemble_csv(const std::string& path, const Tensor& x) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open '" + path + "' for writing");
  write_ensemble_csv(os, x);
}

Tensor read_ensemble_csv(std::istream& is) {
  std::vector<double> values;
  std::size_t cols = 0;
  std::size_t rows = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::size_t count = 0;
    const char* p = line.data();
    const char* end = line.data() + line.size();
    while (p <= end) {
      const char* comma = std::find(p, end, ',');
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(p, comma, v);
      if (ec != std::errc() || ptr != comma) {
        throw FormatError("csv line " + std::to_string(line_no) + ": malformed number");
      }
      values.push_back(v);
      ++count;
      p = comma + 1;
    }
    if (rows == 0) cols = count;
    if (count != cols) throw FormatError("csv line " + std::to_string(line_no) + ": ragged row");
    ++rows;
  }
  if (rows == 0) throw FormatError("csv contains no particles");
  return Tensor({rows, cols}, std::move(values));
}

Tensor read_ensemble_csv(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open '" + path + "'");
  return read_ensemble_csv(is);
}

}  // namespace wflow
