#include "wflow/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "wflow/errors.hpp"

namespace wflow {

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  const std::size_t expected =
      std::accumulate(shape_.begin(), shape_.end(), std::size_t{1}, std::multiplies<>());
  if (expected != data_.size()) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_string());
  }
}

Tensor Tensor::zeros(std::size_t rows, std::size_t cols) { return filled(rows, cols, 0.0); }

Tensor Tensor::filled(std::size_t rows, std::size_t cols, double value) {
  return Tensor({rows, cols}, std::vector<double>(rows * cols, value));
}

Tensor Tensor::scalar(double value) { return Tensor({1, 1}, {value}); }

Tensor Tensor::from_rows(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
  return Tensor({rows, cols}, std::vector<double>(values));
}

Tensor Tensor::row(std::span<const double> values) {
  return Tensor({1, values.size()}, std::vector<double>(values.begin(), values.end()));
}

Tensor Tensor::from_matrix(const RowMatrix& m) {
  const auto r = static_cast<std::size_t>(m.rows());
  const auto c = static_cast<std::size_t>(m.cols());
  return Tensor({r, c}, std::vector<double>(m.data(), m.data() + m.size()));
}

std::size_t Tensor::rows() const {
  if (shape_.size() != 2) throw ShapeError("rank-2 tensor expected, got shape " + shape_string());
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (shape_.size() != 2) throw ShapeError("rank-2 tensor expected, got shape " + shape_string());
  return shape_[1];
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_string());
  return data_[0];
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << 'x';
    os << shape_[i];
  }
  os << ')';
  return os.str();
}

Tensor take_rows(const Tensor& t, std::size_t begin, std::size_t count) {
  if (begin + count > t.rows()) throw ShapeError("take_rows out of range");
  const std::size_t c = t.cols();
  auto first = t.data().begin() + static_cast<std::ptrdiff_t>(begin * c);
  return Tensor({count, c}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(count * c)));
}

Tensor gather_rows(const Tensor& t, std::span<const std::size_t> index) {
  const std::size_t c = t.cols();
  std::vector<double> out;
  out.reserve(index.size() * c);
  for (std::size_t i : index) {
    if (i >= t.rows()) throw ShapeError("gather_rows index out of range");
    auto r = t.row_span(i);
    out.insert(out.end(), r.begin(), r.end());
  }
  return Tensor({index.size(), c}, std::move(out));
}

Tensor stack_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("stack_rows of nothing");
  const std::size_t c = parts.front().cols();
  std::size_t rows = 0;
  std::vector<double> out;
  for (const auto& p : parts) {
    if (p.cols() != c) throw ShapeError("stack_rows width mismatch");
    rows += p.rows();
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  return Tensor({rows, c}, std::move(out));
}

}  // namespace wflow
