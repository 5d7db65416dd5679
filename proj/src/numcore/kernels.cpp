#include "wflow/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "wflow/errors.hpp"

namespace wflow {
namespace {

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": rank-2 operand expected, got " + t.shape_string());
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  require_rank2(a, op);
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " + b.shape_string());
  }
}

template <typename F>
Tensor map_unary(const Tensor& a, const char* op, F f) {
  require_rank2(a, op);
  Tensor out = Tensor::zeros(a.rows(), a.cols());
  auto src = a.data();
  auto dst = out.data();
  for (std::size_t k = 0; k < src.size(); ++k) dst[k] = f(src[k]);
  require_finite(out, op);
  return out;
}

template <typename F>
Tensor map_binary(const Tensor& a, const Tensor& b, const char* op, F f) {
  require_same(a, b, op);
  Tensor out = Tensor::zeros(a.rows(), a.cols());
  auto x = a.data();
  auto y = b.data();
  auto dst = out.data();
  for (std::size_t k = 0; k < x.size(); ++k) dst[k] = f(x[k], y[k]);
  require_finite(out, op);
  return out;
}

double stable_softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

void require_finite(const Tensor& t, const char* what) {
  if (!t.all_finite()) throw NumericError(std::string(what) + ": non-finite value produced");
}

Tensor add(const Tensor& a, const Tensor& b) {
  return map_binary(a, b, "add", [](double x, double y) { return x + y; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return map_binary(a, b, "sub", [](double x, double y) { return x - y; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return map_binary(a, b, "mul", [](double x, double y) { return x * y; });
}

Tensor scale(const Tensor& a, double c) {
  return map_unary(a, "scale", [c](double x) { return c * x; });
}

Tensor add_scalar(const Tensor& a, double c) {
  return map_unary(a, "add_scalar", [c](double x) { return x + c; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ " + a.shape_string() + " vs " + b.shape_string());
  }
  Tensor out = Tensor::zeros(a.rows(), b.cols());
  out.matrix().noalias() = a.matrix() * b.matrix();
  require_finite(out, "matmul");
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w) {
  require_rank2(x, "linear");
  require_rank2(w, "linear");
  if (x.cols() != w.cols()) {
    throw ShapeError("linear: input width " + x.shape_string() + " vs weight " + w.shape_string());
  }
  Tensor out = Tensor::zeros(x.rows(), w.rows());
  out.matrix().noalias() = x.matrix() * w.matrix().transpose();
  require_finite(out, "linear");
  return out;
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank2(b, "affine");
  if (b.rows() != 1 || b.cols() != w.rows()) {
    throw ShapeError("affine: bias " + b.shape_string() + " does not match weight " + w.shape_string());
  }
  Tensor out = Tensor::zeros(x.rows(), w.rows());
  if (x.rank() != 2 || w.rank() != 2 || x.cols() != w.cols()) {
    throw ShapeError("affine: input " + x.shape_string() + " vs weight " + w.shape_string());
  }
  out.matrix().noalias() = x.matrix() * w.matrix().transpose();
  out.matrix().rowwise() += b.matrix().row(0);
  require_finite(out, "affine");
  return out;
}

Tensor tanh(const Tensor& a) {
  return map_unary(a, "tanh", [](double x) { return std::tanh(x); });
}

Tensor softplus(const Tensor& a) { return map_unary(a, "softplus", stable_softplus); }

Tensor sigmoid(const Tensor& a) { return map_unary(a, "sigmoid", stable_sigmoid); }

Tensor exp(const Tensor& a) {
  return map_unary(a, "exp", [](double x) { return std::exp(x); });
}

Tensor log(const Tensor& a) {
  return map_unary(a, "log", [](double x) { return std::log(x); });
}

Tensor square(const Tensor& a) {
  return map_unary(a, "square", [](double x) { return x * x; });
}

Tensor sum(const Tensor& a) {
  require_rank2(a, "sum");
  Tensor out = Tensor::scalar(a.matrix().sum());
  require_finite(out, "sum");
  return out;
}

Tensor row_sum(const Tensor& a) {
  require_rank2(a, "row_sum");
  Tensor out = Tensor::zeros(a.rows(), 1);
  out.matrix() = a.matrix().rowwise().sum();
  require_finite(out, "row_sum");
  return out;
}

Tensor mean(const Tensor& a) {
  require_rank2(a, "mean");
  if (a.size() == 0) throw ShapeError("mean of empty tensor");
  Tensor out = Tensor::scalar(a.matrix().sum() / static_cast<double>(a.size()));
  require_finite(out, "mean");
  return out;
}

Tensor concat(const Tensor& a, const Tensor& b) {
  require_rank2(a, "concat");
  require_rank2(b, "concat");
  if (a.rows() != b.rows()) {
    throw ShapeError("concat: row counts differ " + a.shape_string() + " vs " + b.shape_string());
  }
  Tensor out = Tensor::zeros(a.rows(), a.cols() + b.cols());
  out.matrix().leftCols(static_cast<Eigen::Index>(a.cols())) = a.matrix();
  out.matrix().rightCols(static_cast<Eigen::Index>(b.cols())) = b.matrix();
  return out;
}

Tensor slice(const Tensor& a, std::size_t start, std::size_t count) {
  require_rank2(a, "slice");
  if (start + count > a.cols() || count == 0) {
    throw ShapeError("slice: columns [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") out of range for " + a.shape_string());
  }
  Tensor out = Tensor::zeros(a.rows(), count);
  out.matrix() = a.matrix().middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(count));
  return out;
}

}  // namespace wflow
