#include "nodeselect/matrix.hpp"

#include <algorithm>
#include <utility>

namespace nodeselect {

namespace {
thread_local std::size_t tl_current = 0;
thread_local std::size_t tl_peak = 0;
}  // namespace

void AllocTracker::add(std::size_t bytes) noexcept {
  tl_current += bytes;
  tl_peak = std::max(tl_peak, tl_current);
}
void AllocTracker::remove(std::size_t bytes) noexcept { tl_current -= std::min(bytes, tl_current); }
std::size_t AllocTracker::current() noexcept { return tl_current; }
std::size_t AllocTracker::peak() noexcept { return tl_peak; }
void AllocTracker::reset_peak() noexcept { tl_peak = tl_current; }

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {
  track();
}

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("DenseMatrix: data length " + std::to_string(data_.size()) + " != " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
  track();
}

DenseMatrix::DenseMatrix(const DenseMatrix& other)
    : rows_(other.rows_), cols_(other.cols_), data_(other.data_) {
  track();
}

DenseMatrix::DenseMatrix(DenseMatrix&& other) noexcept
    : rows_(other.rows_), cols_(other.cols_), data_(std::move(other.data_)), tracked_(other.tracked_) {
  other.rows_ = other.cols_ = 0;
  other.data_.clear();
  other.tracked_ = 0;
}

DenseMatrix& DenseMatrix::operator=(const DenseMatrix& other) {
  if (this != &other) {
    untrack();
    rows_ = other.rows_;
    cols_ = other.cols_;
    data_ = other.data_;
    track();
  }
  return *this;
}

DenseMatrix& DenseMatrix::operator=(DenseMatrix&& other) noexcept {
  if (this != &other) {
    untrack();
    rows_ = other.rows_;
    cols_ = other.cols_;
    data_ = std::move(other.data_);
    tracked_ = other.tracked_;
    other.rows_ = other.cols_ = 0;
    other.data_.clear();
    other.tracked_ = 0;
  }
  return *this;
}

DenseMatrix::~DenseMatrix() { untrack(); }

void DenseMatrix::track() noexcept {
  tracked_ = data_.size() * sizeof(double);
  AllocTracker::add(tracked_);
}

void DenseMatrix::untrack() noexcept {
  AllocTracker::remove(tracked_);
  tracked_ = 0;
}

void DenseMatrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

DenseMatrix DenseMatrix::transposed() const {
  DenseMatrix out(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) out(c, r) = (*this)(r, c);
  return out;
}

void require_shape(const DenseMatrix& m, std::size_t rows, std::size_t cols, const std::string& what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw ShapeError(what + ": expected " + std::to_string(rows) + "x" + std::to_string(cols) + ", got " +
                     std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
  }
}

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions differ");
  DenseMatrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto orow = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

DenseMatrix matmul_bt(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.cols()) throw ShapeError("matmul_bt: inner dimensions differ");
  DenseMatrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(a.row(i), b.row(j));
  return out;
}

DenseMatrix matmul_at(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows() != b.rows()) throw ShapeError("matmul_at: inner dimensions differ");
  DenseMatrix out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    auto arow = a.row(k);
    auto brow = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = arow[i];
      if (aki == 0.0) continue;
      auto orow = out.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aki * brow[j];
    }
  }
  return out;
}

MatmulGrads matmul_backward(const DenseMatrix& a, const DenseMatrix& b, const DenseMatrix& upstream) {
  require_shape(upstream, a.rows(), b.cols(), "matmul_backward upstream");
  return {matmul_bt(upstream, b), matmul_at(a, upstream)};
}

void add_inplace(DenseMatrix& dst, const DenseMatrix& src) {
  require_shape(src, dst.rows(), dst.cols(), "add_inplace");
  auto& d = dst.data();
  const auto& s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

void scale_inplace(DenseMatrix& m, double factor) {
  for (double& v : m.data()) v *= factor;
}

DenseMatrix add(const DenseMatrix& a, const DenseMatrix& b) {
  DenseMatrix out = a;
  add_inplace(out, b);
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace nodeselect
