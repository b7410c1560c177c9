#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace nodeselect {

// Counts bytes held by live DenseMatrix buffers on the calling thread.
// Bench cells run one per thread, so the peak is a per-cell figure.
class AllocTracker {
public:
  static void add(std::size_t bytes) noexcept;
  static void remove(std::size_t bytes) noexcept;
  static std::size_t current() noexcept;
  static std::size_t peak() noexcept;
  // Peak restarts from the current live total.
  static void reset_peak() noexcept;
};

class ShapeError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

// Row-major dense matrix of doubles.
class DenseMatrix {
public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  DenseMatrix(const DenseMatrix& other);
  DenseMatrix(DenseMatrix&& other) noexcept;
  DenseMatrix& operator=(const DenseMatrix& other);
  DenseMatrix& operator=(DenseMatrix&& other) noexcept;
  ~DenseMatrix();

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  void fill(double v);
  DenseMatrix transposed() const;

  bool operator==(const DenseMatrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_ && data_ == other.data_;
  }

private:
  void track() noexcept;
  void untrack() noexcept;

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
  std::size_t tracked_ = 0;
};

// Trainable matrix with its accumulated gradient.
struct Param {
  DenseMatrix value;
  DenseMatrix grad;

  Param() = default;
  explicit Param(DenseMatrix v) : value(std::move(v)), grad(value.rows(), value.cols()) {}
  Param(std::size_t rows, std::size_t cols) : value(rows, cols), grad(rows, cols) {}

  void zero_grad() { grad.fill(0.0); }
  std::size_t size() const noexcept { return value.size(); }
};

// out = a * b
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
// out = a * b^T
DenseMatrix matmul_bt(const DenseMatrix& a, const DenseMatrix& b);
// out = a^T * b
DenseMatrix matmul_at(const DenseMatrix& a, const DenseMatrix& b);

// Backward of matmul given upstream gradient G: grad_a = G b^T, grad_b = a^T G.
struct MatmulGrads {
  DenseMatrix grad_a;
  DenseMatrix grad_b;
};
MatmulGrads matmul_backward(const DenseMatrix& a, const DenseMatrix& b, const DenseMatrix& upstream);

void add_inplace(DenseMatrix& dst, const DenseMatrix& src);
void scale_inplace(DenseMatrix& m, double factor);
DenseMatrix add(const DenseMatrix& a, const DenseMatrix& b);

double dot(std::span<const double> a, std::span<const double> b);

void require_shape(const DenseMatrix& m, std::size_t rows, std::size_t cols, const std::string& what);

}  // namespace nodeselect
