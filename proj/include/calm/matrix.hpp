#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace calm {

using Vec = std::vector<double>;

// Row-major dense matrix of doubles. Sized once; all entries finite is an
// invariant the optimizer enforces at update time.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  void fill(double v) { data_.assign(data_.size(), v); }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  bool operator==(const Matrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
  }

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> data_;
};

inline std::string shape_str(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

namespace detail {

// Serial reference kernels. The OpenMP variants parallelize over rows only;
// each row is the same serial dot product, so results are bit-identical.

void matvec_serial(const Matrix& W, std::span<const double> x, std::span<double> y);
void matvec_omp(const Matrix& W, std::span<const double> x, std::span<double> y);

// dx += W^T dy
void matvec_t_serial(const Matrix& W, std::span<const double> dy, std::span<double> dx);
void matvec_t_omp(const Matrix& W, std::span<const double> dy, std::span<double> dx);

// dW += dy x^T
void outer_acc_serial(std::span<const double> dy, std::span<const double> x, Matrix& dW);
void outer_acc_omp(std::span<const double> dy, std::span<const double> x, Matrix& dW);

void matmul_serial(const Matrix& A, const Matrix& B, Matrix& C);
void matmul_omp(const Matrix& A, const Matrix& B, Matrix& C);

}  // namespace detail

// y = W x. Dispatches to the OpenMP kernel for large enough row counts.
void matvec(const Matrix& W, std::span<const double> x, std::span<double> y);
// dx += W^T dy
void matvec_t_acc(const Matrix& W, std::span<const double> dy, std::span<double> dx);
// dW += dy x^T
void outer_acc(std::span<const double> dy, std::span<const double> x, Matrix& dW);
// C = A B
void matmul(const Matrix& A, const Matrix& B, Matrix& C);

inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace calm
