#include "calm/matrix.hpp"

#include "calm/parallel.hpp"

namespace calm {

namespace {

void check_matvec(const Matrix& W, std::size_t xn, std::size_t yn) {
  if (W.cols() != xn || W.rows() != yn) {
    throw std::invalid_argument("matvec: shape mismatch, W=" + shape_str(W.rows(), W.cols()) +
                                " x=" + std::to_string(xn) + " y=" + std::to_string(yn));
  }
}

}  // namespace

namespace detail {

void matvec_serial(const Matrix& W, std::span<const double> x, std::span<double> y) {
  for (std::size_t r = 0; r < W.rows(); ++r) {
    y[r] = dot(W.row(r), x);
  }
}

void matvec_omp(const Matrix& W, std::span<const double> x, std::span<double> y) {
  par::parallel_for(W.rows(), [&](std::size_t r) { y[r] = dot(W.row(r), x); });
}

void matvec_t_serial(const Matrix& W, std::span<const double> dy, std::span<double> dx) {
  for (std::size_t c = 0; c < W.cols(); ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < W.rows(); ++r) s += W(r, c) * dy[r];
    dx[c] += s;
  }
}

void matvec_t_omp(const Matrix& W, std::span<const double> dy, std::span<double> dx) {
  par::parallel_for(W.cols(), [&](std::size_t c) {
    double s = 0.0;
    for (std::size_t r = 0; r < W.rows(); ++r) s += W(r, c) * dy[r];
    dx[c] += s;
  });
}

void outer_acc_serial(std::span<const double> dy, std::span<const double> x, Matrix& dW) {
  for (std::size_t r = 0; r < dW.rows(); ++r) {
    axpy(dy[r], x, dW.row(r));
  }
}

void outer_acc_omp(std::span<const double> dy, std::span<const double> x, Matrix& dW) {
  par::parallel_for(dW.rows(), [&](std::size_t r) { axpy(dy[r], x, dW.row(r)); });
}

void matmul_serial(const Matrix& A, const Matrix& B, Matrix& C) {
  C.fill(0.0);
  for (std::size_t i = 0; i < A.rows(); ++i) {
    for (std::size_t k = 0; k < A.cols(); ++k) {
      double a = A(i, k);
      if (a == 0.0) continue;
      const auto brow = B.row(k);
      auto crow = C.row(i);
      for (std::size_t j = 0; j < B.cols(); ++j) crow[j] += a * brow[j];
    }
  }
}

void matmul_omp(const Matrix& A, const Matrix& B, Matrix& C) {
  par::parallel_for(A.rows(), [&](std::size_t i) {
    auto crow = C.row(i);
    for (std::size_t j = 0; j < B.cols(); ++j) crow[j] = 0.0;
    for (std::size_t k = 0; k < A.cols(); ++k) {
      double a = A(i, k);
      if (a == 0.0) continue;
      const auto brow = B.row(k);
      for (std::size_t j = 0; j < B.cols(); ++j) crow[j] += a * brow[j];
    }
  });
}

}  // namespace detail

void matvec(const Matrix& W, std::span<const double> x, std::span<double> y) {
  check_matvec(W, x.size(), y.size());
  detail::matvec_omp(W, x, y);
}

void matvec_t_acc(const Matrix& W, std::span<const double> dy, std::span<double> dx) {
  check_matvec(W, dx.size(), dy.size());
  detail::matvec_t_omp(W, dy, dx);
}

void outer_acc(std::span<const double> dy, std::span<const double> x, Matrix& dW) {
  if (dW.rows() != dy.size() || dW.cols() != x.size()) {
    throw std::invalid_argument("outer_acc: shape mismatch, dW=" + shape_str(dW.rows(), dW.cols()) +
                                " dy=" + std::to_string(dy.size()) + " x=" + std::to_string(x.size()));
  }
  detail::outer_acc_omp(dy, x, dW);
}

void matmul(const Matrix& A, const Matrix& B, Matrix& C) {
  if (A.cols() != B.rows() || C.rows() != A.rows() || C.cols() != B.cols()) {
    throw std::invalid_argument("matmul: shape mismatch, A=" + shape_str(A.rows(), A.cols()) +
                                " B=" + shape_str(B.rows(), B.cols()) +
                                " C=" + shape_str(C.rows(), C.cols()));
  }
  detail::matmul_omp(A, B, C);
}

}  // namespace calm
