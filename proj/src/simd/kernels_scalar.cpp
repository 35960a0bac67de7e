#include "diffedit/simd/kernels.hpp"

#include <cmath>

namespace diffedit::simd {
namespace {

void add(const double* a, const double* b, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

void sub(const double* a, const double* b, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = a[i] - b[i];
}

void mul(const double* a, const double* b, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}

void div(const double* a, const double* b, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = a[i] / b[i];
}

void scale(double s, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = s * x[i];
}

void axpy(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

// Four interleaved accumulators; see the ordering contract in kernels.hpp.
template <typename Term>
double lane_reduce(std::size_t n, Term term) {
  double acc[4] = {0.0, 0.0, 0.0, 0.0};
  const std::size_t body = n - n % 4;
  for (std::size_t i = 0; i < body; i += 4) {
    acc[0] += term(i);
    acc[1] += term(i + 1);
    acc[2] += term(i + 2);
    acc[3] += term(i + 3);
  }
  double total = (acc[0] + acc[1]) + (acc[2] + acc[3]);
  for (std::size_t i = body; i < n; ++i) total += term(i);
  return total;
}

double dot(const double* a, const double* b, std::size_t n) {
  return lane_reduce(n, [&](std::size_t i) { return a[i] * b[i]; });
}

double sum(const double* x, std::size_t n) {
  return lane_reduce(n, [&](std::size_t i) { return x[i]; });
}

double abs_sum(const double* x, std::size_t n) {
  return lane_reduce(n, [&](std::size_t i) { return std::fabs(x[i]); });
}

void gemm_acc(const double* x, const double* w, double* y, std::size_t rows,
              std::size_t inner, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    double* yr = y + r * cols;
    for (std::size_t k = 0; k < inner; ++k) {
      const double a = x[r * inner + k];
      const double* wk = w + k * cols;
      for (std::size_t c = 0; c < cols; ++c) yr[c] += a * wk[c];
    }
  }
}

void adam(double* param, const double* grad, double* m, double* v,
          std::size_t n, double lr, double beta1, double beta2, double eps,
          double bc1, double bc2) {
  const double one_minus_b1 = 1.0 - beta1;
  const double one_minus_b2 = 1.0 - beta2;
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grad[i];
    m[i] = beta1 * m[i] + one_minus_b1 * g;
    v[i] = beta2 * v[i] + one_minus_b2 * (g * g);
    const double m_hat = m[i] / bc1;
    const double v_hat = v[i] / bc2;
    param[i] -= lr * (m_hat / (std::sqrt(v_hat) + eps));
  }
}

}  // namespace

const KernelTable& scalar_kernels() {
  static const KernelTable table{
      "scalar", add, sub, mul, div, scale, axpy, dot, sum, abs_sum, gemm_acc,
      adam};
  return table;
}

}  // namespace diffedit::simd
