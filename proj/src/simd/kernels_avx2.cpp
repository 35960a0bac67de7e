// Compiled with -mavx2 (and without -mfma). Only reached after a runtime CPU
// check in dispatch.cpp.
#include "diffedit/simd/kernels.hpp"

#include <immintrin.h>

#include <cmath>

namespace diffedit::simd {
namespace {

template <typename Op, typename ScalarOp>
inline void binary(const double* a, const double* b, double* y, std::size_t n,
                   Op op, ScalarOp scalar_op) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d va = _mm256_loadu_pd(a + i);
    const __m256d vb = _mm256_loadu_pd(b + i);
    _mm256_storeu_pd(y + i, op(va, vb));
  }
  for (; i < n; ++i) y[i] = scalar_op(a[i], b[i]);
}

void add(const double* a, const double* b, double* y, std::size_t n) {
  binary(a, b, y, n, [](__m256d p, __m256d q) { return _mm256_add_pd(p, q); },
         [](double p, double q) { return p + q; });
}

void sub(const double* a, const double* b, double* y, std::size_t n) {
  binary(a, b, y, n, [](__m256d p, __m256d q) { return _mm256_sub_pd(p, q); },
         [](double p, double q) { return p - q; });
}

void mul(const double* a, const double* b, double* y, std::size_t n) {
  binary(a, b, y, n, [](__m256d p, __m256d q) { return _mm256_mul_pd(p, q); },
         [](double p, double q) { return p * q; });
}

void div(const double* a, const double* b, double* y, std::size_t n) {
  binary(a, b, y, n, [](__m256d p, __m256d q) { return _mm256_div_pd(p, q); },
         [](double p, double q) { return p / q; });
}

void scale(double s, const double* x, double* y, std::size_t n) {
  const __m256d vs = _mm256_set1_pd(s);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_mul_pd(vs, _mm256_loadu_pd(x + i)));
  }
  for (; i < n; ++i) y[i] = s * x[i];
}

void axpy(double a, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d prod = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

inline double fold(__m256d acc) {
  alignas(32) double lane[4];
  _mm256_store_pd(lane, acc);
  return (lane[0] + lane[1]) + (lane[2] + lane[3]);
}

double dot(const double* a, const double* b, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  const std::size_t body = n - n % 4;
  for (std::size_t i = 0; i < body; i += 4) {
    acc = _mm256_add_pd(
        acc, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  }
  double total = fold(acc);
  for (std::size_t i = body; i < n; ++i) total += a[i] * b[i];
  return total;
}

double sum(const double* x, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  const std::size_t body = n - n % 4;
  for (std::size_t i = 0; i < body; i += 4) {
    acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  }
  double total = fold(acc);
  for (std::size_t i = body; i < n; ++i) total += x[i];
  return total;
}

double abs_sum(const double* x, std::size_t n) {
  const __m256d sign_mask = _mm256_set1_pd(-0.0);
  __m256d acc = _mm256_setzero_pd();
  const std::size_t body = n - n % 4;
  for (std::size_t i = 0; i < body; i += 4) {
    acc = _mm256_add_pd(acc, _mm256_andnot_pd(sign_mask, _mm256_loadu_pd(x + i)));
  }
  double total = fold(acc);
  for (std::size_t i = body; i < n; ++i) total += std::fabs(x[i]);
  return total;
}

void gemm_acc(const double* x, const double* w, double* y, std::size_t rows,
              std::size_t inner, std::size_t cols) {
  const std::size_t body = cols - cols % 4;
  for (std::size_t r = 0; r < rows; ++r) {
    double* yr = y + r * cols;
    const double* xr = x + r * inner;
    // Blocks of 16 output columns kept in registers across the inner loop.
    std::size_t c = 0;
    for (; c + 16 <= cols; c += 16) {
      __m256d y0 = _mm256_loadu_pd(yr + c);
      __m256d y1 = _mm256_loadu_pd(yr + c + 4);
      __m256d y2 = _mm256_loadu_pd(yr + c + 8);
      __m256d y3 = _mm256_loadu_pd(yr + c + 12);
      for (std::size_t k = 0; k < inner; ++k) {
        const __m256d a = _mm256_set1_pd(xr[k]);
        const double* wk = w + k * cols + c;
        y0 = _mm256_add_pd(y0, _mm256_mul_pd(a, _mm256_loadu_pd(wk)));
        y1 = _mm256_add_pd(y1, _mm256_mul_pd(a, _mm256_loadu_pd(wk + 4)));
        y2 = _mm256_add_pd(y2, _mm256_mul_pd(a, _mm256_loadu_pd(wk + 8)));
        y3 = _mm256_add_pd(y3, _mm256_mul_pd(a, _mm256_loadu_pd(wk + 12)));
      }
      _mm256_storeu_pd(yr + c, y0);
      _mm256_storeu_pd(yr + c + 4, y1);
      _mm256_storeu_pd(yr + c + 8, y2);
      _mm256_storeu_pd(yr + c + 12, y3);
    }
    for (; c < body; c += 4) {
      __m256d acc = _mm256_loadu_pd(yr + c);
      for (std::size_t k = 0; k < inner; ++k) {
        const __m256d a = _mm256_set1_pd(xr[k]);
        acc = _mm256_add_pd(acc, _mm256_mul_pd(a, _mm256_loadu_pd(w + k * cols + c)));
      }
      _mm256_storeu_pd(yr + c, acc);
    }
    for (; c < cols; ++c) {
      double acc = yr[c];
      for (std::size_t k = 0; k < inner; ++k) acc += xr[k] * w[k * cols + c];
      yr[c] = acc;
    }
  }
}

void adam(double* param, const double* grad, double* m, double* v,
          std::size_t n, double lr, double beta1, double beta2, double eps,
          double bc1, double bc2) {
  const __m256d vb1 = _mm256_set1_pd(beta1);
  const __m256d vb2 = _mm256_set1_pd(beta2);
  const __m256d v1b1 = _mm256_set1_pd(1.0 - beta1);
  const __m256d v1b2 = _mm256_set1_pd(1.0 - beta2);
  const __m256d vbc1 = _mm256_set1_pd(bc1);
  const __m256d vbc2 = _mm256_set1_pd(bc2);
  const __m256d vlr = _mm256_set1_pd(lr);
  const __m256d veps = _mm256_set1_pd(eps);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d g = _mm256_loadu_pd(grad + i);
    __m256d mi = _mm256_loadu_pd(m + i);
    __m256d vi = _mm256_loadu_pd(v + i);
    mi = _mm256_add_pd(_mm256_mul_pd(vb1, mi), _mm256_mul_pd(v1b1, g));
    vi = _mm256_add_pd(_mm256_mul_pd(vb2, vi),
                       _mm256_mul_pd(v1b2, _mm256_mul_pd(g, g)));
    _mm256_storeu_pd(m + i, mi);
    _mm256_storeu_pd(v + i, vi);
    const __m256d m_hat = _mm256_div_pd(mi, vbc1);
    const __m256d v_hat = _mm256_div_pd(vi, vbc2);
    const __m256d step = _mm256_mul_pd(
        vlr, _mm256_div_pd(m_hat, _mm256_add_pd(_mm256_sqrt_pd(v_hat), veps)));
    _mm256_storeu_pd(param + i, _mm256_sub_pd(_mm256_loadu_pd(param + i), step));
  }
  const double one_minus_b1 = 1.0 - beta1;
  const double one_minus_b2 = 1.0 - beta2;
  for (; i < n; ++i) {
    const double g = grad[i];
    m[i] = beta1 * m[i] + one_minus_b1 * g;
    v[i] = beta2 * v[i] + one_minus_b2 * (g * g);
    param[i] -= lr * ((m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps));
  }
}

}  // namespace

const KernelTable* avx2_kernels() {
  static const KernelTable table{
      "avx2", add, sub, mul, div, scale, axpy, dot, sum, abs_sum, gemm_acc,
      adam};
  return &table;
}

}  // namespace diffedit::simd
