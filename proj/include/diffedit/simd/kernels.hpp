#pragma once

#include <cstddef>
#include <span>
#include <string_view>

namespace diffedit::simd {

// Inner-loop kernels over contiguous f64 arrays. Every backend must produce
// results bit-identical to the scalar reference, so the reductions below have
// a fixed association order:
//
//   lanes:  acc[l] accumulates x[i] for i = 4m + l, m = 0 .. n/4 - 1
//   fold:   (acc[0] + acc[1]) + (acc[2] + acc[3])
//   tail:   remaining n % 4 elements added left to right onto the fold
//
// Elementwise kernels are trivially order-free. No kernel may use fused
// multiply-add.
struct KernelTable {
  std::string_view name;

  // y[i] = a[i] + b[i] etc. Output may alias either input.
  void (*add)(const double* a, const double* b, double* y, std::size_t n);
  void (*sub)(const double* a, const double* b, double* y, std::size_t n);
  void (*mul)(const double* a, const double* b, double* y, std::size_t n);
  void (*div)(const double* a, const double* b, double* y, std::size_t n);
  // y[i] = s * x[i]
  void (*scale)(double s, const double* x, double* y, std::size_t n);
  // y[i] += a * x[i]
  void (*axpy)(double a, const double* x, double* y, std::size_t n);

  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*sum)(const double* x, std::size_t n);
  double (*abs_sum)(const double* x, std::size_t n);

  // Y[rows, cols] += X[rows, inner] * W[inner, cols], all row-major.
  // Each Y element accumulates over the inner index in ascending order.
  void (*gemm_acc)(const double* x, const double* w, double* y,
                   std::size_t rows, std::size_t inner, std::size_t cols);

  // One Adam step over a parameter block. bc1/bc2 are the bias corrections
  // 1 - beta1^t and 1 - beta2^t.
  void (*adam)(double* param, const double* grad, double* m, double* v,
               std::size_t n, double lr, double beta1, double beta2,
               double eps, double bc1, double bc2);
};

enum class Backend { kScalar, kAvx2 };

const KernelTable& scalar_kernels();
// nullptr when the AVX2 variant was not compiled in.
const KernelTable* avx2_kernels();

bool cpu_has_avx2();

// Active table. Chosen on first use: AVX2 when compiled and supported by the
// CPU, unless DIFFEDIT_SIMD=scalar is set in the environment.
const KernelTable& kernels();

// Force a backend (tests and benchmarks). Returns false if unavailable.
bool select_backend(Backend backend);
Backend active_backend();

}  // namespace diffedit::simd
