#include <atomic>
#include <cstdlib>
#include <string_view>

#include "diffedit/simd/kernels.hpp"

namespace diffedit::simd {

#ifndef DIFFEDIT_HAVE_AVX2
const KernelTable* avx2_kernels() { return nullptr; }
#endif

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

namespace {

const KernelTable* initial_table() {
  const char* env = std::getenv("DIFFEDIT_SIMD");
  if (env != nullptr && std::string_view(env) == "scalar") {
    return &scalar_kernels();
  }
  if (avx2_kernels() != nullptr && cpu_has_avx2()) return avx2_kernels();
  return &scalar_kernels();
}

std::atomic<const KernelTable*>& active() {
  static std::atomic<const KernelTable*> table{initial_table()};
  return table;
}

}  // namespace

const KernelTable& kernels() {
  return *active().load(std::memory_order_relaxed);
}

bool select_backend(Backend backend) {
  switch (backend) {
    case Backend::kScalar:
      active().store(&scalar_kernels());
      return true;
    case Backend::kAvx2:
      if (avx2_kernels() == nullptr || !cpu_has_avx2()) return false;
      active().store(avx2_kernels());
      return true;
  }
  return false;
}

Backend active_backend() {
  return active().load() == &scalar_kernels() ? Backend::kScalar
                                              : Backend::kAvx2;
}

}  // namespace diffedit::simd
