#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include "diffedit/tensor.hpp"

namespace test {

inline std::filesystem::path data_dir() { return DIFFEDIT_TEST_DATA; }

// Fresh, empty scratch directory under the build tree.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const std::filesystem::path p = std::filesystem::path(DIFFEDIT_TEST_SCRATCH) / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// Test-side randomness, independent of the library's generator.
inline diffedit::Tensor random_tensor(const diffedit::Shape& shape, unsigned seed, double lo = -1.0,
                                      double hi = 1.0) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  diffedit::Tensor t(shape);
  for (double& v : t.data()) v = dist(gen);
  return t;
}

inline double rel_err(double a, double b) {
  return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), 1e-300});
}

}  // namespace test
