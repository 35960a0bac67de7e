#pragma once

#include <cstdint>

#include "diffedit/tensor.hpp"

namespace diffedit {

// PCG32 (XSH-RR, 64-bit state, 32-bit output), seeded exactly like the
// reference pcg32_srandom_r(seed, stream). The stream layout is fixed so golden
// files stay portable:
//   uniform(): a = next_u32() >> 5, b = next_u32() >> 6,
//              (a * 2^26 + b) * 2^-53                       in [0, 1)
//   normal():  u1 = 1 - uniform(), u2 = uniform(),
//              sqrt(-2 ln u1) * cos(2 pi u2)                (Box-Muller, cosine branch)
class Pcg32 {
 public:
  static constexpr std::uint64_t kDefaultStream = 54;

  explicit Pcg32(std::uint64_t seed, std::uint64_t stream = kDefaultStream);

  std::uint32_t next_u32();
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Integer in [0, bound) by rejection.
  std::uint32_t below(std::uint32_t bound);
  double normal();

  // Tensor of i.i.d. standard normals, filled in row-major order.
  Tensor normal_tensor(const Shape& shape);

 private:
  std::uint64_t state_ = 0;
  std::uint64_t inc_ = 0;
};

}  // namespace diffedit
