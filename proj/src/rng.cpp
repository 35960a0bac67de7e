#include "diffedit/rng.hpp"

#include <cmath>
#include <numbers>

namespace diffedit {

Pcg32::Pcg32(std::uint64_t seed, std::uint64_t stream) {
  state_ = 0;
  inc_ = (stream << 1u) | 1u;
  next_u32();
  state_ += seed;
  next_u32();
}

std::uint32_t Pcg32::next_u32() {
  const std::uint64_t old = state_;
  state_ = old * 6364136223846793005ULL + inc_;
  const auto xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
  const auto rot = static_cast<std::uint32_t>(old >> 59u);
  return (xorshifted >> rot) | (xorshifted << ((-rot) & 31u));
}

double Pcg32::uniform() {
  const std::uint64_t a = next_u32() >> 5;
  const std::uint64_t b = next_u32() >> 6;
  return (static_cast<double>(a) * 67108864.0 + static_cast<double>(b)) *
         (1.0 / 9007199254740992.0);
}

std::uint32_t Pcg32::below(std::uint32_t bound) {
  const std::uint32_t threshold = (-bound) % bound;
  for (;;) {
    const std::uint32_t r = next_u32();
    if (r >= threshold) return r % bound;
  }
}

double Pcg32::normal() {
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Tensor Pcg32::normal_tensor(const Shape& shape) {
  Tensor out(shape);
  for (double& v : out.data()) v = normal();
  return out;
}

}  // namespace diffedit
