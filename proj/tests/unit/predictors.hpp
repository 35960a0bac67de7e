#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

#include "diffedit/denoiser.hpp"

namespace test {

// eps_theta that ignores its input and returns a fixed tensor (zero by default).
class FixedNoiseModel final : public diffedit::NoisePredictor {
 public:
  FixedNoiseModel(diffedit::NoiseSchedule schedule, std::size_t dim)
      : schedule_(std::move(schedule)), dim_(dim), noise_({1, dim}) {}
  FixedNoiseModel(diffedit::NoiseSchedule schedule, diffedit::Tensor noise)
      : schedule_(std::move(schedule)), dim_(noise.dim(1)), noise_(std::move(noise)) {}

  const diffedit::NoiseSchedule& schedule() const override { return schedule_; }
  std::size_t image_dim() const override { return dim_; }

  using diffedit::NoisePredictor::predict_noise;
  diffedit::Tensor predict_noise(const diffedit::Tensor& x_t, int) const override {
    if (noise_.shape() == x_t.shape()) return noise_;
    return diffedit::Tensor(x_t.shape());
  }
  diffedit::Var predict_noise(diffedit::Tape& tape, std::span<const diffedit::Var>,
                              diffedit::Var x_t, std::span<const int> t) const override {
    return tape.constant(predict_noise(x_t.value(), t[0]));
  }
  std::vector<diffedit::Var> bind(diffedit::Tape&, bool) const override { return {}; }

 private:
  diffedit::NoiseSchedule schedule_;
  std::size_t dim_;
  diffedit::Tensor noise_;
};

// Straight transcription of the reference PCG32 and the documented
// uniform/normal construction, kept separate from the library.
class RefPcg {
 public:
  RefPcg(std::uint64_t seed, std::uint64_t stream = 54) {
    inc_ = (stream << 1u) | 1u;
    next();
    state_ += seed;
    next();
  }
  std::uint32_t next() {
    const std::uint64_t old = state_;
    state_ = old * 6364136223846793005ULL + inc_;
    const auto xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
    const auto rot = static_cast<std::uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((-rot) & 31));
  }
  double uniform() {
    const double a = next() >> 5;
    const double b = next() >> 6;
    return (a * 67108864.0 + b) / 9007199254740992.0;
  }
  double normal() {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::uint64_t state_ = 0;
  std::uint64_t inc_ = 0;
};

}  // namespace test
