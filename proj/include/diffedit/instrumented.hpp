#pragma once

#include <atomic>
#include <cstddef>

#include "diffedit/denoiser.hpp"

namespace diffedit {

// Counts denoiser evaluations of a wrapped predictor. One image row counts as
// one evaluation, so a batch of B rows adds B. Plain evaluations go to
// forward_evals(); evaluations recorded on a tape go to loss_evals().
// Counters only grow until reset(). Safe for concurrent callers.
class InstrumentedModel final : public NoisePredictor {
 public:
  explicit InstrumentedModel(const NoisePredictor& inner) : inner_(inner) {}

  const NoiseSchedule& schedule() const override { return inner_.schedule(); }
  std::size_t image_dim() const override { return inner_.image_dim(); }

  using NoisePredictor::predict_noise;
  Tensor predict_noise(const Tensor& x_t, int t) const override {
    forward_ += x_t.rank() == 2 ? x_t.dim(0) : 1;
    return inner_.predict_noise(x_t, t);
  }
  Var predict_noise(Tape& tape, std::span<const Var> params, Var x_t,
                    std::span<const int> t) const override {
    loss_ += x_t.shape().size() == 2 ? x_t.shape()[0] : 1;
    return inner_.predict_noise(tape, params, x_t, t);
  }
  std::vector<Var> bind(Tape& tape, bool trainable) const override {
    return inner_.bind(tape, trainable);
  }

  std::size_t forward_evals() const { return forward_.load(); }
  std::size_t loss_evals() const { return loss_.load(); }
  std::size_t total_evals() const { return forward_evals() + loss_evals(); }
  void reset() {
    forward_ = 0;
    loss_ = 0;
  }

 private:
  const NoisePredictor& inner_;
  mutable std::atomic<std::size_t> forward_{0};
  mutable std::atomic<std::size_t> loss_{0};
};

}  // namespace diffedit
