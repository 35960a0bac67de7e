#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "diffedit/autodiff.hpp"
#include "diffedit/denoiser.hpp"
#include "diffedit/rng.hpp"
#include "diffedit/schedule.hpp"
#include "diffedit/tensor.hpp"

namespace diffedit {

enum class Provenance { kInitial, kDdpmEncode, kDdimEncode, kDecodeStep };

struct LatentState {
  Tensor x;
  int t = 0;
  Provenance provenance = Provenance::kInitial;
};

// Closed-form forward diffusion: sqrt(ab) * x0 + sqrt(1 - ab) * noise.
Tensor forward_diffuse(const Tensor& x0, double alpha_bar, const Tensor& noise);

// Stochastic encode x_{t0} ~ q(x_{t0} | x0). No denoiser evaluations. Noise
// is drawn from `rng` in row-major order of x0.
LatentState ddpm_encode(const Tensor& x0, int t0, const NoiseSchedule& schedule,
                        Pcg32& rng);

// Differentiable building blocks. alpha_bar values are the cumulative
// products; every sampler below is assembled from these two.
//   x0_from_noise: (x_t - sqrt(1 - ab_t) * eps) / sqrt(ab_t)
//   ddim_update:   sqrt(ab_next) * x0 + sqrt(1 - ab_next) * eps
Var x0_from_noise(Var x_t, Var eps, double alpha_bar_t);
Var ddim_update(Var x0, Var eps, double alpha_bar_next);

// eps_theta bound to a tape (used for the fine-tuning paths).
using RecordedNoiseFn = std::function<Var(Var x_t, int t)>;

// Recorded x0 estimate at t: one evaluation of `eps`.
Var estimate_x0(Var x_t, int t, const RecordedNoiseFn& eps, const NoiseSchedule& schedule);
// Recorded DDIM step t -> t_prev (t_prev may be 0): one evaluation.
Var ddim_reverse_step(Var x_t, int t, int t_prev, const RecordedNoiseFn& eps,
                      const NoiseSchedule& schedule);

// Plain versions over a predictor; one evaluation each.
Tensor estimate_x0(const NoisePredictor& model, const Tensor& x_t, int t);
Tensor ddim_reverse_step(const NoisePredictor& model, const Tensor& x_t, int t, int t_prev);

// Deterministic DDIM inversion from t = 0 through seq (left to right). The
// hop leaving the clean image evaluates the model at timestep 1, since the
// network is only defined on [1, T]. |seq| evaluations.
LatentState ddim_encode(const NoisePredictor& model, const Tensor& x0, const StepSequence& seq);

// DDIM decode from state.t == seq.last() down through seq and finally to
// t = 0. |seq| evaluations.
Tensor ddim_decode(const NoisePredictor& model, const LatentState& state,
                   const StepSequence& seq);

// Unconditional generation: start from N(0, I) at T and decode with `steps`.
Tensor ddim_sample(const NoisePredictor& model, std::size_t count, int steps, Pcg32& rng);

// Mean over rows of ||a_r - b_r|| / ||b_r||.
double mean_relative_l2(const Tensor& reconstructed, const Tensor& reference);
// Mean over rows of the Pearson correlation between a_r and b_r.
double mean_correlation(const Tensor& a, const Tensor& b);
double pearson(std::span<const double> a, std::span<const double> b);

enum class Encoder { kDdpm, kDdim };
std::string encoder_name(Encoder e);

struct SweepRow {
  int t0 = 0;
  Encoder encoder = Encoder::kDdpm;
  double rel_l2 = 0.0;
  double correlation = 0.0;
  int seeds = 0;
};

struct SweepSettings {
  int tau_enc = 40;
  int tau_dec = 6;
  int ddpm_seeds = 8;
  std::uint64_t seed = 0;
};

// Reconstruction quality of encode -> decode round trips for each t0 and
// both encoders. Step counts are clamped to t0. The DDPM rows average over
// `ddpm_seeds` noise draws; the DDIM rows are deterministic (seeds = 1).
std::vector<SweepRow> reconstruction_sweep(const NoisePredictor& model, const Tensor& x0_batch,
                                           std::span<const int> t0_list,
                                           const SweepSettings& settings);

// CSV with header t0,encoder,rel_l2,correlation,seeds.
void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> rows);

}  // namespace diffedit
