#include "diffedit/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>

#include "diffedit/error.hpp"
#include "diffedit/simd/kernels.hpp"

namespace diffedit {

Tensor forward_diffuse(const Tensor& x0, double alpha_bar, const Tensor& noise) {
  if (x0.shape() != noise.shape()) {
    throw ShapeError("forward_diffuse: image " + shape_string(x0.shape()) + " vs noise " +
                     shape_string(noise.shape()));
  }
  const auto& k = simd::kernels();
  Tensor out(x0.shape());
  k.scale(std::sqrt(alpha_bar), x0.data().data(), out.data().data(), x0.size());
  k.axpy(std::sqrt(1.0 - alpha_bar), noise.data().data(), out.data().data(), x0.size());
  return out;
}

LatentState ddpm_encode(const Tensor& x0, int t0, const NoiseSchedule& schedule, Pcg32& rng) {
  if (t0 < 1 || t0 > schedule.steps()) {
    throw ConfigError("ddpm_encode: t0 = " + std::to_string(t0) + " outside [1, " +
                      std::to_string(schedule.steps()) + "]");
  }
  const Tensor noise = rng.normal_tensor(x0.shape());
  return {forward_diffuse(x0, schedule.alpha_bar(t0), noise), t0, Provenance::kDdpmEncode};
}

Var x0_from_noise(Var x_t, Var eps, double alpha_bar_t) {
  return scale(sub(x_t, scale(eps, std::sqrt(1.0 - alpha_bar_t))), 1.0 / std::sqrt(alpha_bar_t));
}

Var ddim_update(Var x0, Var eps, double alpha_bar_next) {
  return add(scale(x0, std::sqrt(alpha_bar_next)), scale(eps, std::sqrt(1.0 - alpha_bar_next)));
}

Var estimate_x0(Var x_t, int t, const RecordedNoiseFn& eps, const NoiseSchedule& schedule) {
  if (t < 1 || t > schedule.steps()) {
    throw ConfigError("estimate_x0: timestep " + std::to_string(t) + " outside [1, " +
                      std::to_string(schedule.steps()) + "]");
  }
  return x0_from_noise(x_t, eps(x_t, t), schedule.alpha_bar(t));
}

Var ddim_reverse_step(Var x_t, int t, int t_prev, const RecordedNoiseFn& eps,
                      const NoiseSchedule& schedule) {
  if (!(0 <= t_prev && t_prev < t && t <= schedule.steps())) {
    throw ConfigError("ddim_reverse_step: need 0 <= t_prev < t <= T, got t = " +
                      std::to_string(t) + ", t_prev = " + std::to_string(t_prev));
  }
  const Var e = eps(x_t, t);
  return ddim_update(x0_from_noise(x_t, e, schedule.alpha_bar(t)), e,
                     schedule.alpha_bar(t_prev));
}

namespace {

// Evaluates the model outside of differentiation; the result enters the tape
// as a constant so plain and recorded paths share the same arithmetic.
RecordedNoiseFn constant_eps(Tape& tape, const NoisePredictor& model) {
  return [&tape, &model](Var x, int t) { return tape.constant(model.predict_noise(x.value(), t)); };
}

}  // namespace

Tensor estimate_x0(const NoisePredictor& model, const Tensor& x_t, int t) {
  Tape tape;
  return estimate_x0(tape.constant_ref(x_t), t, constant_eps(tape, model), model.schedule())
      .value();
}

Tensor ddim_reverse_step(const NoisePredictor& model, const Tensor& x_t, int t, int t_prev) {
  Tape tape;
  return ddim_reverse_step(tape.constant_ref(x_t), t, t_prev, constant_eps(tape, model),
                           model.schedule())
      .value();
}

LatentState ddim_encode(const NoisePredictor& model, const Tensor& x0, const StepSequence& seq) {
  if (seq.steps.empty()) throw ConfigError("ddim_encode: empty step sequence");
  const NoiseSchedule& schedule = model.schedule();
  Tensor x = x0;
  int t_cur = 0;
  for (int t_next : seq.steps) {
    if (t_next <= t_cur || t_next > schedule.steps()) {
      throw ConfigError("ddim_encode: step sequence is not increasing within [1, T]");
    }
    Tape tape;
    Var xv = tape.constant_ref(x);
    Var eps = tape.constant(model.predict_noise(x, std::max(t_cur, 1)));
    Var next = ddim_update(x0_from_noise(xv, eps, schedule.alpha_bar(t_cur)), eps,
                           schedule.alpha_bar(t_next));
    x = next.value();
    t_cur = t_next;
  }
  return {std::move(x), t_cur, Provenance::kDdimEncode};
}

Tensor ddim_decode(const NoisePredictor& model, const LatentState& state,
                   const StepSequence& seq) {
  if (seq.steps.empty()) throw ConfigError("ddim_decode: empty step sequence");
  if (state.t != seq.last()) {
    throw ConfigError("ddim_decode: latent lives at t = " + std::to_string(state.t) +
                      " but the sequence ends at " + std::to_string(seq.last()));
  }
  Tensor x = state.x;
  for (std::size_t i = seq.size(); i-- > 0;) {
    const int t = seq.steps[i];
    const int t_prev = i > 0 ? seq.steps[i - 1] : 0;
    x = ddim_reverse_step(model, x, t, t_prev);
  }
  return x;
}

Tensor ddim_sample(const NoisePredictor& model, std::size_t count, int steps, Pcg32& rng) {
  const int big_t = model.schedule().steps();
  const StepSequence seq = uniform_subsequence(model.schedule(), steps, big_t);
  LatentState state{rng.normal_tensor({count, model.image_dim()}), big_t, Provenance::kInitial};
  return ddim_decode(model, state, seq);
}

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw ShapeError("pearson: length mismatch");
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

namespace {

void check_batches(const char* what, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.rank() != 2) {
    throw ShapeError(std::string(what) + ": " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

}  // namespace

double mean_relative_l2(const Tensor& reconstructed, const Tensor& reference) {
  check_batches("mean_relative_l2", reconstructed, reference);
  const std::size_t rows = reference.dim(0);
  const std::size_t cols = reference.dim(1);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    double num = 0.0, den = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double d = reconstructed[r * cols + c] - reference[r * cols + c];
      num += d * d;
      den += reference[r * cols + c] * reference[r * cols + c];
    }
    total += std::sqrt(num) / std::sqrt(den);
  }
  return total / static_cast<double>(rows);
}

double mean_correlation(const Tensor& a, const Tensor& b) {
  check_batches("mean_correlation", a, b);
  const std::size_t rows = a.dim(0);
  const std::size_t cols = a.dim(1);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    total += pearson(a.data().subspan(r * cols, cols), b.data().subspan(r * cols, cols));
  }
  return total / static_cast<double>(rows);
}

std::string encoder_name(Encoder e) { return e == Encoder::kDdpm ? "ddpm" : "ddim"; }

std::vector<SweepRow> reconstruction_sweep(const NoisePredictor& model, const Tensor& x0_batch,
                                           std::span<const int> t0_list,
                                           const SweepSettings& settings) {
  if (t0_list.empty()) throw ConfigError("reconstruction_sweep: empty t0 list");
  if (x0_batch.rank() != 2 || x0_batch.dim(0) == 0) {
    throw ConfigError("reconstruction_sweep: empty image batch");
  }
  if (settings.ddpm_seeds < 1) throw ConfigError("reconstruction_sweep: ddpm_seeds must be >= 1");
  const NoiseSchedule& schedule = model.schedule();
  std::vector<SweepRow> rows;
  for (int t0 : t0_list) {
    const StepSequence dec = uniform_subsequence(schedule, std::min(settings.tau_dec, t0), t0);

    SweepRow ddpm{t0, Encoder::kDdpm, 0.0, 0.0, settings.ddpm_seeds};
    for (int s = 0; s < settings.ddpm_seeds; ++s) {
      Pcg32 rng(settings.seed, 1000 + static_cast<std::uint64_t>(s));
      const Tensor rec = ddim_decode(model, ddpm_encode(x0_batch, t0, schedule, rng), dec);
      ddpm.rel_l2 += mean_relative_l2(rec, x0_batch);
      ddpm.correlation += mean_correlation(rec, x0_batch);
    }
    ddpm.rel_l2 /= settings.ddpm_seeds;
    ddpm.correlation /= settings.ddpm_seeds;
    rows.push_back(ddpm);

    const StepSequence enc = uniform_subsequence(schedule, std::min(settings.tau_enc, t0), t0);
    const Tensor rec = ddim_decode(model, ddim_encode(model, x0_batch, enc), dec);
    rows.push_back({t0, Encoder::kDdim, mean_relative_l2(rec, x0_batch),
                    mean_correlation(rec, x0_batch), 1});
  }
  return rows;
}

void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "t0,encoder,rel_l2,correlation,seeds\n";
  char buf[160];
  for (const SweepRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%s,%.6f,%.6f,%d\n", r.t0, encoder_name(r.encoder).c_str(),
                  r.rel_l2, r.correlation, r.seeds);
    out << buf;
  }
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace diffedit
