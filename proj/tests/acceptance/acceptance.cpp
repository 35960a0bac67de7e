// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "diffedit/bench.hpp"
#include "diffedit/finetune.hpp"
#include "diffedit/instrumented.hpp"
#include "diffedit/sampler.hpp"
#include "diffedit/simd/kernels.hpp"
#include "standard_setup.hpp"

using namespace diffedit;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* pattern, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), pattern, args...);
  return buf;
}

bool non_increasing(const std::vector<double>& v) {
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[i - 1]) return false;
  }
  return true;
}

std::string join(const std::vector<double>& v, const char* pattern = "%.4f") {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : ", ") + fmt(pattern, x);
  return "[" + s + "]";
}

double r_squared(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i] / n;
    my += y[i] / n;
  }
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return syy == 0.0 ? 1.0 : sxy * sxy / (sxx * syy);
}

double max_param_diff(const DenoiserModel& a, const DenoiserModel& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < DenoiserModel::kParamCount; ++i) {
    m = std::max(m, max_abs_diff(a.parameters()[i], b.parameters()[i]));
  }
  return m;
}

// Timing ratios compare medians over this many runs; a shared core makes the
// mean of a few sub-second runs swing by 2x.
constexpr std::size_t kTimedRuns = 9;

class Acceptance {
 public:
  explicit Acceptance(const standard::Setup& s) : s_(s) {}

  // 1. Inference NFE 46 vs 6 and a wall-clock ratio within [5, 10].
  Outcome inference_ratio() const {
    const BenchSettings& b = s_.config.bench;
    EditConfig cfg;
    cfg.t0 = b.t0;
    cfg.tau_enc = b.tau_enc;
    cfg.tau_dec = b.tau_dec;
    const Tensor images = s_.heldout.batch(0, b.images);
    const auto [ours, base] = bench_inference(s_.model, images, cfg, cfg, kTimedRuns);
    const double ratio = nfe_ratio(base, ours);
    const double wall = base.ms_median / ours.ms_median;
    const bool pass = base.nfe == 46 && ours.nfe == 6 && fmt("%.2f", ratio) == "7.67" &&
                      wall >= 5.0 && wall <= 10.0;
    return {pass, fmt("NFE baseline %zu, ours %zu, ratio %.2f; wall-clock ratio %.2f (band [5, 10])",
                      base.nfe, ours.nfe, ratio, wall)};
  }

  // 2. Loss-bearing NFE per iteration ratio exactly 6, wall-clock ratio >= 3.
  Outcome training_ratio() const {
    EditConfig ours = edit_preset("brightness-shallow", s_.model.schedule().steps());
    ours.n_iter = s_.config.bench.n_iter;
    ours.tau_dec = 6;
    EditConfig base = ours;
    base.variant = Variant::kBaseline;
    const auto r = bench_training(s_.model, s_.finetune_images, {ours, base}, s_.embedder, kTimedRuns);
    const double ratio = nfe_ratio(r[1], r[0]);
    const double wall = r[1].ms_median / r[0].ms_median;
    return {ratio == 6.0 && wall >= 3.0,
            fmt("NFE per iteration baseline %zu, ours %zu, ratio %.2f; wall-clock ratio %.2f (>= 3)",
                r[1].nfe, r[0].nfe, ratio, wall)};
  }

  // 3. Baseline retained elements affine in tau_dec, single-step invariant.
  Outcome memory_scaling() const {
    const std::vector<Tensor> one(s_.finetune_images.begin(), s_.finetune_images.begin() + 1);
    auto peak = [&](Variant v, int tau) {
      EditConfig cfg = edit_preset("brightness-shallow", s_.model.schedule().steps());
      cfg.variant = v;
      cfg.tau_dec = tau;
      cfg.tau_enc = 10;
      cfg.n_iter = 1;
      Pcg32 rng(1);
      return static_cast<double>(finetune(s_.model, one, cfg, s_.embedder, rng).report.peak_elems);
    };
    std::vector<double> taus = {2, 4, 6, 8}, base, ours;
    for (double t : taus) {
      base.push_back(peak(Variant::kBaseline, static_cast<int>(t)));
      ours.push_back(peak(Variant::kSingleStep, static_cast<int>(t)));
    }
    const double r2 = r_squared(taus, base);
    const bool flat = std::all_of(ours.begin(), ours.end(), [&](double v) { return v == ours[0]; });
    return {r2 > 0.99 && flat, fmt("baseline peaks %s, R^2 %.6f; single-step peaks %s",
                                   join(base, "%.0f").c_str(), r2, join(ours, "%.0f").c_str())};
  }

  // 4. True noise inverts the closed-form encode to 1e-12.
  Outcome oracle_inversion() const {
    class TrueNoise final : public NoisePredictor {
     public:
      TrueNoise(const NoiseSchedule& s, Tensor eps) : s_(s), eps_(std::move(eps)) {}
      const NoiseSchedule& schedule() const override { return s_; }
      std::size_t image_dim() const override { return eps_.dim(1); }
      using NoisePredictor::predict_noise;
      Tensor predict_noise(const Tensor&, int) const override { return eps_; }
      Var predict_noise(Tape& tape, std::span<const Var>, Var, std::span<const int>) const override {
        return tape.constant(eps_);
      }
      std::vector<Var> bind(Tape&, bool) const override { return {}; }

     private:
      const NoiseSchedule& s_;
      Tensor eps_;
    };
    const Tensor x0 = s_.heldout.batch();
    double worst = 0.0;
    for (int t0 : {1, 100, 300, 600, 1000}) {
      Pcg32 a(40 + static_cast<std::uint64_t>(t0)), b(40 + static_cast<std::uint64_t>(t0));
      const LatentState z = ddpm_encode(x0, t0, s_.model.schedule(), a);
      const TrueNoise oracle(s_.model.schedule(), b.normal_tensor(x0.shape()));
      worst = std::max(worst, mean_relative_l2(estimate_x0(oracle, z.x, t0), x0));
    }
    return {worst < 1e-12, fmt("worst mean relative error %.3e over t0 in {1, 100, 300, 600, 1000}", worst)};
  }

  // 5. Encode with 40 steps beats 6; error decreasing over {6, 20, 40}.
  Outcome ddim_round_trip() const {
    const int t0 = s_.config.bench.t0;
    const Tensor x0 = s_.heldout.batch();
    const StepSequence dec = uniform_subsequence(s_.model.schedule(), 6, t0);
    std::vector<double> err;
    for (int k : {6, 20, 40}) {
      const StepSequence enc = uniform_subsequence(s_.model.schedule(), k, t0);
      err.push_back(mean_relative_l2(ddim_decode(s_.model, ddim_encode(s_.model, x0, enc), dec), x0));
    }
    const bool pass = err[2] < err[0] && err[1] < err[0] && err[2] < err[1];
    return {pass, fmt("t0 %d, relative L2 for encode steps {6, 20, 40}: %s", t0, join(err).c_str())};
  }

  // 6. DDPM reconstruction correlation non-increasing in t0; DDIM error <= DDPM.
  Outcome stochastic_consistency() const {
    const int big_t = s_.model.schedule().steps();
    std::vector<int> t0s;
    for (double f : {0.1, 0.3, 0.5, 0.8}) t0s.push_back(static_cast<int>(std::lround(f * big_t)));
    SweepSettings settings;
    settings.ddpm_seeds = 8;
    settings.seed = s_.config.seed;
    const auto rows = reconstruction_sweep(s_.model, s_.heldout.batch(), t0s, settings);
    std::vector<double> corr, ddpm, ddim;
    bool ddim_wins = true;
    for (std::size_t i = 0; i < rows.size(); i += 2) {
      corr.push_back(rows[i].correlation);
      ddpm.push_back(rows[i].rel_l2);
      ddim.push_back(rows[i + 1].rel_l2);
      ddim_wins = ddim_wins && rows[i + 1].rel_l2 <= rows[i].rel_l2;
    }
    return {non_increasing(corr) && ddim_wins,
            fmt("DDPM correlation %s; relative L2 DDPM %s vs DDIM %s", join(corr).c_str(),
                join(ddpm).c_str(), join(ddim).c_str())};
  }

  // 7. Estimate correlation non-increasing in t0, higher at 0.3T than at T.
  Outcome estimate_fidelity() const {
    const int big_t = s_.model.schedule().steps();
    const Tensor x0 = s_.heldout.batch();
    std::vector<double> corr;
    const std::vector<double> fractions = {0.1, 0.3, 0.5, 0.7, 1.0};
    for (double f : fractions) {
      const int t0 = static_cast<int>(std::lround(f * big_t));
      Pcg32 rng(s_.config.seed);
      const LatentState z = ddpm_encode(x0, t0, s_.model.schedule(), rng);
      corr.push_back(mean_correlation(estimate_x0(s_.model, z.x, t0), x0));
    }
    return {non_increasing(corr) && corr[1] > corr.back(),
            fmt("correlation at t0/T in {0.1, 0.3, 0.5, 0.7, 1.0}: %s", join(corr).c_str())};
  }

  // 8. Preset edits raise the oracle measure on >= 90% / >= 80% of held-out images.
  Outcome editing_efficacy() const {
    const Tensor x0 = s_.heldout.batch();
    auto run = [&](const char* preset, Attribute a) {
      EditConfig cfg = edit_preset(preset, s_.model.schedule().steps());
      cfg.seed = s_.config.seed;
      Pcg32 rng(cfg.seed);
      const FinetuneResult r = finetune_single_step(s_.model, s_.finetune_images, cfg, s_.embedder, rng);
      Pcg32 er(cfg.seed + 1);
      return standard::fraction_increased(a, edit_image(r.model, x0, cfg, er), x0);
    };
    const double bright = run("brightness-shallow", Attribute::kBrightness);
    const double size = run("size-strong", Attribute::kSize);
    return {bright >= 0.9 && size >= 0.8,
            fmt("brightness rose on %.1f%% (>= 90%%), size rose on %.1f%% (>= 80%%)", 100 * bright,
                100 * size)};
  }

  // 9. Mean pixel L1 change non-increasing in lambda over {0.1, 0.5, 2.0}.
  Outcome identity_preservation() const {
    const Tensor x0 = s_.heldout.batch();
    std::vector<double> l1;
    for (double lambda : {0.1, 0.5, 2.0}) {
      EditConfig cfg = edit_preset("brightness-shallow", s_.model.schedule().steps());
      cfg.lambda = lambda;
      cfg.seed = s_.config.seed;
      Pcg32 rng(cfg.seed);
      const FinetuneResult r = finetune_single_step(s_.model, s_.finetune_images, cfg, s_.embedder, rng);
      Pcg32 er(cfg.seed + 1);
      const Tensor y = edit_image(r.model, x0, cfg, er);
      double sum = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) sum += std::fabs(y[i] - x0[i]);
      l1.push_back(sum / static_cast<double>(y.size()));
    }
    return {non_increasing(l1), fmt("mean |edited - source| for lambda {0.1, 0.5, 2.0}: %s",
                                    join(l1).c_str())};
  }

  // 10. One-step baseline and single-step agree on shared DDIM latents.
  Outcome variant_agreement() const {
    EditConfig cfg = edit_preset("brightness-shallow", s_.model.schedule().steps());
    cfg.tau_dec = 1;
    cfg.n_iter = 2;
    const StepSequence enc = uniform_subsequence(s_.model.schedule(), cfg.tau_enc, cfg.t0);
    std::vector<Tensor> latents;
    for (const Tensor& x : s_.finetune_images) latents.push_back(ddim_encode(s_.model, x, enc).x);
    cfg.variant = Variant::kBaseline;
    Pcg32 r1(1), r2(1);
    const FinetuneResult base = finetune_from_latents(s_.model, s_.finetune_images, latents, cfg, s_.embedder, r1);
    cfg.variant = Variant::kSingleStep;
    const FinetuneResult ours = finetune_from_latents(s_.model, s_.finetune_images, latents, cfg, s_.embedder, r2);
    const double diff = max_param_diff(base.model, ours.model);
    const double moved = max_param_diff(base.model, s_.model);
    return {diff <= 1e-12 && moved > 0.0,
            fmt("max parameter difference %.3e (update size %.3e)", diff, moved)};
  }

  // 11. grad_check of the full objective through estimate_x0 and the embedder.
  Outcome numerical_core() const {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Pcg32 rng(500 + seed);
      const Tensor& src = s_.heldout.images[seed];
      const int t0 = 100 + static_cast<int>(rng.below(500));
      const Tensor x_t = ddpm_encode(src, t0, s_.model.schedule(), rng).x;
      const double lambda = rng.uniform(0.1, 1.0) / static_cast<double>(src.size());
      const std::size_t slot = seed % 2 == 0 ? 7 : 5;  // output bias, last hidden bias
      const RecordedFn fn = [&](Tape& tape, Var w) {
        std::vector<Var> params = s_.model.bind(tape, false);
        params[slot] = w;
        const RecordedNoiseFn eps = [&](Var x, int t) {
          return s_.model.predict_noise(tape, params, x, t);
        };
        Var x0 = estimate_x0(tape.constant_ref(x_t), t0, eps, s_.model.schedule());
        return total_loss(tape, x0, src, "brightness:increase", "brightness:base", lambda, s_.embedder)
            .total;
      };
      const double err = grad_check(fn, s_.model.parameters()[slot], 1e-5);
      worst = std::max(worst, err);
    }
    return {worst < 1e-5, fmt("worst max relative error %.3e over 10 seeds", worst)};
  }

  // 12. Directional loss at 0 / 1 / 2 and scale-free in the text direction.
  Outcome loss_trivial_values() const {
    const Embedder& e = s_.embedder;
    const Tensor& src = s_.heldout.images[0];
    const Tensor v = e.embed_attribute("brightness:increase");
    // Image-space steps whose embeddings are +v, v-orthogonal and -v.
    const Tensor& pt = e.projection_t();
    const std::size_t d = e.dim();
    const std::size_t n = e.image_dim();
    auto preimage = [&](const Tensor& target) {
      // Minimum-norm solution of P delta = target via a few conjugate-gradient
      // steps on P P^T y = target (P has unit rows, so P P^T is well conditioned).
      Tensor y({d});
      Tensor r = target, p = target;
      auto ppt = [&](const Tensor& q) {
        Tensor img({n}), out({d});
        for (std::size_t j = 0; j < n; ++j) {
          for (std::size_t i = 0; i < d; ++i) img[j] += pt[j * d + i] * q[i];
        }
        for (std::size_t j = 0; j < n; ++j) {
          for (std::size_t i = 0; i < d; ++i) out[i] += pt[j * d + i] * img[j];
        }
        return out;
      };
      auto dotv = [](const Tensor& a, const Tensor& b) {
        double s = 0;
        for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
        return s;
      };
      double rr = dotv(r, r);
      for (int it = 0; it < 200 && rr > 1e-30; ++it) {
        const Tensor ap = ppt(p);
        const double alpha = rr / dotv(p, ap);
        for (std::size_t i = 0; i < d; ++i) {
          y[i] += alpha * p[i];
          r[i] -= alpha * ap[i];
        }
        const double next = dotv(r, r);
        for (std::size_t i = 0; i < d; ++i) p[i] = r[i] + next / rr * p[i];
        rr = next;
      }
      Tensor delta({1, n});
      for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < d; ++i) delta[j] += pt[j * d + i] * y[i];
      }
      return delta;
    };
    auto shifted = [&](const Tensor& delta, double k) {
      Tensor x = src;
      for (std::size_t i = 0; i < n; ++i) x[i] += k * delta[i];
      return x;
    };
    Tensor ortho = e.embed_attribute("size:increase");
    double proj = 0;
    for (std::size_t i = 0; i < d; ++i) proj += ortho[i] * v[i];
    for (std::size_t i = 0; i < d; ++i) ortho[i] -= proj * v[i];
    const Tensor up = preimage(v);
    const double l_par = directional_loss(shifted(up, 1.0), src, "brightness:increase", "brightness:base", e);
    const double l_orth = directional_loss(shifted(preimage(ortho), 1.0), src, "brightness:increase", "brightness:base", e);
    const double l_anti = directional_loss(shifted(up, -1.0), src, "brightness:increase", "brightness:base", e);
    const bool values = std::fabs(l_par) < 1e-6 && std::fabs(l_orth - 1.0) < 1e-6 &&
                        std::fabs(l_anti - 2.0) < 1e-6;

    // Scale invariance over image directions between held-out pairs. The cosine
    // itself must not move; the loss may move only by what the 1e-8 guard in its
    // denominator contributes, eps * |cos| * (1/(|T||I|) - 1/(k|T||I|)).
    const auto& kern = simd::kernels();
    auto norm = [&](const Tensor& x) { return std::sqrt(kern.dot(x.data().data(), x.data().data(), x.size())); };
    double cos_drift = 0.0, loss_drift = 0.0, excess = 0.0;
    for (std::size_t i = 0; i + 1 < s_.heldout.size(); i += 2) {
      Tensor di = e.embed_image(s_.heldout.images[i]);
      const Tensor dj = e.embed_image(s_.heldout.images[i + 1]);
      for (std::size_t k = 0; k < d; ++k) di[k] -= dj[k];
      const double in = norm(di);
      const double ref_cos = kern.dot(v.data().data(), di.data().data(), d) / (norm(v) * in);
      const double ref_loss = cosine_distance(v, di);
      for (double k : {2.0, 10.0, 1e3}) {
        Tensor kv = v;
        for (double& x : kv.data()) x *= k;
        const double cos_k = kern.dot(kv.data().data(), di.data().data(), d) / (norm(kv) * in);
        cos_drift = std::max(cos_drift, std::fabs(cos_k - ref_cos));
        const double drift = std::fabs(cosine_distance(kv, di) - ref_loss);
        const double guard = kCosineEps * std::fabs(ref_cos) * (1.0 / in - 1.0 / (k * in));
        loss_drift = std::max(loss_drift, drift);
        excess = std::max(excess, std::fabs(drift - guard));
      }
    }
    return {values && cos_drift < 1e-9 && excess < 1e-9,
            fmt("parallel %.2e, orthogonal %.9f, antiparallel %.9f; cosine drift %.2e, loss drift "
                "%.2e (guard term accounts for all but %.2e)",
                l_par, l_orth, l_anti, cos_drift, loss_drift, excess)};
  }

 private:
  const standard::Setup& s_;
};

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<Outcome()> run;
};

}  // namespace

int main() {
  const auto t_load = std::chrono::steady_clock::now();
  const standard::Setup setup = standard::load(DIFFEDIT_TEST_DATA);
  const double load_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_load).count();
  std::printf("setup: committed checkpoint and default data splits loaded in %.1f s\n", load_s);
  const Acceptance a(setup);
  const std::vector<Criterion> criteria = {
      {1, "inference NFE ratio", 10, [&] { return a.inference_ratio(); }},
      {2, "training NFE ratio", 60, [&] { return a.training_ratio(); }},
      {3, "memory scaling", 120, [&] { return a.memory_scaling(); }},
      {4, "perfect-oracle inversion", 1, [&] { return a.oracle_inversion(); }},
      {5, "DDIM round-trip fidelity", 30, [&] { return a.ddim_round_trip(); }},
      {6, "stochastic-encoding consistency", 120, [&] { return a.stochastic_consistency(); }},
      {7, "single-step estimate fidelity", 30, [&] { return a.estimate_fidelity(); }},
      {8, "editing efficacy", 180, [&] { return a.editing_efficacy(); }},
      {9, "identity preservation", 300, [&] { return a.identity_preservation(); }},
      {10, "variant agreement", 5, [&] { return a.variant_agreement(); }},
      {11, "numerical core", 10, [&] { return a.numerical_core(); }},
      {12, "loss trivial values", 60, [&] { return a.loss_trivial_values(); }},
  };
  int failures = 0;
  for (const Criterion& c : criteria) {
    const auto t = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
    const bool in_time = secs < c.budget_s;
    const bool pass = o.pass && in_time;
    failures += pass ? 0 : 1;
    std::printf("criterion %2d %-32s %s  %s; %.2f s (limit %.0f s)%s\n", c.id, c.name,
                pass ? "PASS" : "FAIL", o.detail.c_str(), secs, c.budget_s,
                in_time ? "" : " over time limit");
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures,
              criteria.size());
  return failures == 0 ? 0 : 1;
}
