#include "diffedit/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <json.hpp>

#include "diffedit/error.hpp"
#include "diffedit/sampler.hpp"

namespace diffedit {

namespace {

using Clock = std::chrono::steady_clock;

// Keeps freed heap pages mapped so repeated parameter-sized allocations do not
// page-fault on every run; otherwise the fixed per-step cost swamps the NFE
// difference being measured.
void retain_heap_pages() {
#if defined(__GLIBC__)
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 1024 * 1024 * 1024);
    return true;
  }();
  (void)done;
#endif
}

void fill_timing(BenchReport& r, std::vector<double> ms) {
  r.runs = ms.size();
  double mean = 0.0;
  for (double v : ms) mean += v;
  mean /= static_cast<double>(ms.size());
  r.ms_mean = mean;
  if (ms.size() >= 2) {
    double ss = 0.0;
    for (double v : ms) ss += (v - mean) * (v - mean);
    r.ms_std = std::sqrt(ss / static_cast<double>(ms.size() - 1));
  }
  std::sort(ms.begin(), ms.end());
  const std::size_t m = ms.size() / 2;
  r.ms_median = ms.size() % 2 == 1 ? ms[m] : 0.5 * (ms[m - 1] + ms[m]);
}

// Returns per-run milliseconds; the first (warm-up) call is not recorded.
std::vector<double> timed_runs(std::size_t runs, const std::function<void()>& body) {
  body();
  std::vector<double> ms;
  for (std::size_t r = 0; r < runs; ++r) {
    const auto start = Clock::now();
    body();
    ms.push_back(std::chrono::duration<double, std::milli>(Clock::now() - start).count());
  }
  return ms;
}

BenchReport make_report(std::string scenario, std::string variant, int tau_enc, int tau_dec) {
  BenchReport r;
  r.scenario = std::move(scenario);
  r.variant = std::move(variant);
  r.tau_enc = tau_enc;
  r.tau_dec = tau_dec;
  return r;
}

}  // namespace

std::pair<BenchReport, BenchReport> bench_inference(const NoisePredictor& model,
                                                    const Tensor& images,
                                                    const EditConfig& cfg_ours,
                                                    const EditConfig& cfg_baseline,
                                                    std::size_t runs) {
  if (runs < 1) throw ConfigError("bench_inference: runs must be >= 1");
  retain_heap_pages();
  if (images.rank() != 2 || images.dim(0) == 0) {
    throw ConfigError("bench_inference: images must be a non-empty {B, D} batch");
  }
  const NoiseSchedule& schedule = model.schedule();
  const int big_t = schedule.steps();
  for (const EditConfig* c : {&cfg_ours, &cfg_baseline}) {
    if (!(1 <= c->tau_dec && c->tau_dec <= c->t0 && c->t0 <= big_t)) {
      throw ConfigError("bench_inference: need 1 <= tau_dec <= t0 <= T");
    }
  }
  if (cfg_baseline.tau_enc < 0 || cfg_baseline.tau_enc > cfg_baseline.t0) {
    throw ConfigError("bench_inference: need 0 <= tau_enc <= t0");
  }
  const double per_image = 1.0 / static_cast<double>(images.dim(0));

  InstrumentedModel counted(model);
  BenchReport ours = make_report("inference", "ours", 0, cfg_ours.tau_dec);
  {
    Pcg32 rng(cfg_ours.seed);
    auto ms = timed_runs(runs, [&] {
      counted.reset();
      edit_image(counted, images, cfg_ours, rng);
    });
    ours.nfe = counted.total_evals() / images.dim(0);
    for (double& v : ms) v *= per_image;
    fill_timing(ours, std::move(ms));
    ours.config_json = edit_config_to_json(cfg_ours);
  }

  BenchReport base =
      make_report("inference", "baseline", cfg_baseline.tau_enc, cfg_baseline.tau_dec);
  {
    Pcg32 rng(cfg_baseline.seed);
    const StepSequence dec = uniform_subsequence(schedule, cfg_baseline.tau_dec, cfg_baseline.t0);
    auto ms = timed_runs(runs, [&] {
      counted.reset();
      const LatentState latent =
          cfg_baseline.tau_enc == 0
              ? ddpm_encode(images, cfg_baseline.t0, schedule, rng)
              : ddim_encode(counted, images,
                            uniform_subsequence(schedule, cfg_baseline.tau_enc, cfg_baseline.t0));
      ddim_decode(counted, latent, dec);
    });
    base.nfe = counted.total_evals() / images.dim(0);
    for (double& v : ms) v *= per_image;
    fill_timing(base, std::move(ms));
    base.config_json = edit_config_to_json(cfg_baseline);
  }
  return {ours, base};
}

std::vector<BenchReport> bench_training(const DenoiserModel& model,
                                        const std::vector<Tensor>& images,
                                        const std::vector<EditConfig>& cfgs, const Embedder& e,
                                        std::size_t runs) {
  if (runs < 1) throw ConfigError("bench_training: runs must be >= 1");
  retain_heap_pages();
  if (cfgs.empty()) throw ConfigError("bench_training: no configs");
  if (images.empty()) throw ConfigError("bench_training: no images");
  std::vector<BenchReport> reports;
  for (const EditConfig& cfg : cfgs) {
    EditConfig warm = cfg;
    warm.n_iter = 1;
    Pcg32 warm_rng(cfg.seed);
    finetune(model, images, warm, e, warm_rng);

    BenchReport r = make_report("training", variant_name(cfg.variant),
                                cfg.variant == Variant::kBaseline ? cfg.tau_enc : 0, cfg.tau_dec);
    std::vector<double> ms;
    for (std::size_t run = 0; run < runs; ++run) {
      Pcg32 rng(cfg.seed);
      const FinetuneResult res = finetune(model, images, cfg, e, rng);
      double total = 0.0;
      for (const IterationRecord& it : res.report.trace) total += it.ms;
      ms.push_back(total / static_cast<double>(res.report.trace.size()));
      r.nfe = res.report.loss_nfe / (images.size() * static_cast<std::size_t>(cfg.n_iter));
      r.peak_elems = res.report.peak_elems;
    }
    fill_timing(r, std::move(ms));
    r.config_json = edit_config_to_json(cfg);
    reports.push_back(std::move(r));
  }
  return reports;
}

double nfe_ratio(const BenchReport& baseline, const BenchReport& ours) {
  if (ours.nfe == 0) throw ConfigError("nfe_ratio: zero evaluations in the denominator");
  return static_cast<double>(baseline.nfe) / static_cast<double>(ours.nfe);
}

std::string report_csv(const std::vector<BenchReport>& reports) {
  if (reports.empty()) throw ConfigError("write_report: no reports");
  std::string out = "scenario,variant,tau_enc,tau_dec,nfe,peak_elems,ms_mean,ms_std,runs\n";
  char buf[256];
  for (const BenchReport& r : reports) {
    char sd[48] = "";
    if (r.ms_std) std::snprintf(sd, sizeof(sd), "%.4f", *r.ms_std);
    std::snprintf(buf, sizeof(buf), "%s,%s,%d,%d,%zu,%zu,%.4f,%s,%zu\n", r.scenario.c_str(),
                  r.variant.c_str(), r.tau_enc, r.tau_dec, r.nfe, r.peak_elems, r.ms_mean, sd,
                  r.runs);
    out += buf;
  }
  return out;
}

void write_report(const std::vector<BenchReport>& reports, const std::filesystem::path& path) {
  const std::string text = report_csv(reports);
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

void write_report_json(const std::vector<BenchReport>& reports, const std::filesystem::path& path) {
  if (reports.empty()) throw ConfigError("write_report_json: no reports");
  nlohmann::json arr = nlohmann::json::array();
  for (const BenchReport& r : reports) {
    nlohmann::json j = {
        {"scenario", r.scenario}, {"variant", r.variant},     {"tau_enc", r.tau_enc},
        {"tau_dec", r.tau_dec},   {"nfe", r.nfe},             {"peak_elems", r.peak_elems},
        {"ms_mean", r.ms_mean},   {"ms_median", r.ms_median}, {"runs", r.runs},
    };
    j["ms_std"] = r.ms_std ? nlohmann::json(*r.ms_std) : nlohmann::json(nullptr);
    j["config"] = r.config_json.empty() ? nlohmann::json(nullptr)
                                        : nlohmann::json::parse(r.config_json);
    arr.push_back(std::move(j));
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << arr.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace diffedit
