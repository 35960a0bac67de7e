#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "diffedit/denoiser.hpp"
#include "diffedit/finetune.hpp"
#include "diffedit/guidance.hpp"
#include "diffedit/instrumented.hpp"

namespace diffedit {

struct BenchReport {
  std::string scenario;  // "inference" or "training"
  std::string variant;   // "ours" / "baseline" / "single_step"
  int tau_enc = 0;
  int tau_dec = 0;
  // inference: evaluations per image; training: loss-bearing evaluations
  // per image per iteration.
  std::size_t nfe = 0;
  std::size_t peak_elems = 0;
  double ms_mean = 0.0;
  std::optional<double> ms_std;  // present iff runs >= 2
  double ms_median = 0.0;
  std::size_t runs = 1;
  std::string config_json;
};

// Timed runs of the two inference pipelines over `images` ({B, D}); one
// untimed warm-up run precedes each. ours: edit_image (closed-form encode,
// tau_dec steps). baseline: ddim_encode with tau_enc steps (skipped when
// tau_enc == 0) then tau_dec decode steps. ms columns are per image.
std::pair<BenchReport, BenchReport> bench_inference(const NoisePredictor& model,
                                                    const Tensor& images,
                                                    const EditConfig& cfg_ours,
                                                    const EditConfig& cfg_baseline,
                                                    std::size_t runs);

// One report per config: per-iteration wall clock, loss-bearing evaluations
// per image per iteration, and peak retained elements. A warm-up run with
// one iteration precedes each config.
std::vector<BenchReport> bench_training(const DenoiserModel& model,
                                        const std::vector<Tensor>& images,
                                        const std::vector<EditConfig>& cfgs, const Embedder& e,
                                        std::size_t runs);

double nfe_ratio(const BenchReport& baseline, const BenchReport& ours);

// scenario,variant,tau_enc,tau_dec,nfe,peak_elems,ms_mean,ms_std,runs
void write_report(const std::vector<BenchReport>& reports, const std::filesystem::path& path);
std::string report_csv(const std::vector<BenchReport>& reports);
// Same rows plus median and the embedded config.
void write_report_json(const std::vector<BenchReport>& reports, const std::filesystem::path& path);

}  // namespace diffedit
