#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "diffedit/denoiser.hpp"
#include "diffedit/guidance.hpp"
#include "diffedit/instrumented.hpp"
#include "diffedit/rng.hpp"
#include "diffedit/tensor.hpp"

namespace diffedit {

enum class Variant { kBaseline, kSingleStep };

std::string variant_name(Variant v);
Variant parse_variant(const std::string& name);

struct EditConfig {
  int t0 = 300;
  int tau_enc = 40;  // baseline only
  int tau_dec = 6;
  // Weight of the per-pixel identity term: the summed L1 enters the
  // objective as (lambda / pixels) * L_id. See identity_weight().
  double lambda = 0.9;
  double lr = 1e-3;
  int n_iter = 20;
  std::string y_ref = "brightness:base";
  std::string y_tar = "brightness:increase";
  Variant variant = Variant::kSingleStep;
  std::uint64_t seed = 0;
  // Redraw the closed-form latents every iteration instead of once.
  bool resample_latents = false;
  // Threads for per-image loss evaluation within an iteration.
  int workers = 1;

  // Throws ConfigError: needs 1 <= tau_dec <= t0 <= T, lambda >= 0,
  // n_iter >= 1, lr >= 0, workers >= 1, and tau_enc >= 1 for the baseline.
  void validate(int big_t) const;
};

// Coefficient handed to total_loss for images of `pixels` pixels.
double identity_weight(const EditConfig& cfg, std::size_t pixels);

// Named presets. `big_t` scales the fractional t0 of each preset.
//   brightness-shallow: brightness:increase, t0 = 0.3 T,  lambda 0.9, lr 1e-3
//   size-strong:        size:increase,       t0 = 0.45 T, lambda 0.2, lr 2e-3
std::vector<std::string> edit_preset_names();
EditConfig edit_preset(const std::string& name, int big_t);

// JSON object with the EditConfig field names; missing keys keep `base`,
// unknown keys throw ConfigError.
EditConfig edit_config_from_json(const std::string& text, const EditConfig& base = {});
std::string edit_config_to_json(const EditConfig& cfg);

struct IterationRecord {
  std::size_t iter = 0;  // 1-based
  double l_dir = 0.0;    // mean over images
  double l_id = 0.0;
  double total = 0.0;
  std::size_t nfe_cum = 0;     // loss-bearing evaluations so far
  std::size_t peak_elems = 0;  // largest per-image tape this iteration
  double ms = 0.0;
};

struct FinetuneReport {
  std::vector<IterationRecord> trace;
  std::size_t encode_nfe = 0;  // plain evaluations spent building latents
  std::size_t loss_nfe = 0;
  std::size_t peak_elems = 0;
};

struct FinetuneResult {
  DenoiserModel model;
  FinetuneReport report;
};

// Runs cfg.n_iter Adam iterations on ALL parameters against precomputed
// latents (one {1, D} row per image, living at t0). single_step takes one
// recorded evaluation per image (the x0 estimate); baseline unrolls tau_dec
// DDIM steps on one tape per image. Per-image gradients are summed in image
// order and divided by the image count, so results do not depend on
// cfg.workers. Throws TrainingDivergedError when the loss is non-finite or
// above 1e6.
FinetuneResult finetune_from_latents(const DenoiserModel& model, const std::vector<Tensor>& images,
                                     const std::vector<Tensor>& latents, const EditConfig& cfg,
                                     const Embedder& e, Pcg32& rng);

// Latents by ddpm_encode (no evaluations), then finetune_from_latents.
FinetuneResult finetune_single_step(const DenoiserModel& model, const std::vector<Tensor>& images,
                                    const EditConfig& cfg, const Embedder& e, Pcg32& rng);

// Latents by ddim_encode with tau_enc steps under the original model, then
// finetune_from_latents.
FinetuneResult finetune_multistep_baseline(const DenoiserModel& model,
                                           const std::vector<Tensor>& images,
                                           const EditConfig& cfg, const Embedder& e, Pcg32& rng);

// Dispatches on cfg.variant.
FinetuneResult finetune(const DenoiserModel& model, const std::vector<Tensor>& images,
                        const EditConfig& cfg, const Embedder& e, Pcg32& rng);

// ddpm_encode to t0, then tau_dec DDIM steps. x0 may hold several rows.
Tensor edit_image(const NoisePredictor& model, const Tensor& x0, const EditConfig& cfg,
                  Pcg32& rng);

// Folds finetune_single_step over cfgs in order.
DenoiserModel sequential_multi_attribute(const DenoiserModel& model,
                                         const std::vector<Tensor>& images,
                                         const std::vector<EditConfig>& cfgs, const Embedder& e,
                                         Pcg32& rng);

// iter,l_dir,l_id,total,nfe_cum,peak_elems,ms
void write_finetune_csv(const std::filesystem::path& path, const FinetuneReport& report);

}  // namespace diffedit
