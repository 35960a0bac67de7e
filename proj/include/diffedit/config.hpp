#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "diffedit/denoiser.hpp"
#include "diffedit/finetune.hpp"
#include "diffedit/pretrain.hpp"

namespace diffedit {

struct DataSettings {
  std::size_t side = 16;
  std::size_t train_size = 4096;
  std::uint64_t train_seed = 1;
  std::size_t finetune_size = 8;
  std::uint64_t finetune_seed = 2;
  std::size_t heldout_size = 64;
  std::uint64_t heldout_seed = 3;
};

struct EmbedderSettings {
  std::size_t dim = 64;
  std::uint64_t seed = 11;
};

struct BenchSettings {
  std::size_t runs = 5;
  std::size_t images = 8;
  int t0 = 400;
  int tau_enc = 40;
  int tau_dec = 6;
  int n_iter = 3;
  std::vector<int> train_tau_dec = {6, 12};
};

struct SweepConfig {
  std::vector<double> t0_fractions = {0.1, 0.3, 0.5, 0.8};
  std::size_t images = 64;
  int tau_enc = 40;
  int tau_dec = 6;
  int ddpm_seeds = 8;
};

// Everything a CLI run reads. JSON layout mirrors the struct nesting:
//   seed, out, checkpoint, schedule{T, beta_start, beta_end},
//   model{hidden, time_embed_dim, input_skip}, data{...}, pretrain{...},
//   embedder{dim, seed}, finetune{preset, <EditConfig fields>},
//   bench{...}, sweep{...}
struct RunConfig {
  std::uint64_t seed = 7;
  std::string out = "out";
  // Empty: the command picks its default under `out`.
  std::string checkpoint;
  int big_t = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  DenoiserConfig model;
  DataSettings data;
  PretrainOptions pretrain;
  EmbedderSettings embedder;
  // Applied before the explicit finetune keys; empty for none.
  std::string preset;
  EditConfig edit;
  BenchSettings bench;
  SweepConfig sweep;
};

// `json_text` may be empty (all defaults). Each override is "a.b=value",
// where value is parsed as JSON and otherwise taken as a string. Unknown keys
// and ill-typed values throw ConfigError. A non-empty finetune.preset seeds
// the edit settings; explicit finetune keys then override it.
RunConfig resolve_run_config(const std::string& json_text,
                             const std::vector<std::string>& overrides = {});
RunConfig load_run_config(const std::filesystem::path& path,
                          const std::vector<std::string>& overrides = {});

// Fully explicit JSON; resolving it again yields the same RunConfig.
std::string run_config_to_json(const RunConfig& cfg);

NoiseSchedule make_schedule(const RunConfig& cfg);

}  // namespace diffedit
