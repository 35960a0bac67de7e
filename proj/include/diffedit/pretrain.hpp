#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "diffedit/datagen.hpp"
#include "diffedit/denoiser.hpp"
#include "diffedit/rng.hpp"

namespace diffedit {

struct PretrainOptions {
  std::size_t steps = 20000;
  double lr = 2e-3;
  std::size_t batch = 64;
  std::size_t log_every = 100;
  // Anneal the learning rate as lr * (1 + cos(pi * (step - 1) / steps)) / 2.
  bool cosine_decay = true;
};

struct LossLogEntry {
  std::size_t step = 0;
  // Mean training loss over the steps since the previous entry.
  double loss = 0.0;
};

struct PretrainResult {
  DenoiserModel model;
  std::vector<LossLogEntry> log;
  // Mean loss over the last min(log_every, steps) steps.
  double final_loss = 0.0;
};

// Standard epsilon-prediction objective: per step, draw a batch of images,
// timesteps t ~ U{1..T} and noise eps ~ N(0, I), and minimise
// mean || eps - eps_theta(sqrt(ab_t) x0 + sqrt(1 - ab_t) eps, t) ||^2 with Adam.
// Throws TrainingDivergedError when the loss is non-finite or exceeds 1e6.
PretrainResult pretrain(const DenoiserModel& model, const ToyDataset& dataset,
                        const PretrainOptions& options, Pcg32& rng,
                        const std::function<void(const LossLogEntry&)>& on_log = {});

// Loss of the same objective on a fixed batch (no update).
double denoising_loss(const DenoiserModel& model, const Tensor& x0, std::span<const int> t,
                      const Tensor& noise);

}  // namespace diffedit
