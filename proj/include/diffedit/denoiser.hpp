#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "diffedit/autodiff.hpp"
#include "diffedit/schedule.hpp"
#include "diffedit/tensor.hpp"

namespace diffedit {

struct DenoiserConfig {
  std::size_t image_dim = 256;
  std::size_t hidden = 256;
  std::size_t time_embed_dim = 32;
  // Zero the output layer at initialisation so the untrained model predicts 0.
  bool zero_init_output = true;
  // The output layer reads [h3, x_t] instead of h3 alone (W4 is
  // {hidden + image_dim, image_dim}).
  bool input_skip = true;
};

// Sinusoidal timestep features, interleaved:
// [sin(t w_0), cos(t w_0), sin(t w_1), ...], w_i = 10000^(-2i/dim).
std::vector<double> time_embedding(int t, std::size_t dim);

// The noise-prediction network eps_theta(x_t, t) seen by samplers. Images are
// rows: x_t has shape {B, image_dim} and so does the prediction.
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;

  virtual const NoiseSchedule& schedule() const = 0;
  virtual std::size_t image_dim() const = 0;

  // Plain forward evaluation.
  virtual Tensor predict_noise(const Tensor& x_t, int t) const = 0;

  // Differentiable evaluation. `params` come from bind() on the same tape.
  virtual Var predict_noise(Tape& tape, std::span<const Var> params, Var x_t,
                            std::span<const int> t) const = 0;
  Var predict_noise(Tape& tape, std::span<const Var> params, Var x_t, int t) const;

  // Parameters as tape inputs: leaves when trainable, constants otherwise.
  virtual std::vector<Var> bind(Tape& tape, bool trainable) const = 0;
};

// Time-conditioned MLP: [x_t, emb(t)] -> 3 tanh hidden layers -> linear
// output of width image_dim, optionally with x_t fed to the output layer as
// well. Parameter order: W1 b1 W2 b2 W3 b3 W4 b4, with weights stored
// {in, out} and biases {1, out}.
class DenoiserModel final : public NoisePredictor {
 public:
  static constexpr std::size_t kParamCount = 8;

  DenoiserModel(const DenoiserConfig& config, NoiseSchedule schedule,
                std::uint64_t init_seed);
  DenoiserModel(const DenoiserConfig& config, NoiseSchedule schedule,
                std::vector<Tensor> params);

  const DenoiserConfig& config() const { return config_; }
  const NoiseSchedule& schedule() const override { return schedule_; }
  std::size_t image_dim() const override { return config_.image_dim; }

  std::vector<Tensor>& parameters() { return params_; }
  const std::vector<Tensor>& parameters() const { return params_; }
  std::size_t parameter_count() const;

  using NoisePredictor::predict_noise;
  Tensor predict_noise(const Tensor& x_t, int t) const override;
  Var predict_noise(Tape& tape, std::span<const Var> params, Var x_t,
                    std::span<const int> t) const override;
  std::vector<Var> bind(Tape& tape, bool trainable) const override;

  bool parameters_finite() const;

 private:
  void validate() const;

  DenoiserConfig config_;
  NoiseSchedule schedule_;
  std::vector<Tensor> params_;
};

// Adam with bias correction; descends along the supplied gradients.
class Adam {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  Adam(const std::vector<Tensor>& params, double lr);

  void step(std::vector<Tensor>& params, const std::vector<Tensor>& grads);
  std::size_t steps_taken() const { return t_; }
  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr);

 private:
  double lr_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

struct TrainingMeta {
  std::size_t steps = 0;
  std::uint64_t seed = 0;
  double final_loss = 0.0;
};

struct Checkpoint {
  DenoiserModel model;
  TrainingMeta meta;
};

// Checkpoint file: one line of JSON (dims, schedule, training metadata,
// tensor count) terminated by '\n', followed by the parameters as
// concatenated SWTF tensors in parameter order.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace diffedit
