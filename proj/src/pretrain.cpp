#include "diffedit/pretrain.hpp"

#include <cmath>
#include <numbers>

#include "diffedit/error.hpp"
#include "diffedit/sampler.hpp"

namespace diffedit {
namespace {

constexpr double kDivergenceBound = 1e6;

Tensor noisy_batch(const NoiseSchedule& schedule, const Tensor& x0, std::span<const int> t,
                   const Tensor& noise) {
  const std::size_t rows = x0.dim(0);
  const std::size_t cols = x0.dim(1);
  Tensor out(x0.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double ab = schedule.alpha_bar(t[r]);
    const double a = std::sqrt(ab);
    const double b = std::sqrt(1.0 - ab);
    for (std::size_t c = 0; c < cols; ++c) {
      out[r * cols + c] = a * x0[r * cols + c] + b * noise[r * cols + c];
    }
  }
  return out;
}

Var recorded_loss(Tape& tape, const DenoiserModel& model, std::span<const Var> params,
                  const Tensor& x_t, std::span<const int> t, const Tensor& noise) {
  Var pred = model.predict_noise(tape, params, tape.constant_ref(x_t), t);
  Var diff = sub(pred, tape.constant_ref(noise));
  return mean(mul(diff, diff));
}

}  // namespace

double denoising_loss(const DenoiserModel& model, const Tensor& x0, std::span<const int> t,
                      const Tensor& noise) {
  const Tensor x_t = noisy_batch(model.schedule(), x0, t, noise);
  Tape tape;
  const std::vector<Var> params = model.bind(tape, false);
  return recorded_loss(tape, model, params, x_t, t, noise).value().item();
}

PretrainResult pretrain(const DenoiserModel& model, const ToyDataset& dataset,
                        const PretrainOptions& options, Pcg32& rng,
                        const std::function<void(const LossLogEntry&)>& on_log) {
  if (options.steps < 1) throw ConfigError("pretrain: steps must be >= 1");
  if (dataset.size() == 0) throw ConfigError("pretrain: empty dataset");
  if (options.batch < 1) throw ConfigError("pretrain: batch must be >= 1");
  if (dataset.image_dim() != model.image_dim()) {
    throw ShapeError("pretrain: dataset image_dim " + std::to_string(dataset.image_dim()) +
                     " vs model " + std::to_string(model.image_dim()));
  }
  const std::size_t log_every = options.log_every == 0 ? 100 : options.log_every;

  PretrainResult result{model, {}, 0.0};
  DenoiserModel& work = result.model;
  Adam adam(work.parameters(), options.lr);
  const NoiseSchedule& schedule = work.schedule();
  const auto n = static_cast<std::uint32_t>(dataset.size());
  const auto big_t = static_cast<std::uint32_t>(schedule.steps());

  std::vector<Tensor> rows(options.batch);
  std::vector<int> t(options.batch);
  std::vector<Tensor> grads(DenoiserModel::kParamCount);
  double window = 0.0;
  std::size_t window_count = 0;

  for (std::size_t step = 1; step <= options.steps; ++step) {
    if (options.cosine_decay) {
      const double progress =
          static_cast<double>(step - 1) / static_cast<double>(options.steps);
      adam.set_learning_rate(options.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
    }
    for (std::size_t b = 0; b < options.batch; ++b) rows[b] = dataset.images[rng.below(n)];
    for (std::size_t b = 0; b < options.batch; ++b) t[b] = 1 + static_cast<int>(rng.below(big_t));
    const Tensor x0 = stack_rows(rows);
    const Tensor noise = rng.normal_tensor(x0.shape());
    const Tensor x_t = noisy_batch(schedule, x0, t, noise);

    double loss = 0.0;
    try {
      Tape tape;
      const std::vector<Var> params = work.bind(tape, true);
      Var l = recorded_loss(tape, work, params, x_t, t, noise);
      loss = l.value().item();
      if (!std::isfinite(loss) || loss > kDivergenceBound) {
        throw TrainingDivergedError(step, loss);
      }
      Gradients g = tape.backward(l);
      for (std::size_t i = 0; i < params.size(); ++i) grads[i] = g[params[i]];
    } catch (const TrainingDivergedError&) {
      throw;
    } catch (const NumericError&) {
      throw TrainingDivergedError(step, std::nan(""));
    }
    adam.step(work.parameters(), grads);

    window += loss;
    ++window_count;
    if (step % log_every == 0 || step == options.steps) {
      LossLogEntry entry{step, window / static_cast<double>(window_count)};
      result.log.push_back(entry);
      if (on_log) on_log(entry);
      result.final_loss = entry.loss;
      window = 0.0;
      window_count = 0;
    }
  }
  if (!work.parameters_finite()) throw TrainingDivergedError(options.steps, std::nan(""));
  return result;
}

}  // namespace diffedit
