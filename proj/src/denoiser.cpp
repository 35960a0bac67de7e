#include "diffedit/denoiser.hpp"

#include <cmath>
#include <fstream>
#include <string>

#include <json.hpp>

#include "diffedit/error.hpp"
#include "diffedit/rng.hpp"
#include "diffedit/simd/kernels.hpp"
#include "diffedit/tensor_io.hpp"

namespace diffedit {

std::vector<double> time_embedding(int t, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) {
    throw ConfigError("time_embedding: dim must be even and positive, got " +
                      std::to_string(dim));
  }
  if (t < 1) throw ConfigError("time_embedding: timestep must be >= 1, got " + std::to_string(t));
  std::vector<double> out(dim);
  const double td = static_cast<double>(t);
  for (std::size_t i = 0; i < dim / 2; ++i) {
    const double freq =
        std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
    out[2 * i] = std::sin(td * freq);
    out[2 * i + 1] = std::cos(td * freq);
  }
  return out;
}

Var NoisePredictor::predict_noise(Tape& tape, std::span<const Var> params, Var x_t,
                                  int t) const {
  const int ts[1] = {t};
  return predict_noise(tape, params, x_t, std::span<const int>(ts));
}

namespace {

Tensor xavier(Pcg32& rng, std::size_t in, std::size_t out) {
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  Tensor w({in, out});
  for (double& v : w.data()) v = rng.uniform(-a, a);
  return w;
}

}  // namespace

DenoiserModel::DenoiserModel(const DenoiserConfig& config, NoiseSchedule schedule,
                             std::uint64_t init_seed)
    : config_(config), schedule_(std::move(schedule)) {
  if (config_.image_dim == 0 || config_.hidden == 0) {
    throw ConfigError("denoiser: image_dim and hidden must be positive");
  }
  if (config_.time_embed_dim == 0 || config_.time_embed_dim % 2 != 0) {
    throw ConfigError("denoiser: time_embed_dim must be even and positive");
  }
  Pcg32 rng(init_seed);
  const std::size_t d = config_.image_dim;
  const std::size_t h = config_.hidden;
  params_.push_back(xavier(rng, d + config_.time_embed_dim, h));
  params_.emplace_back(Shape{1, h});
  params_.push_back(xavier(rng, h, h));
  params_.emplace_back(Shape{1, h});
  params_.push_back(xavier(rng, h, h));
  params_.emplace_back(Shape{1, h});
  const std::size_t out_in = config_.input_skip ? h + d : h;
  params_.push_back(config_.zero_init_output ? Tensor({out_in, d}) : xavier(rng, out_in, d));
  params_.emplace_back(Shape{1, d});
}

DenoiserModel::DenoiserModel(const DenoiserConfig& config, NoiseSchedule schedule,
                             std::vector<Tensor> params)
    : config_(config), schedule_(std::move(schedule)), params_(std::move(params)) {
  validate();
}

void DenoiserModel::validate() const {
  const std::size_t d = config_.image_dim;
  const std::size_t h = config_.hidden;
  const Shape expected[kParamCount] = {
      {d + config_.time_embed_dim, h}, {1, h}, {h, h}, {1, h},
      {h, h},                          {1, h}, {config_.input_skip ? h + d : h, d}, {1, d}};
  if (params_.size() != kParamCount) {
    throw ConfigError("denoiser: expected 8 parameter tensors, got " +
                      std::to_string(params_.size()));
  }
  for (std::size_t i = 0; i < kParamCount; ++i) {
    if (params_[i].shape() != expected[i]) {
      throw ShapeError("denoiser: parameter " + std::to_string(i) + " has shape " +
                       shape_string(params_[i].shape()) + ", expected " +
                       shape_string(expected[i]));
    }
  }
  if (!parameters_finite()) throw NumericError("denoiser: non-finite parameters");
}

std::size_t DenoiserModel::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor& p : params_) n += p.size();
  return n;
}

bool DenoiserModel::parameters_finite() const {
  for (const Tensor& p : params_) {
    if (!p.all_finite()) return false;
  }
  return true;
}

std::vector<Var> DenoiserModel::bind(Tape& tape, bool trainable) const {
  std::vector<Var> vars;
  vars.reserve(params_.size());
  for (const Tensor& p : params_) {
    vars.push_back(trainable ? tape.leaf_ref(p) : tape.constant_ref(p));
  }
  return vars;
}

Var DenoiserModel::predict_noise(Tape& tape, std::span<const Var> params, Var x_t,
                                 std::span<const int> t) const {
  const Shape& xs = x_t.shape();
  if (xs.size() != 2 || xs[1] != config_.image_dim) {
    throw ShapeError("predict_noise: input shape " + shape_string(xs) +
                     " does not match image_dim " + std::to_string(config_.image_dim));
  }
  if (params.size() != kParamCount) {
    throw ConfigError("predict_noise: expected 8 bound parameters");
  }
  const std::size_t batch = xs[0];
  if (t.size() != 1 && t.size() != batch) {
    throw ShapeError("predict_noise: " + std::to_string(t.size()) +
                     " timesteps for a batch of " + std::to_string(batch));
  }
  const std::size_t e = config_.time_embed_dim;
  Tensor emb({batch, e});
  for (std::size_t r = 0; r < batch; ++r) {
    const int tr = t.size() == 1 ? t[0] : t[r];
    if (tr < 1 || tr > schedule_.steps()) {
      throw ConfigError("predict_noise: timestep " + std::to_string(tr) + " outside [1, " +
                        std::to_string(schedule_.steps()) + "]");
    }
    const std::vector<double> row = time_embedding(tr, e);
    std::copy(row.begin(), row.end(), emb.data().begin() + static_cast<std::ptrdiff_t>(r * e));
  }

  const std::size_t h = config_.hidden;
  Var act = concat(x_t, tape.constant(std::move(emb)));
  for (std::size_t layer = 0; layer < 3; ++layer) {
    act = tanh(add(matmul(act, params[2 * layer]),
                   broadcast(params[2 * layer + 1], {batch, h})));
  }
  if (config_.input_skip) act = concat(act, x_t);
  return add(matmul(act, params[6]), broadcast(params[7], {batch, config_.image_dim}));
}

Tensor DenoiserModel::predict_noise(const Tensor& x_t, int t) const {
  Tape tape;
  const std::vector<Var> params = bind(tape, false);
  const int ts[1] = {t};
  return predict_noise(tape, params, tape.constant_ref(x_t), std::span<const int>(ts))
      .value();
}

Adam::Adam(const std::vector<Tensor>& params, double lr) : lr_(lr) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) {
    throw ConfigError("adam: learning rate must be finite and >= 0");
  }
  for (const Tensor& p : params) {
    m_.emplace_back(p.shape());
    v_.emplace_back(p.shape());
  }
}

void Adam::set_learning_rate(double lr) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) {
    throw ConfigError("adam: learning rate must be finite and >= 0");
  }
  lr_ = lr;
}

void Adam::step(std::vector<Tensor>& params, const std::vector<Tensor>& grads) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw ConfigError("adam: parameter/gradient count mismatch");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
  const auto& k = simd::kernels();
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i].size()) {
      throw ShapeError("adam: gradient " + shape_string(grads[i].shape()) +
                       " for parameter " + shape_string(params[i].shape()));
    }
    k.adam(params[i].data().data(), grads[i].data().data(), m_[i].data().data(),
           v_[i].data().data(), params[i].size(), lr_, kBeta1, kBeta2, kEps, bc1, bc2);
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const DenoiserModel& m = ckpt.model;
  const NoiseSchedule& s = m.schedule();
  nlohmann::json header = {
      {"format", "diffedit-checkpoint"},
      {"version", 1},
      {"model",
       {{"image_dim", m.config().image_dim},
        {"hidden", m.config().hidden},
        {"time_embed_dim", m.config().time_embed_dim},
        {"input_skip", m.config().input_skip}}},
      {"schedule",
       {{"kind", "linear"},
        {"T", s.steps()},
        {"beta_start", s.beta_start()},
        {"beta_end", s.beta_end()}}},
      {"training",
       {{"steps", ckpt.meta.steps},
        {"seed", ckpt.meta.seed},
        {"final_loss", ckpt.meta.final_loss}}},
      {"tensors", m.parameters().size()},
  };
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << header.dump() << '\n';
  for (const Tensor& p : m.parameters()) write_tensor(out, p);
  if (!out) throw IoError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError("checkpoint: missing header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
    if (header.at("format") != "diffedit-checkpoint") {
      throw FormatError("checkpoint: unexpected format tag");
    }
    DenoiserConfig cfg;
    cfg.image_dim = header.at("model").at("image_dim").get<std::size_t>();
    cfg.hidden = header.at("model").at("hidden").get<std::size_t>();
    cfg.time_embed_dim = header.at("model").at("time_embed_dim").get<std::size_t>();
    cfg.input_skip = header.at("model").at("input_skip").get<bool>();
    const auto& sj = header.at("schedule");
    NoiseSchedule schedule = make_linear_schedule(
        sj.at("T").get<int>(), sj.at("beta_start").get<double>(), sj.at("beta_end").get<double>());
    TrainingMeta meta;
    meta.steps = header.at("training").at("steps").get<std::size_t>();
    meta.seed = header.at("training").at("seed").get<std::uint64_t>();
    meta.final_loss = header.at("training").at("final_loss").get<double>();
    const auto count = header.at("tensors").get<std::size_t>();
    std::vector<Tensor> params;
    for (std::size_t i = 0; i < count; ++i) params.push_back(read_tensor(in));
    return Checkpoint{DenoiserModel(cfg, std::move(schedule), std::move(params)), meta};
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
}

}  // namespace diffedit
