#include "diffedit/finetune.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <thread>

#include <json.hpp>

#include "diffedit/error.hpp"
#include "diffedit/sampler.hpp"
#include "diffedit/simd/kernels.hpp"

namespace diffedit {

std::string variant_name(Variant v) {
  return v == Variant::kBaseline ? "baseline" : "single_step";
}

Variant parse_variant(const std::string& name) {
  if (name == "baseline") return Variant::kBaseline;
  if (name == "single_step") return Variant::kSingleStep;
  throw ConfigError("unknown variant '" + name + "' (expected baseline or single_step)");
}

void EditConfig::validate(int big_t) const {
  auto fail = [](const std::string& m) { throw ConfigError("edit config: " + m); };
  if (!(1 <= tau_dec && tau_dec <= t0 && t0 <= big_t)) {
    fail("need 1 <= tau_dec <= t0 <= T, got tau_dec = " + std::to_string(tau_dec) +
         ", t0 = " + std::to_string(t0) + ", T = " + std::to_string(big_t));
  }
  if (variant == Variant::kBaseline && !(1 <= tau_enc && tau_enc <= t0)) {
    fail("baseline needs 1 <= tau_enc <= t0, got " + std::to_string(tau_enc));
  }
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) fail("lambda must be finite and >= 0");
  if (!(lr >= 0.0) || !std::isfinite(lr)) fail("lr must be finite and >= 0");
  if (n_iter < 1) fail("n_iter must be >= 1");
  if (workers < 1) fail("workers must be >= 1");
  if (y_ref.empty() || y_tar.empty()) fail("y_ref and y_tar must be set");
}

namespace {

struct Preset {
  const char* name;
  const char* attribute;
  double t0_fraction;
  double lambda;
  double lr;
};

constexpr Preset kPresets[] = {
    {"brightness-shallow", "brightness", 0.3, 0.9, 1e-3},
    {"size-strong", "size", 0.45, 0.2, 2e-3},
};

}  // namespace

std::vector<std::string> edit_preset_names() {
  std::vector<std::string> names;
  for (const Preset& p : kPresets) names.emplace_back(p.name);
  return names;
}

EditConfig edit_preset(const std::string& name, int big_t) {
  for (const Preset& p : kPresets) {
    if (name != p.name) continue;
    EditConfig cfg;
    cfg.t0 = static_cast<int>(std::lround(p.t0_fraction * big_t));
    cfg.lambda = p.lambda;
    cfg.lr = p.lr;
    cfg.y_ref = std::string(p.attribute) + ":base";
    cfg.y_tar = std::string(p.attribute) + ":increase";
    return cfg;
  }
  std::string known;
  for (const std::string& n : edit_preset_names()) known += (known.empty() ? "" : ", ") + n;
  throw ConfigError("unknown preset '" + name + "'; available presets: " + known);
}

EditConfig edit_config_from_json(const std::string& text, const EditConfig& base) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("edit config: ") + ex.what());
  }
  if (!j.is_object()) throw ConfigError("edit config: expected a JSON object");
  EditConfig cfg = base;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "t0") cfg.t0 = v.get<int>();
      else if (key == "tau_enc") cfg.tau_enc = v.get<int>();
      else if (key == "tau_dec") cfg.tau_dec = v.get<int>();
      else if (key == "lambda") cfg.lambda = v.get<double>();
      else if (key == "lr") cfg.lr = v.get<double>();
      else if (key == "n_iter") cfg.n_iter = v.get<int>();
      else if (key == "y_ref") cfg.y_ref = v.get<std::string>();
      else if (key == "y_tar") cfg.y_tar = v.get<std::string>();
      else if (key == "variant") cfg.variant = parse_variant(v.get<std::string>());
      else if (key == "seed") cfg.seed = v.get<std::uint64_t>();
      else if (key == "resample_latents") cfg.resample_latents = v.get<bool>();
      else if (key == "workers") cfg.workers = v.get<int>();
      else throw ConfigError("edit config: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("edit config: ") + ex.what());
  }
  return cfg;
}

std::string edit_config_to_json(const EditConfig& cfg) {
  const nlohmann::json j = {
      {"t0", cfg.t0},         {"tau_enc", cfg.tau_enc},
      {"tau_dec", cfg.tau_dec}, {"lambda", cfg.lambda},
      {"lr", cfg.lr},         {"n_iter", cfg.n_iter},
      {"y_ref", cfg.y_ref},   {"y_tar", cfg.y_tar},
      {"variant", variant_name(cfg.variant)}, {"seed", cfg.seed},
      {"resample_latents", cfg.resample_latents}, {"workers", cfg.workers},
  };
  return j.dump(2);
}

double identity_weight(const EditConfig& cfg, std::size_t pixels) {
  return cfg.lambda / static_cast<double>(pixels);
}

namespace {

struct ImageStep {
  std::vector<Tensor> grads;
  double l_dir = 0.0;
  double l_id = 0.0;
  double total = 0.0;
  std::size_t retained = 0;
};

// With `accumulate` set, gradients are added into it in place instead of being
// copied out, which saves a parameter-sized allocation per image.
ImageStep image_step(const InstrumentedModel& counted, const Tensor& latent, const Tensor& image,
                     const StepSequence& dec, const EditConfig& cfg, const Embedder& e,
                     std::vector<Tensor>* accumulate = nullptr) {
  const NoiseSchedule& schedule = counted.schedule();
  Tape tape;
  const std::vector<Var> params = counted.bind(tape, true);
  const RecordedNoiseFn eps = [&](Var x, int t) {
    return counted.predict_noise(tape, params, x, t);
  };

  Var x = tape.constant_ref(latent);
  if (cfg.variant == Variant::kSingleStep) {
    x = estimate_x0(x, cfg.t0, eps, schedule);
  } else {
    for (std::size_t i = dec.size(); i-- > 0;) {
      x = ddim_reverse_step(x, dec.steps[i], i > 0 ? dec.steps[i - 1] : 0, eps, schedule);
    }
  }
  const LossTerms terms =
      total_loss(tape, x, image, cfg.y_tar, cfg.y_ref, identity_weight(cfg, image.size()), e);

  ImageStep out;
  out.l_dir = terms.directional.value().item();
  out.l_id = terms.identity.value().item();
  out.total = terms.total.value().item();
  out.retained = tape.retained_count();
  const Gradients g = tape.backward(terms.total);
  if (accumulate != nullptr) {
    const auto& k = simd::kernels();
    for (std::size_t p = 0; p < params.size(); ++p) {
      Tensor& acc = (*accumulate)[p];
      k.axpy(1.0, g[params[p]].data().data(), acc.data().data(), acc.size());
    }
    return out;
  }
  out.grads.reserve(params.size());
  for (Var p : params) out.grads.push_back(g[p]);
  return out;
}

void check_inputs(const std::vector<Tensor>& images, const std::vector<Tensor>& latents,
                  std::size_t dim) {
  if (images.empty()) throw ConfigError("finetune: no images");
  if (latents.size() != images.size()) {
    throw ConfigError("finetune: " + std::to_string(latents.size()) + " latents for " +
                      std::to_string(images.size()) + " images");
  }
  const Shape row{1, dim};
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].shape() != row || latents[i].shape() != row) {
      throw ShapeError("finetune: image " + std::to_string(i) + " must be " + shape_string(row));
    }
  }
}

std::vector<Tensor> ddpm_latents(const std::vector<Tensor>& images, int t0,
                                 const NoiseSchedule& schedule, Pcg32& rng) {
  std::vector<Tensor> latents;
  latents.reserve(images.size());
  for (const Tensor& img : images) latents.push_back(ddpm_encode(img, t0, schedule, rng).x);
  return latents;
}

}  // namespace

FinetuneResult finetune_from_latents(const DenoiserModel& model, const std::vector<Tensor>& images,
                                     const std::vector<Tensor>& latents_in, const EditConfig& cfg,
                                     const Embedder& e, Pcg32& rng) {
  const NoiseSchedule& schedule = model.schedule();
  cfg.validate(schedule.steps());
  check_inputs(images, latents_in, model.image_dim());
  // Fail early on bad labels rather than inside a worker.
  text_direction(e, cfg.y_tar, cfg.y_ref);

  FinetuneResult result{model, {}};
  DenoiserModel& tuned = result.model;
  FinetuneReport& report = result.report;
  Adam adam(tuned.parameters(), cfg.lr);
  const InstrumentedModel counted(tuned);
  const StepSequence dec = cfg.variant == Variant::kBaseline
                               ? uniform_subsequence(schedule, cfg.tau_dec, cfg.t0)
                               : StepSequence{{cfg.t0}, cfg.t0};
  const auto& k = simd::kernels();
  const std::size_t n = images.size();
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(cfg.workers), n);

  std::vector<Tensor> latents = latents_in;
  std::vector<Tensor> grads;
  for (const Tensor& p : tuned.parameters()) grads.emplace_back(p.shape());

  for (int it = 1; it <= cfg.n_iter; ++it) {
    const auto start = std::chrono::steady_clock::now();
    if (cfg.resample_latents && it > 1 && cfg.variant == Variant::kSingleStep) {
      latents = ddpm_latents(images, cfg.t0, schedule, rng);
    }
    for (Tensor& g : grads) std::fill(g.data().begin(), g.data().end(), 0.0);

    std::vector<ImageStep> steps(n);
    try {
      if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
          steps[i] = image_step(counted, latents[i], images[i], dec, cfg, e, &grads);
        }
      } else {
        std::vector<std::exception_ptr> errors(workers);
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
          pool.emplace_back([&, w] {
            try {
              for (std::size_t i = w; i < n; i += workers) {
                steps[i] = image_step(counted, latents[i], images[i], dec, cfg, e);
              }
            } catch (...) {
              errors[w] = std::current_exception();
            }
          });
        }
        for (std::thread& t : pool) t.join();
        for (const auto& err : errors) {
          if (err) std::rethrow_exception(err);
        }
      }
    } catch (const TrainingDivergedError&) {
      throw;
    } catch (const NumericError&) {
      throw TrainingDivergedError(static_cast<std::size_t>(it), std::nan(""));
    }

    IterationRecord rec;
    rec.iter = static_cast<std::size_t>(it);
    for (std::size_t i = 0; i < n; ++i) {
      ImageStep& s = steps[i];
      for (std::size_t p = 0; p < s.grads.size(); ++p) {
        k.axpy(1.0, s.grads[p].data().data(), grads[p].data().data(), grads[p].size());
      }
      rec.l_dir += s.l_dir;
      rec.l_id += s.l_id;
      rec.total += s.total;
      rec.peak_elems = std::max(rec.peak_elems, s.retained);
      s.grads.clear();
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    rec.l_dir *= inv_n;
    rec.l_id *= inv_n;
    rec.total *= inv_n;
    if (!std::isfinite(rec.total) || rec.total > 1e6) {
      throw TrainingDivergedError(rec.iter, rec.total);
    }
    for (Tensor& g : grads) k.scale(inv_n, g.data().data(), g.data().data(), g.size());
    adam.step(tuned.parameters(), grads);
    if (!tuned.parameters_finite()) throw TrainingDivergedError(rec.iter, rec.total);

    rec.nfe_cum = counted.loss_evals();
    rec.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
                 .count();
    report.peak_elems = std::max(report.peak_elems, rec.peak_elems);
    report.trace.push_back(rec);
  }
  report.loss_nfe = counted.loss_evals();
  return result;
}

FinetuneResult finetune_single_step(const DenoiserModel& model, const std::vector<Tensor>& images,
                                    const EditConfig& cfg, const Embedder& e, Pcg32& rng) {
  if (cfg.variant != Variant::kSingleStep) {
    throw ConfigError("finetune_single_step: config variant is " + variant_name(cfg.variant));
  }
  cfg.validate(model.schedule().steps());
  const std::vector<Tensor> latents = ddpm_latents(images, cfg.t0, model.schedule(), rng);
  return finetune_from_latents(model, images, latents, cfg, e, rng);
}

FinetuneResult finetune_multistep_baseline(const DenoiserModel& model,
                                           const std::vector<Tensor>& images,
                                           const EditConfig& cfg, const Embedder& e, Pcg32& rng) {
  if (cfg.variant != Variant::kBaseline) {
    throw ConfigError("finetune_multistep_baseline: config variant is " +
                      variant_name(cfg.variant));
  }
  cfg.validate(model.schedule().steps());
  const InstrumentedModel counted(model);
  const StepSequence enc = uniform_subsequence(model.schedule(), cfg.tau_enc, cfg.t0);
  std::vector<Tensor> latents;
  for (const Tensor& img : images) latents.push_back(ddim_encode(counted, img, enc).x);
  FinetuneResult result = finetune_from_latents(model, images, latents, cfg, e, rng);
  result.report.encode_nfe = counted.forward_evals();
  return result;
}

FinetuneResult finetune(const DenoiserModel& model, const std::vector<Tensor>& images,
                        const EditConfig& cfg, const Embedder& e, Pcg32& rng) {
  return cfg.variant == Variant::kBaseline ? finetune_multistep_baseline(model, images, cfg, e, rng)
                                           : finetune_single_step(model, images, cfg, e, rng);
}

Tensor edit_image(const NoisePredictor& model, const Tensor& x0, const EditConfig& cfg,
                  Pcg32& rng) {
  const NoiseSchedule& schedule = model.schedule();
  if (!(1 <= cfg.tau_dec && cfg.tau_dec <= cfg.t0 && cfg.t0 <= schedule.steps())) {
    throw ConfigError("edit_image: need 1 <= tau_dec <= t0 <= T");
  }
  const Tensor rows = x0.rank() == 2 ? x0 : x0.reshaped({1, x0.size()});
  const StepSequence dec = uniform_subsequence(schedule, cfg.tau_dec, cfg.t0);
  return ddim_decode(model, ddpm_encode(rows, cfg.t0, schedule, rng), dec);
}

DenoiserModel sequential_multi_attribute(const DenoiserModel& model,
                                         const std::vector<Tensor>& images,
                                         const std::vector<EditConfig>& cfgs, const Embedder& e,
                                         Pcg32& rng) {
  if (cfgs.empty()) throw ConfigError("sequential_multi_attribute: no configs");
  for (const EditConfig& c : cfgs) {
    if (c.variant != Variant::kSingleStep) {
      throw ConfigError("sequential_multi_attribute: every config must be single_step");
    }
  }
  DenoiserModel current = model;
  for (const EditConfig& c : cfgs) {
    current = finetune_single_step(current, images, c, e, rng).model;
  }
  return current;
}

void write_finetune_csv(const std::filesystem::path& path, const FinetuneReport& report) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "iter,l_dir,l_id,total,nfe_cum,peak_elems,ms\n";
  char buf[200];
  for (const IterationRecord& r : report.trace) {
    std::snprintf(buf, sizeof(buf), "%zu,%.9f,%.9f,%.9f,%zu,%zu,%.3f\n", r.iter, r.l_dir, r.l_id,
                  r.total, r.nfe_cum, r.peak_elems, r.ms);
    out << buf;
  }
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace diffedit
