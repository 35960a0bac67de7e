#include "diffedit/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "diffedit/bench.hpp"
#include "diffedit/config.hpp"
#include "diffedit/datagen.hpp"
#include "diffedit/error.hpp"
#include "diffedit/finetune.hpp"
#include "diffedit/pgm.hpp"
#include "diffedit/pretrain.hpp"
#include "diffedit/sampler.hpp"

namespace diffedit {

namespace fs = std::filesystem;

namespace {

struct GlobalFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> sets;
  std::string checkpoint;
  std::string preset;
  std::vector<std::string> inputs;
};

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), pattern, v);
  return buf;
}

RunConfig resolve(const GlobalFlags& g) {
  std::vector<std::string> overrides = g.sets;
  if (!g.preset.empty()) overrides.push_back("finetune.preset=\"" + g.preset + "\"");
  if (g.seed) overrides.push_back("seed=" + std::to_string(*g.seed));
  if (!g.out.empty()) overrides.push_back("out=" + nlohmann::json(g.out).dump());
  if (!g.checkpoint.empty()) {
    overrides.push_back("checkpoint=" + nlohmann::json(g.checkpoint).dump());
  }
  RunConfig c = g.config.empty() ? resolve_run_config("", overrides)
                                 : load_run_config(g.config, overrides);
  fs::create_directories(c.out);
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw IoError("write failed: " + path.string());
}

void echo_config(const RunConfig& c, const std::string& command) {
  write_text(fs::path(c.out) / (command + "_config.json"), run_config_to_json(c) + "\n");
}

Checkpoint open_checkpoint(const RunConfig& c, const char* fallback) {
  const fs::path path = c.checkpoint.empty() ? fs::path(c.out) / fallback : fs::path(c.checkpoint);
  if (!fs::exists(path)) throw ConfigError("checkpoint not found: " + path.string());
  Checkpoint ck = load_checkpoint(path);
  if (ck.model.image_dim() != c.data.side * c.data.side) {
    throw ConfigError("checkpoint image_dim " + std::to_string(ck.model.image_dim()) +
                      " does not match data.side " + std::to_string(c.data.side));
  }
  return ck;
}

Embedder make_embedder(const RunConfig& c) {
  Embedder e(c.data.side * c.data.side, c.embedder.dim, c.embedder.seed);
  Pcg32 rng(c.data.train_seed);
  const ToyDataset ds = generate_dataset(c.data.train_size, c.data.side, rng);
  for (Attribute a : {Attribute::kBrightness, Attribute::kSize}) {
    for (Polarity p : {Polarity::kIncrease, Polarity::kDecrease}) attribute_direction(a, p, ds, e);
  }
  return e;
}

std::vector<Tensor> finetune_images(const RunConfig& c, std::size_t count) {
  Pcg32 rng(c.data.finetune_seed);
  return generate_dataset(count, c.data.side, rng).images;
}

int cmd_pretrain(const GlobalFlags& g, std::ostream& out) {
  const RunConfig c = resolve(g);
  echo_config(c, "pretrain");
  Pcg32 data_rng(c.data.train_seed);
  const ToyDataset ds = generate_dataset(c.data.train_size, c.data.side, data_rng);
  const DenoiserModel init(c.model, make_schedule(c), c.seed);
  Pcg32 rng(c.seed);
  const PretrainResult res = pretrain(init, ds, c.pretrain, rng);

  const fs::path ckpt = c.checkpoint.empty() ? fs::path(c.out) / "checkpoint.bin"
                                             : fs::path(c.checkpoint);
  save_checkpoint(ckpt, Checkpoint{res.model, {c.pretrain.steps, c.seed, res.final_loss}});
  std::string log = "step,loss\n";
  for (const LossLogEntry& e : res.log) {
    log += std::to_string(e.step) + "," + fmt("%.9f", e.loss) + "\n";
  }
  write_text(fs::path(c.out) / "pretrain_log.csv", log);
  out << "pretrained " << c.pretrain.steps << " steps, final loss " << fmt("%.6f", res.final_loss)
      << "\ncheckpoint: " << ckpt.string() << "\n";
  return 0;
}

int cmd_finetune(const GlobalFlags& g, std::ostream& out) {
  const RunConfig c = resolve(g);
  echo_config(c, "finetune");
  const Checkpoint ck = open_checkpoint(c, "checkpoint.bin");
  const Embedder e = make_embedder(c);
  const std::vector<Tensor> images = finetune_images(c, c.data.finetune_size);
  Pcg32 rng(c.edit.seed);
  const FinetuneResult res = finetune(ck.model, images, c.edit, e, rng);

  save_checkpoint(fs::path(c.out) / "finetuned.bin", Checkpoint{res.model, ck.meta});
  write_finetune_csv(fs::path(c.out) / "finetune_report.csv", res.report);
  e.save_attribute_table(fs::path(c.out) / "attributes.json");

  const IterationRecord& first = res.report.trace.front();
  const IterationRecord& last = res.report.trace.back();
  const std::size_t per_iter = res.report.loss_nfe / static_cast<std::size_t>(c.edit.n_iter);
  out << "variant " << variant_name(c.edit.variant) << ": " << c.edit.n_iter << " iterations on "
      << images.size() << " images\n"
      << "loss-bearing NFE: " << res.report.loss_nfe << " (" << per_iter << " per iteration, "
      << per_iter / images.size() << " per image)\n"
      << "encode NFE: " << res.report.encode_nfe << "\n"
      << "peak retained elements: " << res.report.peak_elems << "\n"
      << "L_dir " << fmt("%.6f", first.l_dir) << " -> " << fmt("%.6f", last.l_dir) << ", total "
      << fmt("%.6f", first.total) << " -> " << fmt("%.6f", last.total) << "\n";
  return 0;
}

int cmd_edit(const GlobalFlags& g, std::ostream& out) {
  const RunConfig c = resolve(g);
  echo_config(c, "edit");
  const Checkpoint ck = open_checkpoint(c, "finetuned.bin");
  const std::size_t side = c.data.side;
  std::vector<std::pair<fs::path, Tensor>> inputs;
  for (const std::string& name : g.inputs) {
    GrayImage img;
    try {
      img = read_pgm(name);
    } catch (const IoError& ex) {
      throw ConfigError(ex.what());
    }
    if (img.width != side || img.height != side) {
      throw ShapeError(name + ": image is " + std::to_string(img.width) + "x" +
                       std::to_string(img.height) + ", expected " + std::to_string(side) + "x" +
                       std::to_string(side));
    }
    inputs.emplace_back(name, std::move(img.pixels));
  }
  Pcg32 rng(c.edit.seed);
  for (const auto& [path, x0] : inputs) {
    const Tensor edited = edit_image(ck.model, x0, c.edit, rng);
    const fs::path dst = fs::path(c.out) / (path.stem().string() + ".edited.pgm");
    write_pgm(dst, edited, side, side);
    out << path.filename().string() << " -> " << dst.string() << ": brightness "
        << fmt("%.4f", attribute_measure(Attribute::kBrightness, x0)) << " -> "
        << fmt("%.4f", attribute_measure(Attribute::kBrightness, edited)) << ", size "
        << fmt("%.4f", attribute_measure(Attribute::kSize, x0)) << " -> "
        << fmt("%.4f", attribute_measure(Attribute::kSize, edited)) << "\n";
  }
  return 0;
}

int cmd_bench(const GlobalFlags& g, std::ostream& out) {
  const RunConfig c = resolve(g);
  echo_config(c, "bench");
  const Checkpoint ck = open_checkpoint(c, "checkpoint.bin");
  const std::vector<Tensor> images = finetune_images(c, c.bench.images);
  const Tensor batch = stack_rows(images);

  EditConfig ours = c.edit;
  ours.variant = Variant::kSingleStep;
  ours.t0 = c.bench.t0;
  ours.tau_dec = c.bench.tau_dec;
  ours.n_iter = c.bench.n_iter;
  EditConfig base = ours;
  base.variant = Variant::kBaseline;
  base.tau_enc = c.bench.tau_enc;

  const auto [inf_ours, inf_base] = bench_inference(ck.model, batch, ours, base, c.bench.runs);
  std::vector<EditConfig> train_cfgs{ours};
  for (int td : c.bench.train_tau_dec) {
    EditConfig b = base;
    b.tau_dec = td;
    train_cfgs.push_back(b);
  }
  const Embedder e = make_embedder(c);
  std::vector<BenchReport> reports{inf_ours, inf_base};
  for (BenchReport& r : bench_training(ck.model, images, train_cfgs, e, c.bench.runs)) {
    reports.push_back(std::move(r));
  }
  write_report(reports, fs::path(c.out) / "bench.csv");
  write_report_json(reports, fs::path(c.out) / "bench.json");

  out << "inference NFE per image: baseline " << inf_base.nfe << ", ours " << inf_ours.nfe
      << "\nNFE ratio: " << fmt("%.2f", nfe_ratio(inf_base, inf_ours)) << "\n"
      << "wall-clock ratio: " << fmt("%.2f", inf_base.ms_mean / inf_ours.ms_mean) << "\n";
  const BenchReport& single = reports[2];
  for (std::size_t i = 3; i < reports.size(); ++i) {
    out << "training tau_dec " << reports[i].tau_dec << ": NFE per iteration ratio "
        << fmt("%.2f", nfe_ratio(reports[i], single)) << ", wall-clock ratio "
        << fmt("%.2f", reports[i].ms_mean / single.ms_mean) << ", peak elements "
        << reports[i].peak_elems << " vs " << single.peak_elems << "\n";
  }
  out << report_csv(reports);
  return 0;
}

int cmd_sweep(const GlobalFlags& g, std::ostream& out) {
  const RunConfig c = resolve(g);
  echo_config(c, "sweep");
  const Checkpoint ck = open_checkpoint(c, "checkpoint.bin");
  Pcg32 rng(c.data.heldout_seed);
  const Tensor x0 = generate_dataset(c.sweep.images, c.data.side, rng).batch();
  const int big_t = ck.model.schedule().steps();
  std::vector<int> t0s;
  for (double f : c.sweep.t0_fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("sweep: t0 fractions must lie in (0, 1]");
    t0s.push_back(std::max(1, static_cast<int>(std::lround(f * big_t))));
  }
  SweepSettings s;
  s.tau_enc = c.sweep.tau_enc;
  s.tau_dec = c.sweep.tau_dec;
  s.ddpm_seeds = c.sweep.ddpm_seeds;
  s.seed = c.seed;
  const std::vector<SweepRow> rows = reconstruction_sweep(ck.model, x0, t0s, s);
  write_sweep_csv(fs::path(c.out) / "sweep.csv", rows);
  for (const SweepRow& r : rows) {
    out << "t0 " << r.t0 << " " << encoder_name(r.encoder) << ": rel_l2 "
        << fmt("%.4f", r.rel_l2) << ", correlation " << fmt("%.4f", r.correlation) << "\n";
  }
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Diffusion-model editing with single-step fine-tuning", "diffedit"};
  app.require_subcommand(1);
  GlobalFlags g;
  app.add_option("--config", g.config, "JSON run configuration");
  app.add_option("--seed", g.seed, "Global seed");
  app.add_option("--out", g.out, "Output directory (created if missing)");
  app.add_option("--set", g.sets, "Override a config key: key=value (repeatable)");

  auto* pre = app.add_subcommand("pretrain", "Train the denoiser on the toy dataset");
  auto* fin = app.add_subcommand("finetune", "Fine-tune a pretrained checkpoint for an edit");
  auto* edi = app.add_subcommand("edit", "Edit PGM images with a fine-tuned checkpoint");
  auto* ben = app.add_subcommand("bench", "Inference and training benchmarks");
  auto* swe = app.add_subcommand("sweep", "Reconstruction sweep over t0");
  pre->add_option("--checkpoint", g.checkpoint, "Where to write the checkpoint");
  for (CLI::App* sub : {fin, edi, ben, swe}) {
    sub->add_option("--checkpoint", g.checkpoint, "Checkpoint to load");
  }
  fin->add_option("--preset", g.preset, "Named edit preset");
  edi->add_option("--preset", g.preset, "Named edit preset");
  edi->add_option("inputs", g.inputs, "Input PGM files")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (pre->parsed()) return cmd_pretrain(g, out);
    if (fin->parsed()) return cmd_finetune(g, out);
    if (edi->parsed()) return cmd_edit(g, out);
    if (ben->parsed()) return cmd_bench(g, out);
    if (swe->parsed()) return cmd_sweep(g, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const DegenerateDirectionError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}

}  // namespace diffedit
