#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <string>

#include "diffedit/datagen.hpp"
#include "diffedit/error.hpp"
#include "diffedit/finetune.hpp"
#include "diffedit/instrumented.hpp"
#include "diffedit/sampler.hpp"
#include "support.hpp"

using namespace diffedit;

namespace {

// Side-8 images, a small random denoiser and an embedder with the
// brightness and size directions registered.
struct Toy {
  ToyDataset data;
  DenoiserModel model;
  Embedder e{64, 8, 3};

  Toy() : data(make_data()), model(make_model()) {
    attribute_direction(Attribute::kBrightness, Polarity::kIncrease, data, e);
    attribute_direction(Attribute::kSize, Polarity::kIncrease, data, e);
  }
  static ToyDataset make_data() {
    Pcg32 rng(1);
    return generate_dataset(8, 8, rng);
  }
  static DenoiserModel make_model() {
    DenoiserConfig c;
    c.image_dim = 64;
    c.hidden = 16;
    c.time_embed_dim = 8;
    c.zero_init_output = false;
    return DenoiserModel(c, make_linear_schedule(), 4);
  }
};

EditConfig quick_config(Variant v, int n_iter) {
  EditConfig cfg;
  cfg.variant = v;
  cfg.n_iter = n_iter;
  cfg.t0 = 200;
  cfg.tau_enc = 10;
  cfg.tau_dec = 6;
  cfg.lr = 1e-3;
  return cfg;
}

double max_param_diff(const DenoiserModel& a, const DenoiserModel& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < DenoiserModel::kParamCount; ++i) {
    m = std::max(m, max_abs_diff(a.parameters()[i], b.parameters()[i]));
  }
  return m;
}

bool same_report(const FinetuneReport& a, const FinetuneReport& b) {
  if (a.trace.size() != b.trace.size()) return false;
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    const IterationRecord& x = a.trace[i];
    const IterationRecord& y = b.trace[i];
    if (x.l_dir != y.l_dir || x.l_id != y.l_id || x.total != y.total || x.nfe_cum != y.nfe_cum ||
        x.peak_elems != y.peak_elems) {
      return false;
    }
  }
  return a.loss_nfe == b.loss_nfe && a.encode_nfe == b.encode_nfe && a.peak_elems == b.peak_elems;
}

}  // namespace

TEST_SUITE("finetune") {
  TEST_CASE("a zero learning rate leaves the parameters untouched") {
    Toy toy;
    EditConfig cfg = quick_config(Variant::kSingleStep, 1);
    cfg.lr = 0.0;
    Pcg32 rng(5);
    const FinetuneResult r = finetune_single_step(toy.model, toy.data.images, cfg, toy.e, rng);
    CHECK(max_param_diff(r.model, toy.model) == 0.0);
    REQUIRE(r.report.trace.size() == 1);
  }

  TEST_CASE("loss-bearing evaluation counts") {
    Toy toy;
    Pcg32 rng(5);
    const FinetuneResult ours =
        finetune_single_step(toy.model, toy.data.images, quick_config(Variant::kSingleStep, 10),
                             toy.e, rng);
    CHECK(ours.report.loss_nfe == 80);
    CHECK(ours.report.encode_nfe == 0);
    CHECK(ours.report.trace.size() == 10);
    for (std::size_t i = 0; i < 10; ++i) {
      CHECK(ours.report.trace[i].iter == i + 1);
      CHECK(ours.report.trace[i].nfe_cum == 8 * (i + 1));
    }
    const FinetuneResult base = finetune_multistep_baseline(
        toy.model, toy.data.images, quick_config(Variant::kBaseline, 10), toy.e, rng);
    CHECK(base.report.loss_nfe == 480);
    CHECK(base.report.encode_nfe == 80);
    CHECK(base.report.trace.back().nfe_cum == 480);
  }

  TEST_CASE("one-step baseline matches the single-step update on shared latents") {
    Toy toy;
    EditConfig cfg = quick_config(Variant::kBaseline, 3);
    cfg.tau_dec = 1;
    std::vector<Tensor> latents;
    const StepSequence enc = uniform_subsequence(toy.model.schedule(), cfg.tau_enc, cfg.t0);
    for (const Tensor& x : toy.data.images) latents.push_back(ddim_encode(toy.model, x, enc).x);
    Pcg32 r1(1), r2(1);
    const FinetuneResult base =
        finetune_from_latents(toy.model, toy.data.images, latents, cfg, toy.e, r1);
    cfg.variant = Variant::kSingleStep;
    const FinetuneResult ours =
        finetune_from_latents(toy.model, toy.data.images, latents, cfg, toy.e, r2);
    CHECK(max_param_diff(base.model, ours.model) <= 1e-12);
    CHECK(max_param_diff(base.model, toy.model) > 0.0);
  }

  TEST_CASE("retained activations grow with the unrolled depth only for the baseline") {
    Toy toy;
    const std::vector<Tensor> two(toy.data.images.begin(), toy.data.images.begin() + 2);
    auto peak = [&](Variant v, int tau_dec) {
      EditConfig cfg = quick_config(v, 1);
      cfg.tau_dec = tau_dec;
      Pcg32 rng(2);
      return finetune(toy.model, two, cfg, toy.e, rng).report.peak_elems;
    };
    const std::size_t b6 = peak(Variant::kBaseline, 6);
    const std::size_t b12 = peak(Variant::kBaseline, 12);
    CHECK(static_cast<double>(b12) >= 1.8 * static_cast<double>(b6));
    CHECK(peak(Variant::kSingleStep, 6) == peak(Variant::kSingleStep, 12));
    CHECK(peak(Variant::kSingleStep, 6) < b6);
  }

  TEST_CASE("results do not depend on the worker count and are reproducible") {
    Toy toy;
    for (Variant v : {Variant::kSingleStep, Variant::kBaseline}) {
      EditConfig cfg = quick_config(v, 3);
      Pcg32 r1(9), r2(9), r3(9);
      const FinetuneResult a = finetune(toy.model, toy.data.images, cfg, toy.e, r1);
      const FinetuneResult b = finetune(toy.model, toy.data.images, cfg, toy.e, r2);
      cfg.workers = 3;
      const FinetuneResult c = finetune(toy.model, toy.data.images, cfg, toy.e, r3);
      CHECK(max_param_diff(a.model, b.model) == 0.0);
      CHECK(max_param_diff(a.model, c.model) == 0.0);
      CHECK(same_report(a.report, b.report));
      CHECK(same_report(a.report, c.report));
    }
  }

  TEST_CASE("configuration validation") {
    Toy toy;
    EditConfig cfg = quick_config(Variant::kSingleStep, 1);
    CHECK_NOTHROW(cfg.validate(1000));
    auto invalid = [&](auto mutate) {
      EditConfig c = cfg;
      mutate(c);
      CHECK_THROWS_AS(c.validate(1000), ConfigError);
    };
    invalid([](EditConfig& c) { c.tau_dec = c.t0 + 1; });
    invalid([](EditConfig& c) { c.tau_dec = 0; });
    invalid([](EditConfig& c) { c.t0 = 1001; });
    invalid([](EditConfig& c) { c.lambda = -1.0; });
    invalid([](EditConfig& c) { c.n_iter = 0; });
    invalid([](EditConfig& c) { c.workers = 0; });
    invalid([](EditConfig& c) {
      c.variant = Variant::kBaseline;
      c.tau_enc = 0;
    });
    Pcg32 rng(1);
    CHECK_THROWS_AS(finetune_multistep_baseline(toy.model, toy.data.images, cfg, toy.e, rng),
                    ConfigError);
    CHECK_THROWS_AS(finetune_single_step(toy.model, {}, cfg, toy.e, rng), ConfigError);
    EditConfig same = cfg;
    same.y_ref = same.y_tar;
    CHECK_THROWS_AS(finetune_single_step(toy.model, toy.data.images, same, toy.e, rng),
                    DegenerateDirectionError);
    CHECK(parse_variant("baseline") == Variant::kBaseline);
    CHECK(variant_name(Variant::kSingleStep) == "single_step");
    CHECK_THROWS_AS(parse_variant("both"), ConfigError);
  }

  TEST_CASE("divergence is reported") {
    Toy toy;
    EditConfig cfg = quick_config(Variant::kSingleStep, 20);
    cfg.lr = 1e8;
    cfg.lambda = 1.0;
    Pcg32 rng(1);
    CHECK_THROWS_AS(finetune_single_step(toy.model, toy.data.images, cfg, toy.e, rng),
                    TrainingDivergedError);
  }

  TEST_CASE("presets and JSON") {
    CHECK(edit_preset_names() == std::vector<std::string>{"brightness-shallow", "size-strong"});
    const EditConfig b = edit_preset("brightness-shallow", 1000);
    CHECK(b.t0 == 300);
    CHECK(b.lambda == 0.9);
    CHECK(b.y_tar == "brightness:increase");
    CHECK(b.y_ref == "brightness:base");
    const EditConfig s = edit_preset("size-strong", 1000);
    CHECK(s.t0 == 450);
    CHECK(s.lambda == 0.2);
    CHECK(s.lr > b.lr);
    CHECK(s.y_tar == "size:increase");
    try {
      edit_preset("sparkle", 1000);
      FAIL("expected an error");
    } catch (const ConfigError& err) {
      CHECK(std::string(err.what()).find("brightness-shallow, size-strong") != std::string::npos);
    }

    EditConfig c = s;
    c.variant = Variant::kBaseline;
    c.seed = 77;
    c.workers = 2;
    const EditConfig back = edit_config_from_json(edit_config_to_json(c));
    CHECK(edit_config_to_json(back) == edit_config_to_json(c));
    CHECK(back.variant == Variant::kBaseline);
    CHECK(back.seed == 77);
    const EditConfig partial = edit_config_from_json(R"({"t0": 123})", s);
    CHECK(partial.t0 == 123);
    CHECK(partial.lambda == 0.2);
    CHECK_THROWS_AS(edit_config_from_json(R"({"tzero": 1})"), ConfigError);
    CHECK_THROWS_AS(edit_config_from_json(R"({"t0": "deep"})"), ConfigError);
    CHECK_THROWS_AS(edit_config_from_json("[1]"), ConfigError);
    CHECK(identity_weight(b, 256) == 0.9 / 256);
  }

  TEST_CASE("sequential transfer folds single-step fine-tuning") {
    Toy toy;
    const EditConfig cfg = quick_config(Variant::kSingleStep, 2);
    Pcg32 r1(4), r2(4);
    const DenoiserModel folded = sequential_multi_attribute(toy.model, toy.data.images, {cfg}, toy.e, r1);
    const FinetuneResult direct = finetune_single_step(toy.model, toy.data.images, cfg, toy.e, r2);
    CHECK(max_param_diff(folded, direct.model) == 0.0);

    EditConfig size = cfg;
    size.y_ref = "size:base";
    size.y_tar = "size:increase";
    Pcg32 r3(4), r4(4);
    const DenoiserModel two =
        sequential_multi_attribute(toy.model, toy.data.images, {cfg, size}, toy.e, r3);
    const FinetuneResult first = finetune_single_step(toy.model, toy.data.images, cfg, toy.e, r4);
    const FinetuneResult second =
        finetune_single_step(first.model, toy.data.images, size, toy.e, r4);
    CHECK(max_param_diff(two, second.model) == 0.0);

    CHECK_THROWS_AS(sequential_multi_attribute(toy.model, toy.data.images, {}, toy.e, r1),
                    ConfigError);
    EditConfig base = cfg;
    base.variant = Variant::kBaseline;
    CHECK_THROWS_AS(sequential_multi_attribute(toy.model, toy.data.images, {cfg, base}, toy.e, r1),
                    ConfigError);
  }

  TEST_CASE("editing costs tau_dec evaluations") {
    Toy toy;
    InstrumentedModel counted(toy.model);
    EditConfig cfg = quick_config(Variant::kSingleStep, 1);
    Pcg32 rng(3);
    const Tensor y = edit_image(counted, toy.data.images[0], cfg, rng);
    CHECK(counted.forward_evals() == 6);
    CHECK(y.shape() == Shape{1, 64});
    counted.reset();
    edit_image(counted, toy.data.batch(0, 3), cfg, rng);
    CHECK(counted.forward_evals() == 18);
  }

  TEST_CASE("report CSV") {
    Toy toy;
    Pcg32 rng(5);
    const FinetuneResult r = finetune_single_step(toy.model, toy.data.images,
                                                  quick_config(Variant::kSingleStep, 4), toy.e, rng);
    const auto dir = test::scratch_dir("finetune_csv");
    write_finetune_csv(dir / "r.csv", r.report);
    std::ifstream in(dir / "r.csv");
    std::string line;
    std::getline(in, line);
    CHECK(line == "iter,l_dir,l_id,total,nfe_cum,peak_elems,ms");
    int rows = 0;
    while (std::getline(in, line)) {
      ++rows;
      CHECK(line.rfind(std::to_string(rows) + ",", 0) == 0);
    }
    CHECK(rows == 4);
    CHECK_THROWS_AS(write_finetune_csv(dir / "missing" / "r.csv", r.report), IoError);
  }
}
