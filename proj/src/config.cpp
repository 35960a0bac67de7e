#include "diffedit/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "diffedit/error.hpp"

namespace diffedit {

namespace {

using nlohmann::json;

json edit_fields(const EditConfig& e) { return json::parse(edit_config_to_json(e)); }

json to_doc(const RunConfig& c) {
  json finetune = edit_fields(c.edit);
  finetune["preset"] = c.preset;
  return {
      {"seed", c.seed},
      {"out", c.out},
      {"checkpoint", c.checkpoint},
      {"schedule", {{"T", c.big_t}, {"beta_start", c.beta_start}, {"beta_end", c.beta_end}}},
      {"model",
       {{"hidden", c.model.hidden},
        {"time_embed_dim", c.model.time_embed_dim},
        {"input_skip", c.model.input_skip}}},
      {"data",
       {{"side", c.data.side},
        {"train_size", c.data.train_size},
        {"train_seed", c.data.train_seed},
        {"finetune_size", c.data.finetune_size},
        {"finetune_seed", c.data.finetune_seed},
        {"heldout_size", c.data.heldout_size},
        {"heldout_seed", c.data.heldout_seed}}},
      {"pretrain",
       {{"steps", c.pretrain.steps},
        {"lr", c.pretrain.lr},
        {"batch", c.pretrain.batch},
        {"log_every", c.pretrain.log_every},
        {"cosine_decay", c.pretrain.cosine_decay}}},
      {"embedder", {{"dim", c.embedder.dim}, {"seed", c.embedder.seed}}},
      {"finetune", finetune},
      {"bench",
       {{"runs", c.bench.runs},
        {"images", c.bench.images},
        {"t0", c.bench.t0},
        {"tau_enc", c.bench.tau_enc},
        {"tau_dec", c.bench.tau_dec},
        {"n_iter", c.bench.n_iter},
        {"train_tau_dec", c.bench.train_tau_dec}}},
      {"sweep",
       {{"t0_fractions", c.sweep.t0_fractions},
        {"images", c.sweep.images},
        {"tau_enc", c.sweep.tau_enc},
        {"tau_dec", c.sweep.tau_dec},
        {"ddpm_seeds", c.sweep.ddpm_seeds}}},
  };
}

// Every key of `user` must exist in `reference`, recursively.
void check_keys(const json& user, const json& reference, const std::string& prefix) {
  if (!user.is_object()) {
    throw ConfigError("config: " + (prefix.empty() ? std::string("top level") : prefix) +
                      " must be a JSON object");
  }
  for (const auto& [key, value] : user.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!reference.contains(key)) throw ConfigError("config: unknown key '" + path + "'");
    if (reference.at(key).is_object()) check_keys(value, reference.at(key), path);
  }
}

void apply_assignment(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("--set expects key=value, got '" + assignment + "'");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
    if (part.empty()) throw ConfigError("--set: malformed key '" + key + "'");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    json& child = (*node)[part];
    if (child.is_null()) child = json::object();
    if (!child.is_object()) throw ConfigError("--set: '" + key + "' descends into a non-object");
    node = &child;
    start = dot + 1;
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& section) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: " + section + (section.empty() ? "" : ".") + key +
                      " has the wrong type (" + obj.at(key).dump() + ")");
  }
}

}  // namespace

RunConfig resolve_run_config(const std::string& json_text, const std::vector<std::string>& overrides) {
  json user = json::object();
  if (!json_text.empty()) {
    try {
      user = json::parse(json_text);
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config: malformed JSON: ") + e.what());
    }
  }
  if (!user.is_object()) throw ConfigError("config: top level must be a JSON object");
  for (const std::string& a : overrides) apply_assignment(user, a);

  const RunConfig defaults;
  check_keys(user, to_doc(defaults), "");

  RunConfig c = defaults;
  read(user, "seed", c.seed, "");
  read(user, "out", c.out, "");
  read(user, "checkpoint", c.checkpoint, "");
  const json empty = json::object();
  const json& s = user.contains("schedule") ? user["schedule"] : empty;
  read(s, "T", c.big_t, "schedule");
  read(s, "beta_start", c.beta_start, "schedule");
  read(s, "beta_end", c.beta_end, "schedule");
  const json& m = user.contains("model") ? user["model"] : empty;
  read(m, "hidden", c.model.hidden, "model");
  read(m, "time_embed_dim", c.model.time_embed_dim, "model");
  read(m, "input_skip", c.model.input_skip, "model");
  const json& d = user.contains("data") ? user["data"] : empty;
  read(d, "side", c.data.side, "data");
  read(d, "train_size", c.data.train_size, "data");
  read(d, "train_seed", c.data.train_seed, "data");
  read(d, "finetune_size", c.data.finetune_size, "data");
  read(d, "finetune_seed", c.data.finetune_seed, "data");
  read(d, "heldout_size", c.data.heldout_size, "data");
  read(d, "heldout_seed", c.data.heldout_seed, "data");
  const json& p = user.contains("pretrain") ? user["pretrain"] : empty;
  read(p, "steps", c.pretrain.steps, "pretrain");
  read(p, "lr", c.pretrain.lr, "pretrain");
  read(p, "batch", c.pretrain.batch, "pretrain");
  read(p, "log_every", c.pretrain.log_every, "pretrain");
  read(p, "cosine_decay", c.pretrain.cosine_decay, "pretrain");
  const json& e = user.contains("embedder") ? user["embedder"] : empty;
  read(e, "dim", c.embedder.dim, "embedder");
  read(e, "seed", c.embedder.seed, "embedder");
  const json& b = user.contains("bench") ? user["bench"] : empty;
  read(b, "runs", c.bench.runs, "bench");
  read(b, "images", c.bench.images, "bench");
  read(b, "t0", c.bench.t0, "bench");
  read(b, "tau_enc", c.bench.tau_enc, "bench");
  read(b, "tau_dec", c.bench.tau_dec, "bench");
  read(b, "n_iter", c.bench.n_iter, "bench");
  read(b, "train_tau_dec", c.bench.train_tau_dec, "bench");
  const json& w = user.contains("sweep") ? user["sweep"] : empty;
  read(w, "t0_fractions", c.sweep.t0_fractions, "sweep");
  read(w, "images", c.sweep.images, "sweep");
  read(w, "tau_enc", c.sweep.tau_enc, "sweep");
  read(w, "tau_dec", c.sweep.tau_dec, "sweep");
  read(w, "ddpm_seeds", c.sweep.ddpm_seeds, "sweep");

  json f = user.contains("finetune") ? user["finetune"] : empty;
  read(f, "preset", c.preset, "finetune");
  f.erase("preset");
  EditConfig base = c.preset.empty() ? EditConfig{} : edit_preset(c.preset, c.big_t);
  // The global seed drives edits unless the section pins its own.
  base.seed = c.seed;
  c.edit = edit_config_from_json(f.dump(), base);

  if (c.data.side < 8) throw ConfigError("config: data.side must be >= 8");
  if (c.pretrain.steps < 1) throw ConfigError("config: pretrain.steps must be >= 1");
  if (c.bench.runs < 1) throw ConfigError("config: bench.runs must be >= 1");
  c.model.image_dim = c.data.side * c.data.side;
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path,
                          const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return resolve_run_config(ss.str(), overrides);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string run_config_to_json(const RunConfig& cfg) { return to_doc(cfg).dump(2); }

NoiseSchedule make_schedule(const RunConfig& cfg) {
  return make_linear_schedule(cfg.big_t, cfg.beta_start, cfg.beta_end);
}

}  // namespace diffedit
