#include "disents_cli/run_config.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "disents/error.hpp"

namespace disents::cli {

namespace {

using json = nlohmann::json;

std::uint64_t get_uint(const json& s, const char* key) {
  const json& v = s.at(key);
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer()) {
    if (v.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v.get<std::int64_t>());
    throw ConfigError(std::string("'") + key + "' must be a non-negative integer, got " + v.dump());
  }
  throw ConfigError(std::string("'") + key + "' must be an integer, got " + v.dump());
}

std::size_t get_size(const json& s, const char* key) { return static_cast<std::size_t>(get_uint(s, key)); }

double get_double(const json& s, const char* key) {
  const json& v = s.at(key);
  if (!v.is_number()) throw ConfigError(std::string("'") + key + "' must be a number, got " + v.dump());
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw ConfigError(std::string("'") + key + "' must be finite");
  return d;
}

bool get_bool(const json& s, const char* key) {
  const json& v = s.at(key);
  if (!v.is_boolean()) throw ConfigError(std::string("'") + key + "' must be true or false, got " + v.dump());
  return v.get<bool>();
}

std::string get_string(const json& s, const char* key) {
  const json& v = s.at(key);
  if (!v.is_string()) throw ConfigError(std::string("'") + key + "' must be a string, got " + v.dump());
  return v.get<std::string>();
}

// null keeps the preset's values
std::vector<double> get_numbers(const json& s, const char* key) {
  const json& v = s.at(key);
  if (v.is_null()) return {};
  if (!v.is_array()) throw ConfigError(std::string("'") + key + "' must be a list of numbers");
  std::vector<double> out;
  for (const json& e : v) {
    if (!e.is_number()) throw ConfigError(std::string("'") + key + "' must be a list of numbers");
    out.push_back(e.get<double>());
  }
  return out;
}

}  // namespace

json default_settings() {
  const ModelConfig m;
  const TrainConfig t;
  const WindowSpec w;
  const SynthConfig s;
  return {
      {"data", ""},
      {"labels", ""},
      {"out", "run"},
      {"checkpoint", ""},
      {"seed", 0},
      {"k_experts", 2},
      {"lambda", m.loss.lambda},
      {"tau", m.loss.tau},
      {"normalize_sims", m.loss.normalize_sims},
      {"alpha", m.lwa.alpha},
      {"topk", m.lwa.top_k},
      {"rcond", m.lwa.rcond},
      {"lookback", w.lookback},
      {"horizon", w.horizon},
      {"stride", w.stride},
      {"train_fraction", w.train_fraction},
      {"val_fraction", w.val_fraction},
      {"test_fraction", w.test_fraction},
      {"backbone", std::string(to_string(m.backbone.kind))},
      {"hidden", m.backbone.hidden},
      {"decomp_kernel", m.backbone.decomp_kernel},
      {"d_model", m.d_model},
      {"heads", m.heads},
      {"ffn_mult", m.ffn_mult},
      {"gate_dropout", m.gate_dropout},
      {"eps_norm", m.eps_norm},
      {"epochs", t.epochs},
      {"batch_size", t.batch_size},
      {"lr", t.lr},
      {"patience", t.patience},
      {"synth_preset", "default"},
      {"synth_length", s.length},
      {"synth_channels_per_group", s.channels_per_group},
      {"synth_noise", s.noise},
      {"synth_periods", nullptr},
      {"synth_slopes", nullptr},
      {"synth_signs", nullptr},
      {"synth_amplitudes", nullptr},
      {"synth_phase_jitter", nullptr},
  };
}

void merge_settings(json& base, const json& patch, const std::string& origin) {
  if (!patch.is_object()) throw ConfigError(origin + ": expected a JSON object");
  for (const auto& [key, value] : patch.items()) {
    if (!base.contains(key)) throw ConfigError(origin + ": unknown key '" + key + "'");
    base[key] = value;
  }
}

json read_settings_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
}

SynthConfig synth_config(const json& s) {
  const std::string preset = get_string(s, "synth_preset");
  SynthConfig cfg;
  if (preset == "default") {
    cfg = default_synth_config();
  } else if (preset == "four-group") {
    cfg = four_group_synth_config();
  } else {
    throw ConfigError("'synth_preset' must be default or four-group, got '" + preset + "'");
  }
  cfg.length = get_size(s, "synth_length");
  cfg.channels_per_group = get_size(s, "synth_channels_per_group");
  cfg.noise = get_double(s, "synth_noise");
  cfg.seed = get_uint(s, "seed");

  const std::vector<double> periods = get_numbers(s, "synth_periods");
  if (!periods.empty()) {
    cfg.groups.resize(periods.size(), cfg.groups.back());
    for (std::size_t g = 0; g < periods.size(); ++g) cfg.groups[g].period = periods[g];
  }
  auto per_group = [&](const char* key, auto apply) {
    const std::vector<double> v = get_numbers(s, key);
    if (v.empty()) return;
    if (v.size() != cfg.groups.size()) {
      throw ConfigError(std::string("'") + key + "' has " + std::to_string(v.size()) + " entries for " +
                        std::to_string(cfg.groups.size()) + " groups");
    }
    for (std::size_t g = 0; g < v.size(); ++g) apply(cfg.groups[g], v[g]);
  };
  per_group("synth_slopes", [](GroupSpec& g, double v) { g.slope = v; });
  per_group("synth_amplitudes", [](GroupSpec& g, double v) { g.amplitude = v; });
  per_group("synth_signs", [](GroupSpec& g, double v) {
    if (v != 1.0 && v != -1.0) throw ConfigError("'synth_signs' entries must be 1 or -1");
    g.sign = static_cast<int>(v);
  });
  if (!s.at("synth_phase_jitter").is_null()) {
    const double j = get_double(s, "synth_phase_jitter");
    for (GroupSpec& g : cfg.groups) g.phase_jitter = j;
  }
  cfg.validate();
  return cfg;
}

RunConfig resolve(const json& s) {
  const json defaults = default_settings();
  for (const auto& [key, value] : defaults.items()) {
    if (!s.contains(key)) throw ConfigError("missing setting '" + key + "'");
  }
  RunConfig c;
  c.data = get_string(s, "data");
  c.labels = get_string(s, "labels");
  c.out = get_string(s, "out");
  if (c.out.empty()) throw ConfigError("'out' must not be empty");
  c.checkpoint = get_string(s, "checkpoint");
  c.seed = get_uint(s, "seed");
  c.synth_preset = get_string(s, "synth_preset");

  c.window.lookback = get_size(s, "lookback");
  c.window.horizon = get_size(s, "horizon");
  c.window.stride = get_size(s, "stride");
  c.window.train_fraction = get_double(s, "train_fraction");
  c.window.val_fraction = get_double(s, "val_fraction");
  c.window.test_fraction = get_double(s, "test_fraction");
  c.window.validate();

  ModelConfig& m = c.model;
  m.backbone.kind = parse_backbone_kind(get_string(s, "backbone"));
  m.backbone.lookback = c.window.lookback;
  m.backbone.horizon = c.window.horizon;
  m.backbone.hidden = get_size(s, "hidden");
  m.backbone.decomp_kernel = get_size(s, "decomp_kernel");
  m.experts = get_size(s, "k_experts");
  m.d_model = get_size(s, "d_model");
  m.heads = get_size(s, "heads");
  m.ffn_mult = get_size(s, "ffn_mult");
  m.gate_dropout = get_double(s, "gate_dropout");
  m.lwa.top_k = get_size(s, "topk");
  m.lwa.alpha = get_double(s, "alpha");
  m.lwa.rcond = get_double(s, "rcond");
  m.loss.lambda = get_double(s, "lambda");
  m.loss.tau = get_double(s, "tau");
  m.loss.normalize_sims = get_bool(s, "normalize_sims");
  m.eps_norm = get_double(s, "eps_norm");
  m.seed = c.seed;
  m.validate();

  c.train.epochs = get_size(s, "epochs");
  c.train.batch_size = get_size(s, "batch_size");
  c.train.lr = get_double(s, "lr");
  c.train.patience = get_size(s, "patience");
  c.train.seed = c.seed;
  c.train.eval_threads = threads_from_env();
  c.train.validate();

  c.synth = synth_config(s);
  return c;
}

json to_settings(const RunConfig& c) {
  json s = default_settings();
  s["data"] = c.data;
  s["labels"] = c.labels;
  s["out"] = c.out;
  s["checkpoint"] = c.checkpoint;
  s["seed"] = c.seed;
  s["k_experts"] = c.model.experts;
  s["lambda"] = c.model.loss.lambda;
  s["tau"] = c.model.loss.tau;
  s["normalize_sims"] = c.model.loss.normalize_sims;
  s["alpha"] = c.model.lwa.alpha;
  s["topk"] = c.model.lwa.top_k;
  s["rcond"] = c.model.lwa.rcond;
  s["lookback"] = c.window.lookback;
  s["horizon"] = c.window.horizon;
  s["stride"] = c.window.stride;
  s["train_fraction"] = c.window.train_fraction;
  s["val_fraction"] = c.window.val_fraction;
  s["test_fraction"] = c.window.test_fraction;
  s["backbone"] = std::string(to_string(c.model.backbone.kind));
  s["hidden"] = c.model.backbone.hidden;
  s["decomp_kernel"] = c.model.backbone.decomp_kernel;
  s["d_model"] = c.model.d_model;
  s["heads"] = c.model.heads;
  s["ffn_mult"] = c.model.ffn_mult;
  s["gate_dropout"] = c.model.gate_dropout;
  s["eps_norm"] = c.model.eps_norm;
  s["epochs"] = c.train.epochs;
  s["batch_size"] = c.train.batch_size;
  s["lr"] = c.train.lr;
  s["patience"] = c.train.patience;
  s["synth_preset"] = c.synth_preset;
  s["synth_length"] = c.synth.length;
  s["synth_channels_per_group"] = c.synth.channels_per_group;
  s["synth_noise"] = c.synth.noise;
  json periods = json::array(), slopes = json::array(), signs = json::array(), amps = json::array();
  for (const GroupSpec& g : c.synth.groups) {
    periods.push_back(g.period);
    slopes.push_back(g.slope);
    signs.push_back(g.sign);
    amps.push_back(g.amplitude);
  }
  s["synth_periods"] = periods;
  s["synth_slopes"] = slopes;
  s["synth_signs"] = signs;
  s["synth_amplitudes"] = amps;
  if (!c.synth.groups.empty()) s["synth_phase_jitter"] = c.synth.groups.front().phase_jitter;
  return s;
}

}  // namespace disents::cli
