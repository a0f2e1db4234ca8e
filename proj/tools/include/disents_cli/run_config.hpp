#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "disents/data.hpp"
#include "disents/pipeline.hpp"
#include "disents/trainer.hpp"

namespace disents::cli {

/// Everything one command needs, resolved from defaults, an optional JSON
/// file and command-line overrides (in that order).
struct RunConfig {
  std::string data;        // CSV path
  std::string labels;      // sidecar; empty means "<data stem>.labels.csv" if present
  std::string out = "run";
  std::string checkpoint;  // empty means "<out>/checkpoint"
  std::uint64_t seed = 0;
  std::string synth_preset = "default";

  ModelConfig model;
  TrainConfig train;
  WindowSpec window;
  SynthConfig synth;
};

/// Default settings as a flat JSON object; its key set is the complete
/// vocabulary accepted in config files.
nlohmann::json default_settings();

/// Overlays `patch` onto `base`. Unknown keys throw ConfigError.
void merge_settings(nlohmann::json& base, const nlohmann::json& patch, const std::string& origin);

/// Reads a JSON config file; throws ConfigError on I/O or syntax problems.
nlohmann::json read_settings_file(const std::string& path);

/// Type-checks and range-checks every setting. Nothing is read from disk.
RunConfig resolve(const nlohmann::json& settings);

/// Flat JSON of a resolved config; resolve(to_settings(c)) reproduces c.
nlohmann::json to_settings(const RunConfig& config);

/// Synthetic generator settings from the preset plus any synth_* overrides.
SynthConfig synth_config(const nlohmann::json& settings);

}  // namespace disents::cli
