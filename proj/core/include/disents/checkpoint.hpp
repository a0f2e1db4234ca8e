#pragma once

#include <filesystem>

#include "disents/pipeline.hpp"

namespace disents {

/// Writes one little-endian float64 file per parameter and per EMA
/// signature into `dir`, plus manifest.json listing name, file, shape and
/// dtype of each array.
void save_checkpoint(const DisenTSModel& model, const std::filesystem::path& dir);

/// Loads arrays saved by save_checkpoint into an already configured model.
/// Throws ShapeError when the checkpoint does not fit the model's config and
/// Error when files are missing.
void load_checkpoint(DisenTSModel& model, const std::filesystem::path& dir);

}  // namespace disents
