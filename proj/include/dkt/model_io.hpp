#pragma once

#include <filesystem>
#include <utility>

#include "dkt/model.hpp"

namespace dkt {

// Versioned JSON model format, format_version 1. Matrices are arrays of row
// arrays; doubles are written with round-trip precision, so
// load_model(save_model(m)) is bit-identical to m.
void save_model(const ModelParams& params, const ModelConfig& cfg, const std::filesystem::path& path);

// Throws ModelVersionError / ModelDimensionError / ModelFormatError / IoError.
std::pair<ModelParams, ModelConfig> load_model(const std::filesystem::path& path);

}  // namespace dkt
