#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "flowmil/nn/layers.hpp"

namespace flowmil::nn {

/// Named layers in serialization order. See docs/formats.md for the exact
/// FMNN byte layout.
using NamedLayers = std::vector<std::pair<std::string, LayerParams>>;

void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<std::pair<std::string, const LayerParams*>>& layers);

NamedLayers load_checkpoint(const std::filesystem::path& path);

const LayerParams& find_layer(const NamedLayers& layers, const std::string& name);

}  // namespace flowmil::nn
