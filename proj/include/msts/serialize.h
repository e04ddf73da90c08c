#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "msts/tensor.h"

namespace msts {

using NamedTensor = std::pair<std::string, Tensor>;

/// Tensor bundle on disk: a little-endian raw buffer (`<stem>.bin`) and a JSON
/// manifest (`<stem>.json`) whose "tensors" array lists name, dtype, shape and
/// byte offset of each tensor. Extra top-level manifest fields are preserved.
struct TensorBundle {
    nlohmann::ordered_json meta = nlohmann::ordered_json::object();
    std::vector<NamedTensor> tensors;

    const Tensor* find(const std::string& name) const;
};

void save_bundle(const std::filesystem::path& manifest_path, const TensorBundle& bundle);
TensorBundle load_bundle(const std::filesystem::path& manifest_path);

/// Path of the raw buffer that accompanies a manifest.
std::filesystem::path bundle_data_path(const std::filesystem::path& manifest_path);

}  // namespace msts
