#pragma once

#include <filesystem>
#include <vector>

#include "json.hpp"
#include "zsr/encoder.hpp"

namespace zsr {

/// Checkpoint layout: 8-byte magic "ZSRCKPT1", u64 little-endian header
/// length, a JSON header (architecture, prompt/head description, tensor
/// manifest with names, shapes and byte offsets into the payload, free-form
/// "meta"), then the payload of little-endian f32 values.
struct LoadedCheckpoint {
  Model<float> model;
  nlohmann::json meta;
  /// Tensors in the manifest that are not model parameters (e.g. optimizer
  /// velocities), in file order.
  std::vector<NamedTensor<float>> extra;
};

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model,
                     const nlohmann::json& meta = nlohmann::json::object(),
                     const std::vector<NamedTensor<float>>& extra = {});
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

nlohmann::json encoder_config_to_json(const EncoderConfig& config);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);

}  // namespace zsr
