#include "zsr/dataset.hpp"

#include <cmath>
#include <cstring>

#include "json.hpp"
#include "zsr/error.hpp"
#include "zsr/util.hpp"

namespace zsr {

void Dataset::validate() const {
  if (!images.defined() || images.rank() != 4) throw ValidationError("dataset images must be [N, C, H, W]");
  for (float v : images.data()) {
    if (std::isnan(v)) throw ValidationError("dataset contains NaN pixels");
    if (!(v >= 0.0f && v <= 1.0f)) throw ValidationError("dataset pixels must lie in [0, 1]");
  }
  if (labeled) {
    if (labels.size() != size()) throw ValidationError("dataset label count differs from image count");
    for (auto y : labels) {
      if (y >= classes.size()) throw ValidationError("dataset label " + std::to_string(y) + " out of range");
    }
  } else if (!labels.empty()) {
    throw ValidationError("unlabeled dataset carries labels");
  }
}

Tensor gather_images(const Dataset& data, std::span<const std::size_t> indices) {
  Shape shape = data.images.shape();
  const std::size_t per = data.images.numel() / shape[0];
  shape[0] = indices.size();
  auto out = Tensor::zeros(shape);
  const float* src = data.images.ptr();
  float* dst = out.ptr();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= data.size()) throw ValidationError("dataset index out of range");
    std::memcpy(dst + i * per, src + indices[i] * per, per * sizeof(float));
  }
  return out;
}

std::vector<std::uint32_t> gather_labels(const Dataset& data, std::span<const std::size_t> indices) {
  std::vector<std::uint32_t> out;
  if (!data.labeled) return out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(data.labels.at(i));
  return out;
}

Dataset subset(const Dataset& data, std::span<const std::size_t> indices) {
  Dataset out;
  out.classes = data.classes;
  out.labeled = data.labeled;
  out.split = data.split;
  out.images = gather_images(data, indices);
  out.labels = gather_labels(data, indices);
  return out;
}

void save_dataset(const Dataset& data, const std::filesystem::path& dir) {
  data.validate();
  nlohmann::json meta;
  meta["classes"] = data.classes;
  meta["image_shape"] = data.image_shape();
  meta["count"] = data.size();
  meta["dtype"] = "f32le";
  meta["labeled"] = data.labeled;
  if (!data.split.empty()) meta["split"] = data.split;
  std::filesystem::create_directories(dir);
  write_text(dir / "meta.json", meta.dump(2) + "\n");
  std::vector<char> bytes;
  append_f32le(bytes, data.images.data());
  write_file(dir / "images.bin", bytes);
  if (data.labeled) {
    std::vector<char> lb;
    append_u32le(lb, data.labels);
    write_file(dir / "labels.bin", lb);
  }
}

Dataset load_dataset(const std::filesystem::path& dir) {
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_text(dir / "meta.json"));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("meta.json: " + std::string(e.what()));
  }
  Dataset out;
  try {
    for (const auto& [key, _] : meta.items()) {
      if (key != "classes" && key != "image_shape" && key != "count" && key != "dtype" &&
          key != "labeled" && key != "split") {
        throw ValidationError("meta.json: unknown key '" + key + "'");
      }
    }
    if (meta.at("dtype").get<std::string>() != "f32le") throw ValidationError("meta.json: dtype must be f32le");
    out.classes = meta.at("classes").get<std::vector<std::string>>();
    out.labeled = meta.at("labeled").get<bool>();
    out.split = meta.value("split", std::string());
    auto image_shape = meta.at("image_shape").get<Shape>();
    const auto count = meta.at("count").get<std::size_t>();
    if (image_shape.size() != 3) throw ValidationError("meta.json: image_shape must be [C, H, W]");
    Shape shape{count, image_shape[0], image_shape[1], image_shape[2]};
    const auto bytes = read_file(dir / "images.bin");
    if (bytes.size() != shape_numel(shape) * 4) {
      throw ValidationError("images.bin size mismatch: meta count " + std::to_string(count) + " needs " +
                            std::to_string(shape_numel(shape) * 4) + " bytes, file has " +
                            std::to_string(bytes.size()));
    }
    out.images = Tensor::from_data(shape, parse_f32le(bytes));
    if (out.labeled) {
      const auto lb = read_file(dir / "labels.bin");
      if (lb.size() != count * 4) {
        throw ValidationError("labels.bin size mismatch: meta count " + std::to_string(count) + ", file has " +
                              std::to_string(lb.size()) + " bytes");
      }
      out.labels = parse_u32le(lb);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("meta.json: " + std::string(e.what()));
  }
  out.validate();
  return out;
}

}  // namespace zsr
