#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "zsr/tensor.hpp"

namespace zsr {

/// Images [N, C, H, W] in [0, 1] with optional labels.
struct Dataset {
  std::vector<std::string> classes;
  Tensor images;
  std::vector<std::uint32_t> labels;  // empty when unlabeled
  bool labeled = true;
  std::string split;

  std::size_t size() const { return images.defined() ? images.dim(0) : 0; }
  Shape image_shape() const { return Shape(images.shape().begin() + 1, images.shape().end()); }
  /// Throws ValidationError on out-of-range pixels or labels.
  void validate() const;
};

/// Rows `indices`, in that order.
Dataset subset(const Dataset& data, std::span<const std::size_t> indices);
Tensor gather_images(const Dataset& data, std::span<const std::size_t> indices);
std::vector<std::uint32_t> gather_labels(const Dataset& data, std::span<const std::size_t> indices);

/// dir/meta.json, dir/images.bin, dir/labels.bin (labeled only).
void save_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace zsr
