#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "zsr/dataset.hpp"
#include "zsr/text_bank.hpp"

namespace zsr {

/// Colored-shape classes named "<color> <shape>". By default a class is in
/// the train set when (color index + shape index) is even, so every held-out
/// class shares its color and its shape with some train class.
struct SynthSpec {
  std::vector<std::string> colors{"red", "green", "blue", "yellow"};
  std::vector<std::string> shapes{"circle", "square", "triangle", "cross"};
  std::vector<std::string> train_classes;
  /// Disjoint groups of held-out classes, each evaluated as its own task.
  std::vector<std::vector<std::string>> heldout_groups;
  std::size_t image_size = 32;
  std::size_t pretrain_per_class = 100;
  std::size_t train_per_class = 100;
  std::size_t test_per_class = 50;
  std::size_t heldout_per_class = 50;
  float render_noise = 0.05f;
  std::uint64_t seed = 0;
  std::size_t embed_dim = 32;
  float bank_noise = 0.05f;

  std::vector<std::string> all_classes() const;
  std::vector<std::string> heldout_classes() const;
  /// Throws ValidationError on overlapping partitions, unknown attributes or a
  /// held-out class without an attribute seen in training.
  void validate() const;
};

SynthSpec default_synth_spec(std::uint64_t seed = 0);

struct SynthData {
  Dataset pretrain;    // every class
  Dataset train;       // train classes
  Dataset train_test;  // fresh draws of the train classes
  std::vector<Dataset> heldout;
  TextBank all_bank;
  TextBank train_bank;
  std::vector<TextBank> heldout_banks;
};

/// Renders `per_class` images for each class, in class order. `stream`
/// separates the random draws of different splits.
Dataset render_classes(const SynthSpec& spec, const std::vector<std::string>& classes,
                       std::size_t per_class, std::uint64_t stream, const std::string& split);

SynthData gen_synthetic(const SynthSpec& spec);

/// Layout: <dir>/<split>/{meta.json,images.bin,labels.bin} for pretrain,
/// train, train_test and heldout_<i>; banks in <dir>/banks/<split>.json.
void save_synthetic(const SynthData& data, const std::filesystem::path& dir);

}  // namespace zsr
