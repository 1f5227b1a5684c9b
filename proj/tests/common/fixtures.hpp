// Small models and datasets shared by the unit tests.
#pragma once

#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "zsr/dataset.hpp"
#include "zsr/encoder.hpp"
#include "zsr/synth.hpp"
#include "zsr/text_bank.hpp"

namespace zsr::testing {

inline EncoderConfig tiny_encoder() {
  EncoderConfig c;
  c.height = c.width = 16;
  c.patch = 4;
  c.model_width = 16;
  c.layers = 2;
  c.heads = 2;
  c.embed_dim = 8;
  return c;
}

inline SynthSpec tiny_spec(std::uint64_t seed = 0) {
  auto s = default_synth_spec(seed);
  s.image_size = 16;
  s.embed_dim = 8;
  return s;
}

inline const std::vector<std::string>& tiny_classes() {
  static const std::vector<std::string> c{"red circle", "green square", "blue triangle"};
  return c;
}

inline Dataset tiny_dataset(std::size_t per_class = 4, std::uint64_t stream = 1) {
  return render_classes(tiny_spec(), tiny_classes(), per_class, stream, "train");
}

inline TextBank tiny_bank(const std::vector<std::string>& classes = tiny_classes()) {
  TextBankOptions o;
  o.embed_dim = 8;
  return build_text_bank(classes, o);
}

template <typename T>
bool bit_equal(const std::vector<T>& a, const std::vector<T>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
}

inline bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.ptr(), b.ptr(), a.numel() * sizeof(float)) == 0;
}

inline std::filesystem::path fresh_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("zsr_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace zsr::testing
