#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "zsr/tensor.hpp"

namespace zsr {

/// Architecture hyperparameters of the vision transformer. The parameter
/// count is a pure function of these values.
struct EncoderConfig {
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t patch = 4;
  std::size_t model_width = 64;
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t embed_dim = 32;

  std::size_t num_patches() const { return (height / patch) * (width / patch); }
  /// Patch tokens plus the class token.
  std::size_t base_sequence_length() const { return num_patches() + 1; }
  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

/// Parameters of one pre-norm transformer block.
std::size_t block_parameter_count(std::size_t model_width);

template <typename T>
struct NamedTensor {
  std::string name;
  BasicTensor<T> tensor;
};

template <typename T>
struct BlockParams {
  BasicTensor<T> ln1_gamma, ln1_beta;
  BasicTensor<T> qkv_weight, qkv_bias;  // [d, 3d], [3d]
  BasicTensor<T> out_weight, out_bias;  // [d, d], [d]
  BasicTensor<T> ln2_gamma, ln2_beta;
  BasicTensor<T> fc1_weight, fc1_bias;  // [d, 4d], [4d]
  BasicTensor<T> fc2_weight, fc2_bias;  // [4d, d], [d]
};

template <typename T>
struct VisionEncoderParams {
  EncoderConfig config;
  BasicTensor<T> patch_weight;  // [C*p*p, d]
  BasicTensor<T> patch_bias;    // [d]
  BasicTensor<T> class_token;   // [1, d]
  BasicTensor<T> position;      // [patches + 1, d]
  std::vector<BlockParams<T>> blocks;
  BasicTensor<T> post_gamma, post_beta;  // [d]
  BasicTensor<T> projection;             // [d, d_e]
};

enum class PromptKind { token, pixel };

/// Token prompts are a [k, d] block appended after the class and patch
/// tokens; their positional information lives inside the block itself.
/// Pixel prompts have the input image shape [C, H, W] and are added to the
/// image before clamping to [0, 1].
template <typename T>
struct PromptParams {
  PromptKind kind = PromptKind::token;
  BasicTensor<T> values;
};

template <typename T>
struct LinearHead {
  BasicTensor<T> weight;  // [d_e, classes]
  BasicTensor<T> bias;    // [classes]
  std::size_t num_classes() const { return bias.numel(); }
};

template <typename T>
struct Model {
  VisionEncoderParams<T> encoder;
  std::optional<PromptParams<T>> prompt;
  std::optional<LinearHead<T>> head;

  /// Every tensor exactly once, in a fixed order: encoder, prompt, head.
  std::vector<NamedTensor<T>> named_parameters() const;
  std::vector<BasicTensor<T>> parameters() const;
  std::size_t parameter_count() const;

  /// Deep copy with fresh storage.
  Model clone() const;
  template <typename U>
  Model<U> cast() const;
};

Model<float> init_model(const EncoderConfig& config, std::uint64_t seed);
/// Seeded normal init with σ = 0.02.
PromptParams<float> init_token_prompt(const EncoderConfig& config, std::size_t tokens,
                                      std::uint64_t seed);
/// Zero init, so the prompted model starts identical to the base model.
PromptParams<float> init_pixel_prompt(const EncoderConfig& config);
LinearHead<float> init_head(std::size_t embed_dim, std::size_t classes, std::uint64_t seed);

/// Sequence length seen by the transformer blocks.
template <typename T>
std::size_t sequence_length(const Model<T>& model);

/// images: [N, C, H, W] in [0, 1] -> embeddings [N, d_e].
template <typename T>
BasicTensor<T> encode_image(const Model<T>& model, const BasicTensor<T>& images);

/// Applies the linear head to embeddings: [N, d_e] -> [N, classes].
template <typename T>
BasicTensor<T> head_logits(const Model<T>& model, const BasicTensor<T>& embeddings);

enum class FreezePolicy { full, last_k_blocks, head_only, prompt_only };

struct FreezeSpec {
  FreezePolicy policy = FreezePolicy::full;
  std::size_t k = 0;  // blocks, for last_k_blocks
};

struct FreezeMask {
  std::vector<bool> trainable;  // parallel to Model::named_parameters()
  std::size_t trainable_count = 0;
  std::size_t total_count = 0;
  double trainable_fraction() const {
    return total_count ? static_cast<double>(trainable_count) / static_cast<double>(total_count) : 0.0;
  }
};

template <typename T>
FreezeMask freeze_mask(const Model<T>& model, const FreezeSpec& spec);
/// Sets requires_grad on every tensor according to the mask.
template <typename T>
void apply_freeze_mask(const Model<T>& model, const FreezeMask& mask);
template <typename T>
std::vector<BasicTensor<T>> trainable_tensors(const Model<T>& model, const FreezeMask& mask);

/// (1 − w)·a + w·b elementwise.
std::vector<float> interpolate_params(std::span<const float> a, std::span<const float> b, float w);
std::vector<float> flatten_params(const Model<float>& model);
void assign_flat_params(Model<float>& model, std::span<const float> flat);
/// Interpolates two models with identical manifests into a fresh model.
Model<float> interpolate_models(const Model<float>& a, const Model<float>& b, float w);
/// Throws ValidationError unless names and shapes match in order.
void check_same_manifest(const Model<float>& a, const Model<float>& b);

}  // namespace zsr
