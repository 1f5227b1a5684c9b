#include "zsr/encoder.hpp"

#include <cmath>

#include "zsr/error.hpp"
#include "zsr/ops.hpp"
#include "zsr/util.hpp"

namespace zsr {

void EncoderConfig::validate() const {
  auto fail = [](const std::string& m) { throw ValidationError("encoder config: " + m); };
  if (!channels || !height || !width || !patch || !model_width || !layers || !heads || !embed_dim) {
    fail("all dimensions must be positive");
  }
  if (height % patch || width % patch) fail("image size must be divisible by the patch size");
  if (model_width % heads) fail("model_width must be divisible by heads");
}

std::size_t block_parameter_count(std::size_t d) { return 12 * d * d + 13 * d; }

namespace {

template <typename U, typename T, typename F>
Model<U> map_model(const Model<T>& m, F f) {
  Model<U> out;
  const auto& e = m.encoder;
  out.encoder.config = e.config;
  out.encoder.patch_weight = f(e.patch_weight);
  out.encoder.patch_bias = f(e.patch_bias);
  out.encoder.class_token = f(e.class_token);
  out.encoder.position = f(e.position);
  for (const auto& b : e.blocks) {
    BlockParams<U> nb;
    nb.ln1_gamma = f(b.ln1_gamma);
    nb.ln1_beta = f(b.ln1_beta);
    nb.qkv_weight = f(b.qkv_weight);
    nb.qkv_bias = f(b.qkv_bias);
    nb.out_weight = f(b.out_weight);
    nb.out_bias = f(b.out_bias);
    nb.ln2_gamma = f(b.ln2_gamma);
    nb.ln2_beta = f(b.ln2_beta);
    nb.fc1_weight = f(b.fc1_weight);
    nb.fc1_bias = f(b.fc1_bias);
    nb.fc2_weight = f(b.fc2_weight);
    nb.fc2_bias = f(b.fc2_bias);
    out.encoder.blocks.push_back(std::move(nb));
  }
  out.encoder.post_gamma = f(e.post_gamma);
  out.encoder.post_beta = f(e.post_beta);
  out.encoder.projection = f(e.projection);
  if (m.prompt) out.prompt = PromptParams<U>{m.prompt->kind, f(m.prompt->values)};
  if (m.head) out.head = LinearHead<U>{f(m.head->weight), f(m.head->bias)};
  return out;
}

Tensor normal_tensor(Rng& rng, Shape shape, float stddev) {
  auto t = Tensor::zeros(std::move(shape));
  for (float& v : t.data()) v = normal(rng, 0.0f, stddev);
  return t;
}

}  // namespace

template <typename T>
std::vector<NamedTensor<T>> Model<T>::named_parameters() const {
  std::vector<NamedTensor<T>> out;
  const auto& e = encoder;
  out.push_back({"encoder.patch_weight", e.patch_weight});
  out.push_back({"encoder.patch_bias", e.patch_bias});
  out.push_back({"encoder.class_token", e.class_token});
  out.push_back({"encoder.position", e.position});
  for (std::size_t i = 0; i < e.blocks.size(); ++i) {
    const auto& b = e.blocks[i];
    const std::string p = "encoder.blocks." + std::to_string(i) + ".";
    out.push_back({p + "ln1_gamma", b.ln1_gamma});
    out.push_back({p + "ln1_beta", b.ln1_beta});
    out.push_back({p + "qkv_weight", b.qkv_weight});
    out.push_back({p + "qkv_bias", b.qkv_bias});
    out.push_back({p + "out_weight", b.out_weight});
    out.push_back({p + "out_bias", b.out_bias});
    out.push_back({p + "ln2_gamma", b.ln2_gamma});
    out.push_back({p + "ln2_beta", b.ln2_beta});
    out.push_back({p + "fc1_weight", b.fc1_weight});
    out.push_back({p + "fc1_bias", b.fc1_bias});
    out.push_back({p + "fc2_weight", b.fc2_weight});
    out.push_back({p + "fc2_bias", b.fc2_bias});
  }
  out.push_back({"encoder.post_gamma", e.post_gamma});
  out.push_back({"encoder.post_beta", e.post_beta});
  out.push_back({"encoder.projection", e.projection});
  if (prompt) {
    out.push_back({prompt->kind == PromptKind::token ? "prompt.tokens" : "prompt.pixels",
                   prompt->values});
  }
  if (head) {
    out.push_back({"head.weight", head->weight});
    out.push_back({"head.bias", head->bias});
  }
  return out;
}

template <typename T>
std::vector<BasicTensor<T>> Model<T>::parameters() const {
  std::vector<BasicTensor<T>> out;
  for (auto& nt : named_parameters()) out.push_back(nt.tensor);
  return out;
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& nt : named_parameters()) n += nt.tensor.numel();
  return n;
}

template <typename T>
Model<T> Model<T>::clone() const {
  return map_model<T>(*this, [](const BasicTensor<T>& t) {
    auto c = t.detach();
    c.set_requires_grad(t.requires_grad());
    return c;
  });
}

template <typename T>
template <typename U>
Model<U> Model<T>::cast() const {
  return map_model<U>(*this, [](const BasicTensor<T>& t) { return t.template cast<U>(); });
}

template struct Model<float>;
template struct Model<double>;
template Model<double> Model<float>::cast<double>() const;
template Model<float> Model<double>::cast<float>() const;

Model<float> init_model(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(derive_seed(seed, 0x656e63));
  const std::size_t d = config.model_width;
  const std::size_t feat = config.channels * config.patch * config.patch;
  const float inv_d = 1.0f / std::sqrt(static_cast<float>(d));
  Model<float> m;
  auto& e = m.encoder;
  e.config = config;
  e.patch_weight = normal_tensor(rng, {feat, d}, 1.0f / std::sqrt(static_cast<float>(feat)));
  e.patch_bias = Tensor::zeros({d});
  e.class_token = normal_tensor(rng, {1, d}, 0.02f);
  e.position = normal_tensor(rng, {config.base_sequence_length(), d}, 0.02f);
  for (std::size_t l = 0; l < config.layers; ++l) {
    BlockParams<float> b;
    b.ln1_gamma = Tensor::full({d}, 1.0f);
    b.ln1_beta = Tensor::zeros({d});
    b.qkv_weight = normal_tensor(rng, {d, 3 * d}, inv_d);
    b.qkv_bias = Tensor::zeros({3 * d});
    b.out_weight = normal_tensor(rng, {d, d}, inv_d);
    b.out_bias = Tensor::zeros({d});
    b.ln2_gamma = Tensor::full({d}, 1.0f);
    b.ln2_beta = Tensor::zeros({d});
    b.fc1_weight = normal_tensor(rng, {d, 4 * d}, inv_d);
    b.fc1_bias = Tensor::zeros({4 * d});
    b.fc2_weight = normal_tensor(rng, {4 * d, d}, 0.5f * inv_d);
    b.fc2_bias = Tensor::zeros({d});
    e.blocks.push_back(std::move(b));
  }
  e.post_gamma = Tensor::full({d}, 1.0f);
  e.post_beta = Tensor::zeros({d});
  e.projection = normal_tensor(rng, {d, config.embed_dim}, inv_d);
  return m;
}

PromptParams<float> init_token_prompt(const EncoderConfig& config, std::size_t tokens,
                                      std::uint64_t seed) {
  if (tokens == 0) throw ValidationError("token prompt needs at least one token");
  Rng rng(derive_seed(seed, 0x707274));
  return {PromptKind::token, normal_tensor(rng, {tokens, config.model_width}, 0.02f)};
}

PromptParams<float> init_pixel_prompt(const EncoderConfig& config) {
  return {PromptKind::pixel, Tensor::zeros({config.channels, config.height, config.width})};
}

LinearHead<float> init_head(std::size_t embed_dim, std::size_t classes, std::uint64_t seed) {
  if (classes == 0) throw ValidationError("linear head needs at least one class");
  Rng rng(derive_seed(seed, 0x686564));
  return {normal_tensor(rng, {embed_dim, classes}, 1.0f / std::sqrt(static_cast<float>(embed_dim))),
          Tensor::zeros({classes})};
}

template <typename T>
std::size_t sequence_length(const Model<T>& model) {
  std::size_t n = model.encoder.config.base_sequence_length();
  if (model.prompt && model.prompt->kind == PromptKind::token) n += model.prompt->values.dim(0);
  return n;
}

template <typename T>
BasicTensor<T> encode_image(const Model<T>& model, const BasicTensor<T>& images) {
  using namespace ops;
  const auto& e = model.encoder;
  const auto& cfg = e.config;
  if (!images.defined() || images.rank() != 4 || images.dim(1) != cfg.channels ||
      images.dim(2) != cfg.height || images.dim(3) != cfg.width) {
    throw ShapeError("encode_image: expected images [N," + std::to_string(cfg.channels) + "," +
                     std::to_string(cfg.height) + "," + std::to_string(cfg.width) + "], got " +
                     (images.defined() ? shape_str(images.shape()) : std::string("undefined")));
  }
  BasicTensor<T> x = images;
  if (model.prompt && model.prompt->kind == PromptKind::pixel) {
    x = clamp(add_bias(x, model.prompt->values), 0.0, 1.0);
  }
  auto tokens = add_bias(matmul(patchify(x, cfg.patch), e.patch_weight), e.patch_bias);
  tokens = add_bias(concat_tokens(tokens, e.class_token, /*front=*/true), e.position);
  if (model.prompt && model.prompt->kind == PromptKind::token) {
    tokens = concat_tokens(tokens, model.prompt->values, /*front=*/false);
  }
  const std::size_t heads = cfg.heads;
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(cfg.model_width / heads));
  for (const auto& b : e.blocks) {
    auto h = layer_norm(tokens, b.ln1_gamma, b.ln1_beta);
    auto qkv = add_bias(matmul(h, b.qkv_weight), b.qkv_bias);
    auto q = split_heads(qkv, 0, heads);
    auto k = split_heads(qkv, 1, heads);
    auto v = split_heads(qkv, 2, heads);
    auto attn = softmax(scale(bmm(q, k, /*transpose_b=*/true), attn_scale));
    auto mixed = merge_heads(bmm(attn, v), heads);
    tokens = add(tokens, add_bias(matmul(mixed, b.out_weight), b.out_bias));
    auto h2 = layer_norm(tokens, b.ln2_gamma, b.ln2_beta);
    auto mlp = gelu(add_bias(matmul(h2, b.fc1_weight), b.fc1_bias));
    tokens = add(tokens, add_bias(matmul(mlp, b.fc2_weight), b.fc2_bias));
  }
  auto cls = layer_norm(select_token(tokens, 0), e.post_gamma, e.post_beta);
  return matmul(cls, e.projection);
}

template <typename T>
BasicTensor<T> head_logits(const Model<T>& model, const BasicTensor<T>& embeddings) {
  if (!model.head) throw ValidationError("head_logits: model has no linear head");
  return ops::add_bias(ops::matmul(embeddings, model.head->weight), model.head->bias);
}

template std::size_t sequence_length(const Model<float>&);
template std::size_t sequence_length(const Model<double>&);
template Tensor encode_image(const Model<float>&, const Tensor&);
template Tensor64 encode_image(const Model<double>&, const Tensor64&);
template Tensor head_logits(const Model<float>&, const Tensor&);
template Tensor64 head_logits(const Model<double>&, const Tensor64&);

template <typename T>
FreezeMask freeze_mask(const Model<T>& model, const FreezeSpec& spec) {
  const auto named = model.named_parameters();
  const std::size_t layers = model.encoder.blocks.size();
  if (spec.policy == FreezePolicy::last_k_blocks && (spec.k == 0 || spec.k > layers)) {
    throw ValidationError("freeze_mask: last_k_blocks(" + std::to_string(spec.k) +
                          ") needs 1 <= k <= " + std::to_string(layers));
  }
  if (spec.policy == FreezePolicy::head_only && !model.head) {
    throw ValidationError("freeze_mask: head_only requested but the model has no linear head");
  }
  if (spec.policy == FreezePolicy::prompt_only && !model.prompt) {
    throw ValidationError("freeze_mask: prompt_only requested but the model has no prompt");
  }
  FreezeMask mask;
  for (const auto& nt : named) {
    bool on = false;
    switch (spec.policy) {
      case FreezePolicy::full:
        on = true;
        break;
      case FreezePolicy::last_k_blocks:
        if (nt.name.rfind("encoder.blocks.", 0) == 0) {
          const std::size_t idx = std::stoul(nt.name.substr(15));
          on = idx >= layers - spec.k;
        }
        break;
      case FreezePolicy::head_only:
        on = nt.name.rfind("head.", 0) == 0;
        break;
      case FreezePolicy::prompt_only:
        on = nt.name.rfind("prompt.", 0) == 0;
        break;
    }
    mask.trainable.push_back(on);
    mask.total_count += nt.tensor.numel();
    if (on) mask.trainable_count += nt.tensor.numel();
  }
  return mask;
}

template <typename T>
void apply_freeze_mask(const Model<T>& model, const FreezeMask& mask) {
  auto named = model.named_parameters();
  if (named.size() != mask.trainable.size()) {
    throw ValidationError("apply_freeze_mask: mask does not match model manifest");
  }
  for (std::size_t i = 0; i < named.size(); ++i) named[i].tensor.set_requires_grad(mask.trainable[i]);
}

template <typename T>
std::vector<BasicTensor<T>> trainable_tensors(const Model<T>& model, const FreezeMask& mask) {
  auto named = model.named_parameters();
  if (named.size() != mask.trainable.size()) {
    throw ValidationError("trainable_tensors: mask does not match model manifest");
  }
  std::vector<BasicTensor<T>> out;
  for (std::size_t i = 0; i < named.size(); ++i) {
    if (mask.trainable[i]) out.push_back(named[i].tensor);
  }
  return out;
}

template FreezeMask freeze_mask(const Model<float>&, const FreezeSpec&);
template FreezeMask freeze_mask(const Model<double>&, const FreezeSpec&);
template void apply_freeze_mask(const Model<float>&, const FreezeMask&);
template void apply_freeze_mask(const Model<double>&, const FreezeMask&);
template std::vector<Tensor> trainable_tensors(const Model<float>&, const FreezeMask&);
template std::vector<Tensor64> trainable_tensors(const Model<double>&, const FreezeMask&);

std::vector<float> interpolate_params(std::span<const float> a, std::span<const float> b, float w) {
  if (a.size() != b.size()) {
    throw ValidationError("interpolate_params: length mismatch " + std::to_string(a.size()) +
                          " vs " + std::to_string(b.size()));
  }
  if (!(w >= 0.0f && w <= 1.0f)) throw ValidationError("interpolate_params: w must be in [0, 1]");
  std::vector<float> out(a.size());
  const float keep = 1.0f - w;
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = keep * a[i] + w * b[i];
  return out;
}

std::vector<float> flatten_params(const Model<float>& model) {
  std::vector<float> flat;
  flat.reserve(model.parameter_count());
  for (const auto& nt : model.named_parameters()) {
    auto d = nt.tensor.data();
    flat.insert(flat.end(), d.begin(), d.end());
  }
  return flat;
}

void assign_flat_params(Model<float>& model, std::span<const float> flat) {
  if (flat.size() != model.parameter_count()) {
    throw ValidationError("assign_flat_params: expected " + std::to_string(model.parameter_count()) +
                          " values, got " + std::to_string(flat.size()));
  }
  std::size_t off = 0;
  for (auto& nt : model.named_parameters()) {
    auto d = nt.tensor.data();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), d.size(), d.begin());
    off += d.size();
  }
}

void check_same_manifest(const Model<float>& a, const Model<float>& b) {
  if (!(a.encoder.config == b.encoder.config)) {
    throw ValidationError("model manifests differ: encoder architectures do not match");
  }
  const auto na = a.named_parameters();
  const auto nb = b.named_parameters();
  if (na.size() != nb.size()) {
    throw ValidationError("model manifests differ: " + std::to_string(na.size()) + " vs " +
                          std::to_string(nb.size()) + " tensors");
  }
  for (std::size_t i = 0; i < na.size(); ++i) {
    if (na[i].name != nb[i].name || na[i].tensor.shape() != nb[i].tensor.shape()) {
      throw ValidationError("model manifests differ at " + na[i].name + " " +
                            shape_str(na[i].tensor.shape()) + " vs " + nb[i].name + " " +
                            shape_str(nb[i].tensor.shape()));
    }
  }
}

Model<float> interpolate_models(const Model<float>& a, const Model<float>& b, float w) {
  check_same_manifest(a, b);
  auto out = a.clone();
  auto flat = interpolate_params(flatten_params(a), flatten_params(b), w);
  assign_flat_params(out, flat);
  return out;
}

}  // namespace zsr
