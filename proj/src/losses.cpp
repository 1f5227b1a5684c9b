#include "zsr/losses.hpp"

#include <cmath>

#include "zsr/error.hpp"
#include "zsr/ops.hpp"
#include "zsr/util.hpp"

namespace zsr {

LossVariant parse_loss_variant(const std::string& s) {
  if (s == "ce") return LossVariant::ce;
  if (s == "adv") return LossVariant::adv;
  if (s == "coadv") return LossVariant::coadv;
  if (s == "imgcoadv") return LossVariant::imgcoadv;
  if (s == "tecoa") return LossVariant::tecoa;
  throw ValidationError("unknown loss_variant '" + s + "' (expected ce|adv|coadv|imgcoadv|tecoa)");
}

std::string to_string(LossVariant v) {
  switch (v) {
    case LossVariant::ce: return "ce";
    case LossVariant::adv: return "adv";
    case LossVariant::coadv: return "coadv";
    case LossVariant::imgcoadv: return "imgcoadv";
    case LossVariant::tecoa: return "tecoa";
  }
  return "?";
}

Temperature::Temperature(double value) : value_(value) {
  if (!(value > 0) || !std::isfinite(value)) {
    throw ValidationError("temperature tau (τ) must be > 0, got " + std::to_string(value));
  }
}

PairIndicator label_pairs(std::span<const std::uint32_t> labels, std::size_t columns) {
  PairIndicator p{labels.size(), columns, std::vector<std::uint8_t>(labels.size() * columns, 0)};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= columns) throw ValidationError("label out of range");
    p.values[i * columns + labels[i]] = 1;
  }
  return p;
}

PairIndicator instance_pairs(std::size_t n) {
  PairIndicator p{n, n, std::vector<std::uint8_t>(n * n, 0)};
  for (std::size_t i = 0; i < n; ++i) p.values[i * n + i] = 1;
  return p;
}

EmbeddingDictionary make_embedding_dictionary(std::size_t classes, std::size_t embed_dim,
                                              std::uint64_t seed, bool trainable) {
  if (classes == 0 || embed_dim == 0) throw ValidationError("embedding dictionary needs classes and dims");
  Rng rng(derive_seed(seed, 0x646963));
  EmbeddingDictionary dict;
  dict.seed = seed;
  dict.trainable = trainable;
  dict.codes = Tensor::zeros({classes, embed_dim});
  for (std::size_t c = 0; c < classes; ++c) {
    auto v = unit_vector(rng, embed_dim);
    std::copy(v.begin(), v.end(), dict.codes.data().begin() + static_cast<std::ptrdiff_t>(c * embed_dim));
  }
  dict.codes.set_requires_grad(trainable);
  return dict;
}

namespace {
void check_labels(const char* op, std::span<const std::uint32_t> labels, std::size_t n,
                  std::size_t classes) {
  if (labels.size() != n) {
    throw ValidationError(std::string(op) + ": " + std::to_string(labels.size()) + " labels for " +
                          std::to_string(n) + " examples");
  }
  for (auto y : labels) {
    if (y >= classes) {
      throw ValidationError(std::string(op) + ": label " + std::to_string(y) + " out of range [0, " +
                            std::to_string(classes) + ")");
    }
  }
}
}  // namespace

template <typename T>
BasicTensor<T> contrastive_per_example(const BasicTensor<T>& z_img, const BasicTensor<T>& rows,
                                       std::span<const std::uint32_t> labels, Temperature tau) {
  check_labels("contrastive loss", labels, z_img.dim(0), rows.dim(0));
  auto logits = ops::scale(ops::cosine_similarity_matrix(z_img, rows), 1.0 / tau.value());
  return ops::scale(ops::select_per_row(ops::log_softmax(logits), labels), -1.0);
}

Tensor contrastive_image_text(const Tensor& z_img, const TextBank& bank,
                              std::span<const std::uint32_t> labels, Temperature tau) {
  return ops::mean(contrastive_per_example(z_img, bank.embeddings, labels, tau));
}

Tensor coadv_loss(const Tensor& z_img, const EmbeddingDictionary& dict,
                  std::span<const std::uint32_t> labels, Temperature tau) {
  return ops::mean(contrastive_per_example(z_img, dict.codes, labels, tau));
}

template <typename T>
BasicTensor<T> imgcoadv_per_example(const BasicTensor<T>& z_view_a, const BasicTensor<T>& z_view_b,
                                    Temperature tau) {
  if (z_view_a.rank() != 2 || z_view_a.shape() != z_view_b.shape()) {
    throw ShapeError("imgcoadv loss: view shapes " + shape_str(z_view_a.shape()) + " vs " +
                     shape_str(z_view_b.shape()));
  }
  const std::size_t n = z_view_a.dim(0);
  std::vector<std::uint32_t> diag(n);
  for (std::size_t i = 0; i < n; ++i) diag[i] = static_cast<std::uint32_t>(i);
  return contrastive_per_example(z_view_a, z_view_b, diag, tau);
}

template <typename T>
BasicTensor<T> imgcoadv_loss(const BasicTensor<T>& z_view_a, const BasicTensor<T>& z_view_b,
                             Temperature tau) {
  return ops::mean(imgcoadv_per_example(z_view_a, z_view_b, tau));
}

template <typename T>
BasicTensor<T> ce_per_example(const BasicTensor<T>& logits, std::span<const std::uint32_t> labels) {
  if (logits.rank() != 2) throw ShapeError("ce loss: logits must be [N, C], got " + shape_str(logits.shape()));
  check_labels("ce loss", labels, logits.dim(0), logits.dim(1));
  return ops::scale(ops::select_per_row(ops::log_softmax(logits), labels), -1.0);
}

template <typename T>
BasicTensor<T> ce_loss(const BasicTensor<T>& logits, std::span<const std::uint32_t> labels) {
  return ops::mean(ce_per_example(logits, labels));
}

#define ZSR_INSTANTIATE_LOSSES(T)                                                               \
  template BasicTensor<T> contrastive_per_example(const BasicTensor<T>&, const BasicTensor<T>&, \
                                                  std::span<const std::uint32_t>, Temperature); \
  template BasicTensor<T> imgcoadv_per_example(const BasicTensor<T>&, const BasicTensor<T>&,    \
                                               Temperature);                                    \
  template BasicTensor<T> imgcoadv_loss(const BasicTensor<T>&, const BasicTensor<T>&, Temperature); \
  template BasicTensor<T> ce_per_example(const BasicTensor<T>&, std::span<const std::uint32_t>); \
  template BasicTensor<T> ce_loss(const BasicTensor<T>&, std::span<const std::uint32_t>);

ZSR_INSTANTIATE_LOSSES(float)
ZSR_INSTANTIATE_LOSSES(double)

#undef ZSR_INSTANTIATE_LOSSES

}  // namespace zsr
