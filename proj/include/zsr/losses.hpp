#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "zsr/tensor.hpp"
#include "zsr/text_bank.hpp"

namespace zsr {

enum class LossVariant { ce, adv, coadv, imgcoadv, tecoa };

LossVariant parse_loss_variant(const std::string& s);
std::string to_string(LossVariant v);

/// Contrastive temperature; always strictly positive.
class Temperature {
 public:
  explicit Temperature(double value);
  double value() const noexcept { return value_; }

 private:
  double value_;
};

inline constexpr double kDefaultTemperature = 0.07;

/// y_ij of the contrastive objectives, stored row-major as 0/1.
struct PairIndicator {
  std::size_t rows = 0, cols = 0;
  std::vector<std::uint8_t> values;
  bool at(std::size_t i, std::size_t j) const { return values[i * cols + j] != 0; }
};

/// Image i is positive with column labels[i].
PairIndicator label_pairs(std::span<const std::uint32_t> labels, std::size_t columns);
/// Two views of the same instance: positives on the diagonal.
PairIndicator instance_pairs(std::size_t n);

/// Random label codes replacing text rows in the one-hot contrastive variant.
struct EmbeddingDictionary {
  Tensor codes;  // [C, d_e], unit rows
  std::uint64_t seed = 0;
  bool trainable = false;
};

/// Seeded normal rows, then l2-normalized.
EmbeddingDictionary make_embedding_dictionary(std::size_t classes, std::size_t embed_dim,
                                              std::uint64_t seed, bool trainable = false);

/// Per-anchor image-to-text softmax cross-entropy over all bank rows:
/// −log softmax_j(cos(z_i, t_j)/τ) at j = labels[i]. Returns [N].
template <typename T>
BasicTensor<T> contrastive_per_example(const BasicTensor<T>& z_img, const BasicTensor<T>& rows,
                                       std::span<const std::uint32_t> labels, Temperature tau);

/// Mean of contrastive_per_example against a text bank.
Tensor contrastive_image_text(const Tensor& z_img, const TextBank& bank,
                              std::span<const std::uint32_t> labels, Temperature tau);
/// Same objective with dictionary codes as the columns.
Tensor coadv_loss(const Tensor& z_img, const EmbeddingDictionary& dict,
                  std::span<const std::uint32_t> labels, Temperature tau);

/// Anchor view a against every row of view b; positives on the diagonal.
/// Returns [N].
template <typename T>
BasicTensor<T> imgcoadv_per_example(const BasicTensor<T>& z_view_a, const BasicTensor<T>& z_view_b,
                                    Temperature tau);
template <typename T>
BasicTensor<T> imgcoadv_loss(const BasicTensor<T>& z_view_a, const BasicTensor<T>& z_view_b,
                             Temperature tau);

/// −log softmax(logits)[label]. Returns [N].
template <typename T>
BasicTensor<T> ce_per_example(const BasicTensor<T>& logits, std::span<const std::uint32_t> labels);
template <typename T>
BasicTensor<T> ce_loss(const BasicTensor<T>& logits, std::span<const std::uint32_t> labels);

}  // namespace zsr
