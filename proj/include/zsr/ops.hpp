#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "zsr/tensor.hpp"

/// Differentiable primitives. Every op records a backward rule on the active
/// tape when at least one input has requires_grad; otherwise it is a plain
/// forward computation. Broadcasting is limited to what the encoder needs:
/// `add_bias` adds a tensor whose shape equals the trailing dims of the other.
namespace zsr::ops {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kNormFloor = 1e-12;

/// a: [..., K], b: [K, N] (or [N, K] with transpose_b) -> [..., N].
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b, bool transpose_b = false);

/// Batched: a: [B, M, K], b: [B, K, N] (or [B, N, K] with transpose_b) -> [B, M, N].
template <typename T>
BasicTensor<T> bmm(const BasicTensor<T>& a, const BasicTensor<T>& b, bool transpose_b = false);

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> add_bias(const BasicTensor<T>& a, const BasicTensor<T>& bias);
template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, double s);

template <typename T>
BasicTensor<T> clamp(const BasicTensor<T>& a, double lo, double hi);
/// sign(0) == 0. Zero gradient everywhere.
template <typename T>
BasicTensor<T> sign(const BasicTensor<T>& a);
/// tanh approximation.
template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& a);
template <typename T>
BasicTensor<T> log(const BasicTensor<T>& a);

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& a);
template <typename T>
BasicTensor<T> log_softmax(const BasicTensor<T>& a);
template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& a, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta);
template <typename T>
BasicTensor<T> l2_normalize(const BasicTensor<T>& a);
/// a: [N, d], b: [M, d] -> [N, M] of cosine similarities.
template <typename T>
BasicTensor<T> cosine_similarity_matrix(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// a: [R, ...] -> [indices.size(), ...].
template <typename T>
BasicTensor<T> gather_rows(const BasicTensor<T>& a, std::span<const std::uint32_t> indices);
/// a: [N, C] -> [N] with out[i] = a[i, indices[i]].
template <typename T>
BasicTensor<T> select_per_row(const BasicTensor<T>& a, std::span<const std::uint32_t> indices);

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a);
template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& a);

// Layout ops used by the vision transformer.

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape);
/// [N, C, H, W] -> [N, (H/p)(W/p), C*p*p]; patch features ordered (c, row, col).
template <typename T>
BasicTensor<T> patchify(const BasicTensor<T>& images, std::size_t patch);
/// [N, T, 3*d] -> [N*heads, T, d/heads] for part 0 (q), 1 (k) or 2 (v).
template <typename T>
BasicTensor<T> split_heads(const BasicTensor<T>& qkv, std::size_t part, std::size_t heads);
/// [N*heads, T, dh] -> [N, T, heads*dh].
template <typename T>
BasicTensor<T> merge_heads(const BasicTensor<T>& a, std::size_t heads);
/// Concatenates a shared [k, d] block to every sequence of x: [N, T, d].
template <typename T>
BasicTensor<T> concat_tokens(const BasicTensor<T>& x, const BasicTensor<T>& shared, bool front);
/// [N, T, d] -> [N, d].
template <typename T>
BasicTensor<T> select_token(const BasicTensor<T>& x, std::size_t index);

}  // namespace zsr::ops
