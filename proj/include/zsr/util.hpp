#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace zsr {

using Rng = std::mt19937_64;

/// 64-bit FNV-1a. Stable across platforms, used for seeding and manifests.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

/// Mixes a base seed with a stream id (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

float uniform(Rng& rng, float lo, float hi);
float normal(Rng& rng, float mean, float stddev);
/// Uniform point on the unit sphere in `dim` dimensions.
std::vector<float> unit_vector(Rng& rng, std::size_t dim);

std::string rng_state(const Rng& rng);
Rng rng_from_state(const std::string& state);

std::vector<char> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const char> bytes);
void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

/// Little-endian f32/u32 encoding independent of host byte order.
void append_f32le(std::vector<char>& out, std::span<const float> values);
std::vector<float> parse_f32le(std::span<const char> bytes);
void append_u32le(std::vector<char>& out, std::span<const std::uint32_t> values);
std::vector<std::uint32_t> parse_u32le(std::span<const char> bytes);

/// Hash of a file, or of every regular file under a directory in sorted order.
std::string hash_path(const std::filesystem::path& path);

}  // namespace zsr
