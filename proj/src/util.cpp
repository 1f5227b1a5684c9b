#include "zsr/util.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "zsr/error.hpp"

namespace zsr {

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[i] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

float uniform(Rng& rng, float lo, float hi) {
  std::uniform_real_distribution<float> d(lo, hi);
  return d(rng);
}

float normal(Rng& rng, float mean, float stddev) {
  std::normal_distribution<float> d(mean, stddev);
  return d(rng);
}

std::vector<float> unit_vector(Rng& rng, std::size_t dim) {
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> v(dim);
  double ss = 0;
  do {
    ss = 0;
    for (auto& x : v) {
      x = d(rng);
      ss += x * x;
    }
  } while (ss < 1e-24);
  const double inv = 1.0 / std::sqrt(ss);
  std::vector<float> out(dim);
  for (std::size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(v[i] * inv);
  return out;
}

std::string rng_state(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

Rng rng_from_state(const std::string& state) {
  Rng rng;
  std::istringstream is(state);
  is >> rng;
  if (!is) throw ValidationError("invalid RNG state string");
  return rng;
}

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const char> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  write_file(path, std::span<const char>(text.data(), text.size()));
}

std::string read_text(const std::filesystem::path& path) {
  auto bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

namespace {
template <typename U>
U to_le(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    U r = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      r = (r << 8) | (v & 0xff);
      v >>= 8;
    }
    return r;
  }
  return v;
}
}  // namespace

void append_f32le(std::vector<char>& out, std::span<const float> values) {
  const std::size_t base = out.size();
  out.resize(base + values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint32_t bits = to_le(std::bit_cast<std::uint32_t>(values[i]));
    std::memcpy(out.data() + base + i * 4, &bits, 4);
  }
}

std::vector<float> parse_f32le(std::span<const char> bytes) {
  if (bytes.size() % 4) throw ValidationError("f32 payload length not a multiple of 4");
  std::vector<float> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, bytes.data() + i * 4, 4);
    out[i] = std::bit_cast<float>(to_le(bits));
  }
  return out;
}

void append_u32le(std::vector<char>& out, std::span<const std::uint32_t> values) {
  const std::size_t base = out.size();
  out.resize(base + values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint32_t bits = to_le(values[i]);
    std::memcpy(out.data() + base + i * 4, &bits, 4);
  }
}

std::vector<std::uint32_t> parse_u32le(std::span<const char> bytes) {
  if (bytes.size() % 4) throw ValidationError("u32 payload length not a multiple of 4");
  std::vector<std::uint32_t> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, bytes.data() + i * 4, 4);
    out[i] = to_le(bits);
  }
  return out;
}

std::string hash_path(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(path)) {
      if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::uint64_t h = fnv1a64("");
    for (const auto& f : files) {
      const auto rel = fs::relative(f, path).generic_string();
      h = fnv1a64(rel, h);
      auto bytes = read_file(f);
      h = fnv1a64(std::string_view(bytes.data(), bytes.size()), h);
    }
    return hex64(h);
  }
  auto bytes = read_file(path);
  return hex64(fnv1a64(std::string_view(bytes.data(), bytes.size())));
}

}  // namespace zsr
