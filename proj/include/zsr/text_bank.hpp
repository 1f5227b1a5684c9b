#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "zsr/tensor.hpp"

namespace zsr {

enum class BankMode { compositional, hashed, file };

/// Frozen class-name embeddings standing in for a text encoder. Rows are unit
/// norm and never require gradients.
struct TextBank {
  std::vector<std::string> names;
  Tensor embeddings;  // [C, d_e]
  std::string provenance;  // "generated" or "loaded"

  std::size_t size() const { return names.size(); }
  std::size_t dim() const { return embeddings.dim(1); }
  std::size_t index_of(const std::string& name) const;
};

struct TextBankOptions {
  BankMode mode = BankMode::compositional;
  std::size_t embed_dim = 32;
  std::uint64_t seed = 0;
  /// Scale of the per-class perturbation in compositional mode.
  float noise_sigma = 0.05f;
  /// Source file for BankMode::file.
  std::filesystem::path file;
};

/// Compositional names have the form "<attr1> <attr2>"; each attribute gets a
/// seeded unit code per slot, and a class embedding is the normalized
/// concatenation of its two codes plus σ-scaled seeded noise. Codes depend
/// only on (seed, slot, attribute), so a class has the same row in every bank.
TextBank build_text_bank(const std::vector<std::string>& class_names, const TextBankOptions& options);

/// JSON {"d_e": int, "names": [...], "rows": [[...], ...]}.
void save_text_bank(const TextBank& bank, const std::filesystem::path& path);
/// Rows whose norm is off by more than 1e-6 are re-normalized; unit rows are
/// kept bit-exact.
TextBank load_text_bank(const std::filesystem::path& path);

/// Rows for `names`, in that order.
TextBank select_classes(const TextBank& bank, const std::vector<std::string>& names);

}  // namespace zsr
