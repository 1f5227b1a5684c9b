#include "zsr/text_bank.hpp"

#include <cmath>
#include "json.hpp"
#include <set>
#include <sstream>

#include "zsr/error.hpp"
#include "zsr/util.hpp"

namespace zsr {

using json = nlohmann::json;

std::size_t TextBank::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return i;
  }
  throw ValidationError("text bank has no class named '" + name + "'");
}

namespace {

void check_unique(const std::vector<std::string>& names) {
  std::set<std::string> seen;
  for (const auto& n : names) {
    if (!seen.insert(n).second) throw ValidationError("duplicate class name '" + n + "'");
  }
}

std::vector<std::string> split_words(const std::string& s) {
  std::istringstream is(s);
  std::vector<std::string> words;
  for (std::string w; is >> w;) words.push_back(w);
  return words;
}

void normalize_row(std::span<float> row) {
  double ss = 0;
  for (float v : row) ss += static_cast<double>(v) * v;
  const double nrm = std::max(std::sqrt(ss), 1e-12);
  for (float& v : row) v = static_cast<float>(v / nrm);
}

}  // namespace

TextBank build_text_bank(const std::vector<std::string>& class_names, const TextBankOptions& options) {
  if (options.mode == BankMode::file) {
    auto loaded = load_text_bank(options.file);
    return class_names.empty() ? loaded : select_classes(loaded, class_names);
  }
  if (class_names.empty()) throw ValidationError("text bank needs at least one class");
  check_unique(class_names);
  const std::size_t d = options.embed_dim;
  if (d < 2) throw ValidationError("text bank embedding dimension must be >= 2");

  TextBank bank;
  bank.names = class_names;
  bank.provenance = "generated";
  bank.embeddings = Tensor::zeros({class_names.size(), d});
  for (std::size_t c = 0; c < class_names.size(); ++c) {
    auto row = bank.embeddings.data().subspan(c * d, d);
    const auto& name = class_names[c];
    if (options.mode == BankMode::hashed) {
      Rng rng(derive_seed(options.seed, fnv1a64("name:" + name)));
      auto v = unit_vector(rng, d);
      std::copy(v.begin(), v.end(), row.begin());
      continue;
    }
    const auto words = split_words(name);
    if (words.size() != 2) {
      throw ValidationError("compositional class name '" + name +
                            "' must have exactly two attributes, e.g. \"red circle\"");
    }
    const std::size_t half = d / 2;
    const std::size_t widths[2] = {half, d - half};
    std::size_t off = 0;
    for (int slot = 0; slot < 2; ++slot) {
      Rng rng(derive_seed(options.seed,
                          fnv1a64("attr" + std::to_string(slot) + ":" + words[slot])));
      auto code = unit_vector(rng, widths[slot]);
      std::copy(code.begin(), code.end(), row.begin() + static_cast<std::ptrdiff_t>(off));
      off += widths[slot];
    }
    Rng noise_rng(derive_seed(options.seed, fnv1a64("noise:" + name)));
    for (float& v : row) v += options.noise_sigma * normal(noise_rng, 0.0f, 1.0f);
    normalize_row(row);
  }
  return bank;
}

void save_text_bank(const TextBank& bank, const std::filesystem::path& path) {
  json j;
  j["d_e"] = bank.dim();
  j["names"] = bank.names;
  json rows = json::array();
  const std::size_t d = bank.dim();
  for (std::size_t c = 0; c < bank.size(); ++c) {
    auto row = bank.embeddings.data().subspan(c * d, d);
    rows.push_back(std::vector<float>(row.begin(), row.end()));
  }
  j["rows"] = std::move(rows);
  write_text(path, j.dump());
}

TextBank load_text_bank(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::exception& ex) {
    throw ValidationError("text bank " + path.string() + ": " + ex.what());
  }
  try {
    const std::size_t d = j.at("d_e").get<std::size_t>();
    auto names = j.at("names").get<std::vector<std::string>>();
    const auto& rows = j.at("rows");
    if (names.empty()) throw ValidationError("text bank " + path.string() + " is empty");
    check_unique(names);
    if (rows.size() != names.size()) {
      throw ValidationError("text bank " + path.string() + ": " + std::to_string(names.size()) +
                            " names but " + std::to_string(rows.size()) + " rows");
    }
    TextBank bank;
    bank.names = std::move(names);
    bank.provenance = "loaded";
    bank.embeddings = Tensor::zeros({bank.names.size(), d});
    for (std::size_t c = 0; c < rows.size(); ++c) {
      auto values = rows[c].get<std::vector<float>>();
      if (values.size() != d) {
        throw ValidationError("text bank " + path.string() + ": row " + std::to_string(c) +
                              " has " + std::to_string(values.size()) + " values, expected " +
                              std::to_string(d));
      }
      auto row = bank.embeddings.data().subspan(c * d, d);
      double ss = 0;
      for (std::size_t i = 0; i < d; ++i) {
        if (!std::isfinite(values[i])) throw NumericError("text bank row contains non-finite value");
        row[i] = values[i];
        ss += static_cast<double>(values[i]) * values[i];
      }
      if (std::abs(std::sqrt(ss) - 1.0) > 1e-6) normalize_row(row);
    }
    return bank;
  } catch (const json::exception& ex) {
    throw ValidationError("text bank " + path.string() + ": " + ex.what());
  }
}

TextBank select_classes(const TextBank& bank, const std::vector<std::string>& names) {
  if (names.empty()) throw ValidationError("select_classes: empty class list");
  check_unique(names);
  const std::size_t d = bank.dim();
  TextBank out;
  out.names = names;
  out.provenance = bank.provenance;
  out.embeddings = Tensor::zeros({names.size(), d});
  for (std::size_t i = 0; i < names.size(); ++i) {
    const std::size_t src = bank.index_of(names[i]);
    std::copy_n(bank.embeddings.data().begin() + static_cast<std::ptrdiff_t>(src * d), d,
                out.embeddings.data().begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  return out;
}

}  // namespace zsr
