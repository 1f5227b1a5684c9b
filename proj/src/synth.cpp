#include "zsr/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>
#include <sstream>

#include "zsr/error.hpp"
#include "zsr/util.hpp"

namespace zsr {

namespace {

std::pair<std::string, std::string> split_name(const std::string& name) {
  std::istringstream is(name);
  std::string a, b, extra;
  is >> a >> b;
  if (a.empty() || b.empty() || (is >> extra)) {
    throw ValidationError("synthetic class '" + name + "' must be '<color> <shape>'");
  }
  return {a, b};
}

std::array<float, 3> base_color(const std::string& c) {
  if (c == "red") return {0.90f, 0.12f, 0.10f};
  if (c == "green") return {0.10f, 0.80f, 0.15f};
  if (c == "blue") return {0.15f, 0.25f, 0.95f};
  if (c == "yellow") return {0.92f, 0.85f, 0.10f};
  if (c == "magenta") return {0.85f, 0.15f, 0.85f};
  if (c == "cyan") return {0.10f, 0.85f, 0.85f};
  if (c == "white") return {0.90f, 0.90f, 0.90f};
  if (c == "orange") return {0.95f, 0.55f, 0.05f};
  throw ValidationError("unknown color '" + c + "'");
}

// dx, dy relative to the shape center, in units of its radius.
bool inside(const std::string& shape, float dx, float dy) {
  if (shape == "circle") return dx * dx + dy * dy <= 1.0f;
  if (shape == "square") return std::abs(dx) <= 0.8f && std::abs(dy) <= 0.8f;
  if (shape == "triangle") return dy >= -1.0f && dy <= 0.8f && std::abs(dx) <= (dy + 1.0f) / 1.8f;
  if (shape == "cross") {
    return (std::abs(dx) <= 0.3f && std::abs(dy) <= 1.0f) || (std::abs(dy) <= 0.3f && std::abs(dx) <= 1.0f);
  }
  throw ValidationError("unknown shape '" + shape + "'");
}

}  // namespace

std::vector<std::string> SynthSpec::all_classes() const {
  std::vector<std::string> out;
  for (const auto& c : colors) {
    for (const auto& s : shapes) out.push_back(c + " " + s);
  }
  return out;
}

std::vector<std::string> SynthSpec::heldout_classes() const {
  std::vector<std::string> out;
  for (const auto& g : heldout_groups) out.insert(out.end(), g.begin(), g.end());
  return out;
}

void SynthSpec::validate() const {
  if (image_size < 4) throw ValidationError("synthetic image_size must be >= 4");
  if (!(render_noise >= 0.0f)) throw ValidationError("render noise must be >= 0");
  if (train_classes.empty()) throw ValidationError("synthetic spec has no train classes");
  std::set<std::string> train(train_classes.begin(), train_classes.end());
  if (train.size() != train_classes.size()) throw ValidationError("duplicate train class");
  std::set<std::string> train_attrs;
  for (const auto& n : train_classes) {
    auto [c, s] = split_name(n);
    base_color(c);
    inside(s, 0, 0);
    train_attrs.insert("c:" + c);
    train_attrs.insert("s:" + s);
  }
  std::set<std::string> held;
  for (const auto& g : heldout_groups) {
    if (g.empty()) throw ValidationError("empty held-out group");
    for (const auto& n : g) {
      if (train.count(n)) throw ValidationError("class '" + n + "' is in both train and held-out partitions");
      if (!held.insert(n).second) throw ValidationError("class '" + n + "' appears in two held-out groups");
      auto [c, s] = split_name(n);
      base_color(c);
      inside(s, 0, 0);
      if (!train_attrs.count("c:" + c) && !train_attrs.count("s:" + s)) {
        throw ValidationError("held-out class '" + n + "' shares no attribute with the train classes");
      }
    }
  }
}

SynthSpec default_synth_spec(std::uint64_t seed) {
  SynthSpec spec;
  spec.seed = seed;
  std::vector<std::string> held;
  for (std::size_t i = 0; i < spec.colors.size(); ++i) {
    for (std::size_t j = 0; j < spec.shapes.size(); ++j) {
      const auto name = spec.colors[i] + " " + spec.shapes[j];
      ((i + j) % 2 == 0 ? spec.train_classes : held).push_back(name);
    }
  }
  // 3 + 3 + 2 held-out classes.
  spec.heldout_groups = {{held[0], held[1], held[2]}, {held[3], held[4], held[5]}, {held[6], held[7]}};
  return spec;
}

Dataset render_classes(const SynthSpec& spec, const std::vector<std::string>& classes,
                       std::size_t per_class, std::uint64_t stream, const std::string& split) {
  const std::size_t S = spec.image_size;
  Dataset out;
  out.classes = classes;
  out.split = split;
  out.labeled = true;
  out.images = Tensor::zeros({classes.size() * per_class, 3, S, S});
  out.labels.reserve(classes.size() * per_class);
  Rng rng(derive_seed(spec.seed, stream));
  float* px = out.images.ptr();
  const float fs = static_cast<float>(S);
  for (std::size_t c = 0; c < classes.size(); ++c) {
    auto [color_name, shape] = split_name(classes[c]);
    const auto color = base_color(color_name);
    for (std::size_t k = 0; k < per_class; ++k) {
      const float radius = uniform(rng, 0.22f, 0.36f) * fs;
      const float cx = uniform(rng, radius, fs - radius);
      const float cy = uniform(rng, radius, fs - radius);
      std::array<float, 3> bg{}, fg{};
      for (int ch = 0; ch < 3; ++ch) {
        bg[ch] = uniform(rng, 0.0f, 0.15f);
        fg[ch] = std::clamp(color[ch] + uniform(rng, -0.08f, 0.08f), 0.0f, 1.0f);
      }
      for (std::size_t y = 0; y < S; ++y) {
        for (std::size_t x = 0; x < S; ++x) {
          const float dx = (static_cast<float>(x) + 0.5f - cx) / radius;
          const float dy = (static_cast<float>(y) + 0.5f - cy) / radius;
          const bool in = inside(shape, dx, dy);
          for (std::size_t ch = 0; ch < 3; ++ch) {
            float v = in ? fg[ch] : bg[ch];
            if (spec.render_noise > 0) v += normal(rng, 0.0f, spec.render_noise);
            px[(ch * S + y) * S + x] = std::clamp(v, 0.0f, 1.0f);
          }
        }
      }
      px += 3 * S * S;
      out.labels.push_back(static_cast<std::uint32_t>(c));
    }
  }
  return out;
}

SynthData gen_synthetic(const SynthSpec& spec) {
  spec.validate();
  SynthData out;
  TextBankOptions bank_opts;
  bank_opts.mode = BankMode::compositional;
  bank_opts.embed_dim = spec.embed_dim;
  bank_opts.seed = spec.seed;
  bank_opts.noise_sigma = spec.bank_noise;

  const auto all = spec.all_classes();
  out.pretrain = render_classes(spec, all, spec.pretrain_per_class, 1, "pretrain");
  out.train = render_classes(spec, spec.train_classes, spec.train_per_class, 2, "train");
  out.train_test = render_classes(spec, spec.train_classes, spec.test_per_class, 3, "train_test");
  out.all_bank = build_text_bank(all, bank_opts);
  out.train_bank = select_classes(out.all_bank, spec.train_classes);
  for (std::size_t g = 0; g < spec.heldout_groups.size(); ++g) {
    const auto split = "heldout_" + std::to_string(g);
    out.heldout.push_back(render_classes(spec, spec.heldout_groups[g], spec.heldout_per_class, 10 + g, split));
    out.heldout_banks.push_back(select_classes(out.all_bank, spec.heldout_groups[g]));
  }
  return out;
}

void save_synthetic(const SynthData& data, const std::filesystem::path& dir) {
  save_dataset(data.pretrain, dir / "pretrain");
  save_dataset(data.train, dir / "train");
  save_dataset(data.train_test, dir / "train_test");
  save_text_bank(data.all_bank, dir / "banks" / "pretrain.json");
  save_text_bank(data.train_bank, dir / "banks" / "train.json");
  save_text_bank(data.train_bank, dir / "banks" / "train_test.json");
  for (std::size_t g = 0; g < data.heldout.size(); ++g) {
    save_dataset(data.heldout[g], dir / data.heldout[g].split);
    save_text_bank(data.heldout_banks[g], dir / "banks" / (data.heldout[g].split + ".json"));
  }
}

}  // namespace zsr
