#include "zsr/checkpoint.hpp"

#include <cstring>
#include <map>

#include "zsr/error.hpp"
#include "zsr/util.hpp"

namespace zsr {

using json = nlohmann::json;

namespace {
constexpr char kMagic[8] = {'Z', 'S', 'R', 'C', 'K', 'P', 'T', '1'};
}

json encoder_config_to_json(const EncoderConfig& c) {
  return json{{"channels", c.channels}, {"height", c.height},
              {"width", c.width},       {"patch", c.patch},
              {"model_width", c.model_width}, {"layers", c.layers},
              {"heads", c.heads},       {"embed_dim", c.embed_dim}};
}

EncoderConfig encoder_config_from_json(const json& j) {
  EncoderConfig c;
  for (const auto& [key, value] : j.items()) {
    auto get = [&]() {
      if (!value.is_number_unsigned()) {
        throw ValidationError("encoder config key '" + key + "' must be a positive integer");
      }
      return value.get<std::size_t>();
    };
    if (key == "channels") c.channels = get();
    else if (key == "height") c.height = get();
    else if (key == "width") c.width = get();
    else if (key == "patch") c.patch = get();
    else if (key == "model_width") c.model_width = get();
    else if (key == "layers") c.layers = get();
    else if (key == "heads") c.heads = get();
    else if (key == "embed_dim") c.embed_dim = get();
    else throw ValidationError("unknown encoder config key '" + key + "'");
  }
  c.validate();
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model, const json& meta,
                     const std::vector<NamedTensor<float>>& extra) {
  json header;
  header["format"] = "zsr-checkpoint";
  header["version"] = 1;
  header["arch"] = encoder_config_to_json(model.encoder.config);
  if (model.prompt) {
    header["prompt"] = {{"kind", model.prompt->kind == PromptKind::token ? "token" : "pixel"}};
  } else {
    header["prompt"] = nullptr;
  }
  header["head"] = model.head ? json{{"classes", model.head->num_classes()}} : json(nullptr);
  header["meta"] = meta;

  std::vector<char> payload;
  json manifest = json::array();
  auto add = [&](const NamedTensor<float>& nt) {
    manifest.push_back({{"name", nt.name}, {"shape", nt.tensor.shape()}, {"offset", payload.size()}});
    append_f32le(payload, nt.tensor.data());
  };
  for (const auto& nt : model.named_parameters()) add(nt);
  for (const auto& nt : extra) add(nt);
  header["tensors"] = std::move(manifest);

  const std::string head_text = header.dump();
  std::vector<char> bytes(kMagic, kMagic + 8);
  const std::uint64_t len = head_text.size();
  for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<char>((len >> (8 * i)) & 0xff));
  bytes.insert(bytes.end(), head_text.begin(), head_text.end());
  bytes.insert(bytes.end(), payload.begin(), payload.end());
  write_file(path, bytes);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw ValidationError("checkpoint " + path.string() + ": bad magic");
  }
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) {
    len |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
  }
  if (16 + len > bytes.size()) throw ValidationError("checkpoint " + path.string() + ": truncated header");
  json header;
  try {
    header = json::parse(std::string(bytes.data() + 16, bytes.data() + 16 + len));
  } catch (const json::exception& ex) {
    throw ValidationError("checkpoint " + path.string() + ": " + ex.what());
  }
  const char* payload = bytes.data() + 16 + len;
  const std::size_t payload_size = bytes.size() - 16 - len;

  try {
    std::map<std::string, Tensor> tensors;
    std::vector<std::string> order;
    for (const auto& entry : header.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      const auto shape = entry.at("shape").get<Shape>();
      const auto offset = entry.at("offset").get<std::size_t>();
      const std::size_t count = shape_numel(shape);
      if (offset + count * 4 > payload_size) {
        throw ValidationError("checkpoint " + path.string() + ": tensor " + name +
                              " extends past end of payload");
      }
      auto values = parse_f32le(std::span<const char>(payload + offset, count * 4));
      tensors[name] = Tensor::from_data(shape, std::move(values));
      order.push_back(name);
    }

    LoadedCheckpoint out;
    out.model = init_model(encoder_config_from_json(header.at("arch")), 0);
    if (!header.at("prompt").is_null()) {
      const auto kind = header["prompt"].at("kind").get<std::string>();
      if (kind == "token") {
        out.model.prompt = PromptParams<float>{PromptKind::token, Tensor()};
      } else if (kind == "pixel") {
        out.model.prompt = PromptParams<float>{PromptKind::pixel, Tensor()};
      } else {
        throw ValidationError("checkpoint: unknown prompt kind '" + kind + "'");
      }
    }
    if (!header.at("head").is_null()) out.model.head = LinearHead<float>{};
    // Rebind every model slot to the stored tensor of the same name.
    auto bind = [&](const std::string& name, Tensor& slot) {
      auto it = tensors.find(name);
      if (it == tensors.end()) throw ValidationError("checkpoint " + path.string() + ": missing tensor " + name);
      if (slot.defined() && slot.shape() != it->second.shape()) {
        throw ValidationError("checkpoint " + path.string() + ": tensor " + name + " has shape " +
                              shape_str(it->second.shape()) + ", expected " + shape_str(slot.shape()));
      }
      slot = it->second;
      tensors.erase(it);
    };
    auto& e = out.model.encoder;
    bind("encoder.patch_weight", e.patch_weight);
    bind("encoder.patch_bias", e.patch_bias);
    bind("encoder.class_token", e.class_token);
    bind("encoder.position", e.position);
    for (std::size_t i = 0; i < e.blocks.size(); ++i) {
      auto& b = e.blocks[i];
      const std::string p = "encoder.blocks." + std::to_string(i) + ".";
      bind(p + "ln1_gamma", b.ln1_gamma);
      bind(p + "ln1_beta", b.ln1_beta);
      bind(p + "qkv_weight", b.qkv_weight);
      bind(p + "qkv_bias", b.qkv_bias);
      bind(p + "out_weight", b.out_weight);
      bind(p + "out_bias", b.out_bias);
      bind(p + "ln2_gamma", b.ln2_gamma);
      bind(p + "ln2_beta", b.ln2_beta);
      bind(p + "fc1_weight", b.fc1_weight);
      bind(p + "fc1_bias", b.fc1_bias);
      bind(p + "fc2_weight", b.fc2_weight);
      bind(p + "fc2_bias", b.fc2_bias);
    }
    bind("encoder.post_gamma", e.post_gamma);
    bind("encoder.post_beta", e.post_beta);
    bind("encoder.projection", e.projection);
    if (out.model.prompt) {
      bind(out.model.prompt->kind == PromptKind::token ? "prompt.tokens" : "prompt.pixels",
           out.model.prompt->values);
    }
    if (out.model.head) {
      bind("head.weight", out.model.head->weight);
      bind("head.bias", out.model.head->bias);
    }
    for (const auto& name : order) {
      auto it = tensors.find(name);
      if (it != tensors.end()) out.extra.push_back({name, it->second});
    }
    out.meta = header.value("meta", json::object());
    return out;
  } catch (const json::exception& ex) {
    throw ValidationError("checkpoint " + path.string() + ": " + ex.what());
  }
}

}  // namespace zsr
