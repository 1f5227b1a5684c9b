#include "zsr/training.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "zsr/checkpoint.hpp"
#include "zsr/config.hpp"
#include "zsr/error.hpp"
#include "zsr/evaluation.hpp"
#include "zsr/ops.hpp"
#include "zsr/optim.hpp"
#include "zsr/util.hpp"

namespace zsr {

using json = nlohmann::json;

Adaptation parse_adaptation(const std::string& s) {
  std::string name = s;
  std::optional<std::size_t> k;
  const auto open = s.find('(');
  if (open != std::string::npos) {
    if (s.back() != ')') throw ValidationError("malformed adaptation '" + s + "'");
    name = s.substr(0, open);
    try {
      const long long v = std::stoll(s.substr(open + 1, s.size() - open - 2));
      if (v <= 0) throw ValidationError("adaptation '" + s + "': k must be >= 1");
      k = static_cast<std::size_t>(v);
    } catch (const std::logic_error&) {
      throw ValidationError("malformed adaptation '" + s + "'");
    }
  }
  Adaptation a;
  if (name == "full_ft") a.kind = AdaptationKind::full_ft;
  else if (name == "partial_ft") a = {AdaptationKind::partial_ft, k.value_or(1)};
  else if (name == "linear_probe") a.kind = AdaptationKind::linear_probe;
  else if (name == "vpt_token") a = {AdaptationKind::vpt_token, k.value_or(5)};
  else if (name == "vpt_pixel") a.kind = AdaptationKind::vpt_pixel;
  else throw ValidationError("unknown adaptation '" + s + "' (expected full_ft|partial_ft(k)|linear_probe|vpt_token(k)|vpt_pixel)");
  if (k && a.kind != AdaptationKind::partial_ft && a.kind != AdaptationKind::vpt_token) {
    throw ValidationError("adaptation '" + name + "' takes no argument");
  }
  return a;
}

std::string to_string(const Adaptation& a) {
  switch (a.kind) {
    case AdaptationKind::full_ft: return "full_ft";
    case AdaptationKind::partial_ft: return "partial_ft(" + std::to_string(a.k) + ")";
    case AdaptationKind::linear_probe: return "linear_probe";
    case AdaptationKind::vpt_token: return "vpt_token(" + std::to_string(a.k) + ")";
    case AdaptationKind::vpt_pixel: return "vpt_pixel";
  }
  return "?";
}

bool is_prompt(const Adaptation& a) {
  return a.kind == AdaptationKind::vpt_token || a.kind == AdaptationKind::vpt_pixel;
}

double TrainConfig::effective_lr() const {
  if (lr) return *lr;
  return is_prompt(adaptation) ? 1e-1 : 1e-3;
}

void TrainConfig::validate() const {
  if (adaptation.kind == AdaptationKind::linear_probe && loss_variant != LossVariant::ce &&
      loss_variant != LossVariant::adv) {
    throw ValidationError("adaptation linear_probe requires loss_variant ce or adv, got " + to_string(loss_variant));
  }
  if (unlabeled && loss_variant != LossVariant::tecoa) {
    throw ValidationError("unlabeled training requires loss_variant tecoa, got " + to_string(loss_variant));
  }
  if (batch_size == 0) throw ValidationError("batch_size must be >= 1");
  if (!(effective_lr() > 0)) throw ValidationError("lr must be > 0");
  if (!(momentum >= 0 && momentum < 1)) throw ValidationError("momentum must be in [0, 1)");
  if ((adaptation.kind == AdaptationKind::partial_ft || adaptation.kind == AdaptationKind::vpt_token) &&
      adaptation.k == 0) {
    throw ValidationError("adaptation " + to_string(adaptation) + " needs k >= 1");
  }
  if (shots && *shots == 0) throw ValidationError("shots must be >= 1");
  Temperature t(tau);
  (void)t;
  attack.validate();
}

json to_json(const EpochRecord& r) {
  return json{{"epoch", r.epoch},
              {"phase", r.phase},
              {"loss", r.loss},
              {"attack_success", r.attack_success},
              {"examples", r.examples}};
}

std::string metric_log_jsonl(const std::vector<EpochRecord>& log) {
  std::string out;
  for (const auto& r : log) out += to_json(r).dump() + "\n";
  return out;
}

namespace {

bool uses_head(LossVariant v) { return v == LossVariant::ce || v == LossVariant::adv; }

std::size_t head_epochs(const TrainConfig& cfg) {
  return cfg.loss_variant == LossVariant::adv ? cfg.head_pretrain_epochs : 0;
}

FreezeMask training_mask(const TrainConfig& cfg, const Model<float>& model, bool head_phase) {
  if (head_phase) return freeze_mask(model, {FreezePolicy::head_only, 0});
  FreezeSpec spec;
  switch (cfg.adaptation.kind) {
    case AdaptationKind::full_ft: spec = {FreezePolicy::full, 0}; break;
    case AdaptationKind::partial_ft: spec = {FreezePolicy::last_k_blocks, cfg.adaptation.k}; break;
    case AdaptationKind::linear_probe: spec = {FreezePolicy::head_only, 0}; break;
    case AdaptationKind::vpt_token:
    case AdaptationKind::vpt_pixel: spec = {FreezePolicy::prompt_only, 0}; break;
  }
  auto mask = freeze_mask(model, spec);
  const auto named = model.named_parameters();
  for (std::size_t i = 0; i < named.size(); ++i) {
    const bool head = named[i].name.rfind("head.", 0) == 0;
    if (!head) continue;
    // A fresh head always trains alongside prompts and partial tuning unless frozen.
    bool on = uses_head(cfg.loss_variant) && !cfg.freeze_head;
    if (cfg.adaptation.kind == AdaptationKind::linear_probe) on = true;
    if (on != mask.trainable[i]) {
      mask.trainable[i] = on;
      if (on) mask.trainable_count += named[i].tensor.numel();
      else mask.trainable_count -= named[i].tensor.numel();
    }
  }
  return mask;
}

// Maps dataset label indices onto bank rows by class name.
std::vector<std::uint32_t> bank_label_map(const Dataset& data, const TextBank& bank) {
  std::vector<std::uint32_t> map(data.classes.size());
  for (std::size_t c = 0; c < data.classes.size(); ++c) {
    map[c] = static_cast<std::uint32_t>(bank.index_of(data.classes[c]));
  }
  return map;
}

std::vector<std::uint32_t> argmax_rows(const Tensor& scores) {
  const std::size_t n = scores.dim(0), c = scores.dim(1);
  std::vector<std::uint32_t> out(n);
  const float* s = scores.ptr();
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j) {
      if (s[i * c + j] > s[i * c + best]) best = j;
    }
    out[i] = static_cast<std::uint32_t>(best);
  }
  return out;
}

std::vector<Tensor> all_model_tensors(const Model<float>& model, const std::optional<EmbeddingDictionary>& dict) {
  auto t = model.parameters();
  if (dict) t.push_back(dict->codes);
  return t;
}

}  // namespace

VariantOutput variant_forward(const TrainConfig& cfg, const Model<float>& model, const Tensor& images,
                              std::span<const std::uint32_t> labels, const TextBank& bank,
                              const EmbeddingDictionary* dictionary, const Tensor* z_view_b) {
  const Temperature tau(cfg.tau);
  auto z = encode_image(model, images);
  VariantOutput out;
  switch (cfg.loss_variant) {
    case LossVariant::ce:
    case LossVariant::adv: {
      auto logits = head_logits(model, z);
      out.per_example = ce_per_example(logits, labels);
      out.scores = logits.detach();
      break;
    }
    case LossVariant::tecoa:
      out.per_example = contrastive_per_example(z, bank.embeddings, labels, tau);
      out.scores = ops::cosine_similarity_matrix(z.detach(), bank.embeddings);
      break;
    case LossVariant::coadv:
      if (!dictionary) throw ValidationError("coadv needs an embedding dictionary");
      out.per_example = contrastive_per_example(z, dictionary->codes, labels, tau);
      out.scores = ops::cosine_similarity_matrix(z.detach(), dictionary->codes.detach());
      break;
    case LossVariant::imgcoadv:
      if (!z_view_b) throw ValidationError("imgcoadv needs the second view");
      out.per_example = imgcoadv_per_example(z, *z_view_b, tau);
      out.scores = ops::cosine_similarity_matrix(z.detach(), z_view_b->detach());
      break;
  }
  return out;
}

Tensor augment_view(const Tensor& images, Rng& rng) {
  const std::size_t n = images.dim(0), ch = images.dim(1), h = images.dim(2), w = images.dim(3);
  auto out = Tensor::zeros(images.shape());
  const float* src = images.ptr();
  float* dst = out.ptr();
  std::uniform_int_distribution<int> shift(-2, 2);
  for (std::size_t i = 0; i < n; ++i) {
    const bool flip = uniform(rng, 0.0f, 1.0f) < 0.5f;
    const int ty = shift(rng), tx = shift(rng);
    for (std::size_t c = 0; c < ch; ++c) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          // Edge padding: clamp the source coordinate.
          int sy = std::clamp(static_cast<int>(y) - ty, 0, static_cast<int>(h) - 1);
          int sx = std::clamp(static_cast<int>(x) - tx, 0, static_cast<int>(w) - 1);
          if (flip) sx = static_cast<int>(w) - 1 - sx;
          const std::size_t o = ((i * ch + c) * h + y) * w + x;
          const float v = src[((i * ch + c) * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)];
          dst[o] = v;
        }
      }
    }
  }
  for (auto& v : out.data()) v = std::clamp(v + uniform(rng, -0.02f, 0.02f), 0.0f, 1.0f);
  return out;
}

TrainState init_train_state(const TrainConfig& cfg, Model<float> model, const Dataset& data) {
  cfg.validate();
  TrainState st;
  st.model = model.clone();
  const auto& ec = st.model.encoder.config;
  if (cfg.adaptation.kind == AdaptationKind::vpt_token) {
    if (!st.model.prompt || st.model.prompt->kind != PromptKind::token) {
      st.model.prompt = init_token_prompt(ec, cfg.adaptation.k, derive_seed(cfg.seed, 1));
    }
  } else if (cfg.adaptation.kind == AdaptationKind::vpt_pixel) {
    if (!st.model.prompt || st.model.prompt->kind != PromptKind::pixel) st.model.prompt = init_pixel_prompt(ec);
  }
  if (uses_head(cfg.loss_variant)) {
    if (!st.model.head || st.model.head->num_classes() != data.classes.size()) {
      st.model.head = init_head(ec.embed_dim, data.classes.size(), derive_seed(cfg.seed, 2));
    }
  }
  if (cfg.loss_variant == LossVariant::coadv) {
    st.dictionary = make_embedding_dictionary(data.classes.size(), ec.embed_dim, derive_seed(cfg.seed, 3),
                                              cfg.train_dictionary);
    st.dictionary_velocity = Tensor::zeros(st.dictionary->codes.shape());
  }
  for (const auto& nt : st.model.named_parameters()) st.velocities.push_back(Tensor::zeros(nt.tensor.shape()));
  st.rng = Rng(derive_seed(cfg.seed, 4));
  for (const auto& t : st.model.parameters()) t.set_requires_grad(false);
  return st;
}

void run_training(const TrainConfig& cfg, const Dataset& full_data, const TextBank& bank, TrainState& st,
                  const StepObserver& observer) {
  cfg.validate();
  auto& model = st.model;
  const Dataset data = cfg.shots ? few_shot_subset(full_data, *cfg.shots, cfg.seed) : full_data;
  if (data.size() == 0) throw ValidationError("training data is empty");
  if (!cfg.unlabeled && !data.labeled) throw ValidationError("labeled training needs a labeled dataset");
  if (uses_head(cfg.loss_variant) && (!model.head || model.head->num_classes() != data.classes.size())) {
    throw ValidationError("loss " + to_string(cfg.loss_variant) + " needs a head over the dataset classes");
  }
  if (cfg.loss_variant == LossVariant::coadv && !st.dictionary) {
    throw ValidationError("coadv needs an embedding dictionary in the training state");
  }
  if (is_prompt(cfg.adaptation) && !model.prompt) throw ValidationError("prompt adaptation without a prompt");
  if (bank.size() == 0) throw ValidationError("empty text bank");

  std::vector<std::uint32_t> fixed_labels;
  if (!cfg.unlabeled) {
    if (cfg.loss_variant == LossVariant::tecoa) {
      const auto map = bank_label_map(data, bank);
      for (auto y : data.labels) fixed_labels.push_back(map[y]);
    } else {
      fixed_labels = data.labels;
    }
  }

  const Temperature tau(cfg.tau);
  const std::size_t pre = head_epochs(cfg);
  const std::size_t total = pre + cfg.epochs;
  const std::size_t n = data.size();
  const auto named = model.named_parameters();

  while (st.epoch < total) {
    const bool head_phase = st.epoch < pre;
    const auto mask = training_mask(cfg, model, head_phase);
    apply_freeze_mask(model, mask);
    std::vector<Tensor> params, velocities;
    for (std::size_t i = 0; i < named.size(); ++i) {
      if (!mask.trainable[i]) continue;
      params.push_back(named[i].tensor);
      velocities.push_back(st.velocities[i]);
    }
    const bool train_dict = st.dictionary && cfg.train_dictionary && !head_phase;
    if (st.dictionary) st.dictionary->codes.set_requires_grad(train_dict);
    if (train_dict) {
      params.push_back(st.dictionary->codes);
      velocities.push_back(st.dictionary_velocity);
    }

    const auto labels = cfg.unlabeled ? pseudo_label(model, data.images, bank, tau) : fixed_labels;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), st.rng);

    const bool adversarial = cfg.adversarial && cfg.loss_variant != LossVariant::ce && !head_phase;
    double loss_sum = 0;
    std::size_t wrong = 0;
    const EmbeddingDictionary* dict = st.dictionary ? &*st.dictionary : nullptr;
    for (std::size_t start = 0, b = 0; start < n; start += cfg.batch_size, ++b) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(end));
      const Tensor x = gather_images(data, idx);
      std::vector<std::uint32_t> y;
      for (auto i : idx) y.push_back(labels[i]);
      if (cfg.loss_variant == LossVariant::imgcoadv) {
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<std::uint32_t>(i);
      }
      Tensor view_b;
      if (cfg.loss_variant == LossVariant::imgcoadv) view_b = augment_view(x, st.rng);

      Tensor x_in = x;
      if (adversarial) {
        NoGradGuard<float> guard(all_model_tensors(model, st.dictionary));
        Tensor z_b;
        if (view_b.defined()) z_b = encode_image(model, view_b);
        const auto objective = [&](const Tensor& images) {
          return variant_forward(cfg, model, images, y, bank, dict, view_b.defined() ? &z_b : nullptr).per_example;
        };
        const auto seed = derive_seed(cfg.seed, (static_cast<std::uint64_t>(st.epoch) << 32) + b);
        x_in = pgd_attack(objective, x, cfg.attack, seed, /*record_objective=*/false).x_adv;
      }
      if (observer.on_attack) observer.on_attack(x, x_in, y);

      Tape tape;
      TapeScope scope(tape);
      Tensor z_b;
      if (view_b.defined()) z_b = encode_image(model, view_b);
      auto out = variant_forward(cfg, model, x_in, y, bank, dict, view_b.defined() ? &z_b : nullptr);
      auto loss = ops::mean(out.per_example);
      if (!std::isfinite(loss.item())) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(st.epoch) + ", batch " +
                           std::to_string(b));
      }
      tape.backward(loss);
      for (auto& p : params) p.ensure_grad();
      sgd_momentum_step(params, velocities, cfg.effective_lr(), cfg.momentum);
      for (const auto& t : model.parameters()) {
        if (!t.requires_grad()) t.clear_grad();
      }

      for (float v : out.per_example.data()) loss_sum += v;
      const auto pred = argmax_rows(out.scores);
      for (std::size_t i = 0; i < pred.size(); ++i) wrong += pred[i] != y[i];
    }

    EpochRecord rec;
    rec.epoch = st.epoch;
    rec.phase = head_phase ? "head_pretrain" : "train";
    rec.loss = loss_sum / static_cast<double>(n);
    rec.attack_success = static_cast<double>(wrong) / static_cast<double>(n);
    rec.examples = n;
    st.log.push_back(rec);
    ++st.epoch;
    if (observer.on_epoch) observer.on_epoch(rec);
  }
  for (const auto& t : model.parameters()) {
    t.set_requires_grad(false);
    t.clear_grad();
  }
  if (st.dictionary) {
    st.dictionary->codes.set_requires_grad(false);
    st.dictionary->codes.clear_grad();
  }
}

TrainState train(const TrainConfig& cfg, Model<float> model, const Dataset& data, const TextBank& bank,
                 const StepObserver& observer) {
  auto st = init_train_state(cfg, std::move(model), data);
  run_training(cfg, data, bank, st, observer);
  return st;
}

std::vector<std::size_t> few_shot_indices(const Dataset& data, std::size_t shots, std::uint64_t seed) {
  if (shots == 0) throw ValidationError("shots must be >= 1");
  if (!data.labeled) throw ValidationError("few-shot subsetting needs labels");
  std::vector<std::vector<std::size_t>> by_class(data.classes.size());
  for (std::size_t i = 0; i < data.size(); ++i) by_class[data.labels[i]].push_back(i);
  Rng rng(derive_seed(seed, 0x73686f74));
  std::vector<std::size_t> keep;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& members = by_class[c];
    if (members.empty()) throw ValidationError("class '" + data.classes[c] + "' has no examples");
    // Partial Fisher-Yates: a uniform sample without replacement.
    const std::size_t take = std::min(shots, members.size());
    for (std::size_t i = 0; i < take; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, members.size() - 1);
      std::swap(members[i], members[pick(rng)]);
    }
    keep.insert(keep.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
  }
  std::sort(keep.begin(), keep.end());
  return keep;
}

Dataset few_shot_subset(const Dataset& data, std::size_t shots, std::uint64_t seed) {
  const auto idx = few_shot_indices(data, shots, seed);
  return subset(data, idx);
}

std::vector<std::uint32_t> pseudo_label(const Model<float>& model, const Tensor& images, const TextBank& bank,
                                        Temperature tau) {
  (void)tau;  // the argmin of the loss is the argmax of cos/τ for any τ > 0
  if (bank.size() == 0) throw ValidationError("pseudo_label: empty text bank");
  return nearest_rows(embed_images(model, images), bank.embeddings);
}

void save_train_state(const std::filesystem::path& path, const TrainState& st, const TrainConfig& cfg) {
  json log = json::array();
  for (const auto& r : st.log) log.push_back(to_json(r));
  json meta{{"train_state",
             {{"epoch", st.epoch}, {"rng", rng_state(st.rng)}, {"log", log}, {"config", to_json(cfg)}}}};
  std::vector<NamedTensor<float>> extra;
  const auto named = st.model.named_parameters();
  for (std::size_t i = 0; i < named.size(); ++i) extra.push_back({"velocity." + named[i].name, st.velocities[i]});
  if (st.dictionary) {
    meta["train_state"]["dictionary"] = {{"seed", st.dictionary->seed}, {"trainable", st.dictionary->trainable}};
    extra.push_back({"dictionary.codes", st.dictionary->codes});
    extra.push_back({"dictionary.velocity", st.dictionary_velocity});
  }
  save_checkpoint(path, st.model, meta, extra);
}

TrainState load_train_state(const std::filesystem::path& path) {
  auto ck = load_checkpoint(path);
  if (!ck.meta.contains("train_state")) throw ValidationError(path.string() + ": checkpoint has no training state");
  const auto& ts = ck.meta.at("train_state");
  TrainState st;
  st.model = ck.model;
  st.epoch = ts.at("epoch").get<std::size_t>();
  st.rng = rng_from_state(ts.at("rng").get<std::string>());
  for (const auto& r : ts.at("log")) {
    EpochRecord e;
    e.epoch = r.at("epoch").get<std::size_t>();
    e.phase = r.at("phase").get<std::string>();
    e.loss = r.at("loss").get<double>();
    e.attack_success = r.at("attack_success").get<double>();
    e.examples = r.at("examples").get<std::size_t>();
    st.log.push_back(e);
  }
  std::map<std::string, Tensor> extra;
  for (auto& nt : ck.extra) extra[nt.name] = nt.tensor;
  for (const auto& nt : st.model.named_parameters()) {
    auto it = extra.find("velocity." + nt.name);
    if (it == extra.end()) throw ValidationError(path.string() + ": missing velocity for " + nt.name);
    st.velocities.push_back(it->second);
  }
  if (ts.contains("dictionary")) {
    EmbeddingDictionary d;
    d.codes = extra.at("dictionary.codes");
    d.seed = ts["dictionary"].at("seed").get<std::uint64_t>();
    d.trainable = ts["dictionary"].at("trainable").get<bool>();
    st.dictionary = d;
    st.dictionary_velocity = extra.at("dictionary.velocity");
  }
  return st;
}

}  // namespace zsr
