#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "zsr/attack.hpp"
#include "zsr/dataset.hpp"
#include "zsr/encoder.hpp"
#include "zsr/losses.hpp"
#include "zsr/text_bank.hpp"
#include "zsr/util.hpp"

namespace zsr {

enum class AdaptationKind { full_ft, partial_ft, linear_probe, vpt_token, vpt_pixel };

struct Adaptation {
  AdaptationKind kind = AdaptationKind::full_ft;
  /// Blocks for partial_ft, prompt tokens for vpt_token.
  std::size_t k = 0;
  bool operator==(const Adaptation&) const = default;
};

/// Accepts "full_ft", "partial_ft(2)", "linear_probe", "vpt_token(5)",
/// "vpt_pixel". partial_ft defaults to 1 block and vpt_token to 5 tokens.
Adaptation parse_adaptation(const std::string& s);
std::string to_string(const Adaptation& a);
bool is_prompt(const Adaptation& a);

struct TrainConfig {
  LossVariant loss_variant = LossVariant::tecoa;
  Adaptation adaptation;
  /// Unset means 1e-3 for weight adaptation and 1e-1 for prompts.
  std::optional<double> lr;
  double momentum = 0.9;
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  double tau = kDefaultTemperature;
  std::uint64_t seed = 0;
  AttackConfig attack = AttackConfig::training_default();
  /// false trains on clean images with the same loss (e.g. vanilla pretraining).
  bool adversarial = true;
  std::optional<std::size_t> shots;
  bool unlabeled = false;
  /// Clean head-only epochs run before the adversarial phase of `adv`.
  std::size_t head_pretrain_epochs = 3;
  bool freeze_head = false;
  bool train_dictionary = false;
  /// Used when training starts from a fresh initialization.
  EncoderConfig encoder;

  double effective_lr() const;
  /// Incompatible combinations throw ValidationError.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::string phase;  // "head_pretrain" or "train"
  double loss = 0;
  /// Fraction of training examples misclassified at the attacked point.
  double attack_success = 0;
  std::size_t examples = 0;
};

nlohmann::json to_json(const EpochRecord& r);
/// One JSON object per line.
std::string metric_log_jsonl(const std::vector<EpochRecord>& log);

struct TrainState {
  Model<float> model;
  std::vector<Tensor> velocities;  // parallel to Model::named_parameters()
  std::optional<EmbeddingDictionary> dictionary;
  Tensor dictionary_velocity;
  std::size_t epoch = 0;  // epochs completed, head pre-training included
  Rng rng;
  std::vector<EpochRecord> log;
};

/// Prepares the model for the adaptation method (adds a prompt or head when
/// needed) and zero velocities for the trainable tensors.
TrainState init_train_state(const TrainConfig& cfg, Model<float> model, const Dataset& data);

/// Serialized into checkpoint meta and extra tensors so a run can resume.
void save_train_state(const std::filesystem::path& path, const TrainState& state, const TrainConfig& cfg);
TrainState load_train_state(const std::filesystem::path& path);

struct StepObserver {
  /// Called after the attack and before the update of every minibatch.
  std::function<void(const Tensor& x, const Tensor& x_adv, const std::vector<std::uint32_t>& labels)> on_attack;
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Runs the remaining epochs of `state`. Every minibatch attacks the current
/// parameters with the variant's own loss, then takes one momentum step.
void run_training(const TrainConfig& cfg, const Dataset& data, const TextBank& bank, TrainState& state,
                  const StepObserver& observer = {});

/// Convenience wrapper: init_train_state then run_training.
TrainState train(const TrainConfig& cfg, Model<float> model, const Dataset& data, const TextBank& bank,
                 const StepObserver& observer = {});

/// At most `shots` uniformly drawn examples per class, in original order.
Dataset few_shot_subset(const Dataset& data, std::size_t shots, std::uint64_t seed);
std::vector<std::size_t> few_shot_indices(const Dataset& data, std::size_t shots, std::uint64_t seed);

/// Nearest bank row by cosine similarity; ties go to the lowest index.
std::vector<std::uint32_t> pseudo_label(const Model<float>& model, const Tensor& images, const TextBank& bank,
                                        Temperature tau);

/// Flip (p = 0.5), translate up to 2 px with edge padding, uniform noise
/// ±0.02, clamp to [0, 1].
Tensor augment_view(const Tensor& images, Rng& rng);

/// Per-example loss of a variant, used both as attack objective and as
/// training loss. Labels index bank rows for tecoa, dictionary rows for coadv
/// and head outputs for ce/adv; imgcoadv ignores them and needs the embedding
/// of the second view.
struct VariantOutput {
  Tensor per_example;  // [N]
  Tensor scores;       // [N, columns]; argmax is the variant's prediction
};
VariantOutput variant_forward(const TrainConfig& cfg, const Model<float>& model, const Tensor& images,
                              std::span<const std::uint32_t> labels, const TextBank& bank,
                              const EmbeddingDictionary* dictionary, const Tensor* z_view_b);

}  // namespace zsr
