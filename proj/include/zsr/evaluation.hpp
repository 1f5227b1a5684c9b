#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "zsr/attack.hpp"
#include "zsr/dataset.hpp"
#include "zsr/encoder.hpp"
#include "zsr/losses.hpp"
#include "zsr/text_bank.hpp"

namespace zsr {

/// What the evaluation attack maximizes: cross-entropy over cos/τ logits, or
/// the contrastive loss against the task's bank.
enum class EvalObjective { ce, contrastive };
EvalObjective parse_eval_objective(const std::string& s);
std::string to_string(EvalObjective o);

struct EvalConfig {
  std::optional<AttackConfig> attack = AttackConfig::evaluation_default();
  EvalObjective objective = EvalObjective::ce;
  double tau = kDefaultTemperature;
  std::size_t batch_size = 100;
  std::uint64_t seed = 0;
  bool operator==(const EvalConfig&) const = default;
};

/// argmax_j cos(z_i, rows_j); ties go to the lowest index.
std::vector<std::uint32_t> nearest_rows(const Tensor& embeddings, const Tensor& rows);

/// Embeds images in batches without recording gradients.
Tensor embed_images(const Model<float>& model, const Tensor& images, std::size_t batch_size = 256);

/// argmax_j cos(F(x_i), t_j)/τ. τ only scales the scores.
std::vector<std::uint32_t> zero_shot_classify(const Model<float>& model, const Tensor& images,
                                              const TextBank& bank, Temperature tau);

/// Per-example evaluation objective on cos/τ logits.
Tensor eval_objective(const Model<float>& model, const Tensor& images, const std::vector<std::uint32_t>& labels,
                      const TextBank& bank, EvalObjective objective, Temperature tau);

struct EvalRecord {
  std::string dataset;
  double clean = 0;
  double robust = 0;
  std::size_t n = 0;
  std::optional<AttackConfig> attack;
};

/// Clean accuracy on raw images and robust accuracy under PGD. An example
/// counts as robust only when it is classified correctly both clean and
/// attacked, so robust <= clean. Batch b uses attack seed seed + b.
EvalRecord evaluate(const Model<float>& model, const Dataset& data, const TextBank& bank,
                    const EvalConfig& config, const std::string& name = "");

struct EvalTask {
  std::string name;
  Dataset data;
  TextBank bank;
};

struct EvalReport {
  std::vector<EvalRecord> records;
  std::string config_hash;
  std::uint64_t seed = 0;
  double average_clean() const;
  double average_robust() const;
};

/// Task t is attacked with seed config.seed + 1000003·t.
EvalReport evaluate_tasks(const Model<float>& model, const std::vector<EvalTask>& tasks, const EvalConfig& config);

struct FrontierRow {
  double w = 0;
  double clean = 0;   // averaged over tasks
  double robust = 0;
  std::vector<EvalRecord> records;
};

std::vector<FrontierRow> interpolation_sweep(const Model<float>& a, const Model<float>& b,
                                             const std::vector<double>& grid,
                                             const std::vector<EvalTask>& tasks, const EvalConfig& config);

}  // namespace zsr
