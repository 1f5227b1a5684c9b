#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "zsr/attack.hpp"
#include "zsr/evaluation.hpp"
#include "zsr/training.hpp"

namespace zsr {

// JSON schemas. Unknown keys are rejected, absent optional keys take their
// defaults, and every error names the offending key.
//
// AttackConfig: {"epsilon", "alpha", "steps", "norm": "inf", "random_start",
//   "best_iterate", "step_mode": "fractional"|"pixel_grid", "restarts"}.
//   epsilon and alpha accept numbers or strings such as "2/255".
// TrainConfig: {"loss_variant", "adaptation", "lr", "momentum", "epochs",
//   "batch_size", "tau", "seed", "attack": {...}, "adversarial", "shots",
//   "unlabeled", "head_pretrain_epochs", "freeze_head", "train_dictionary",
//   "encoder": {...}}.
// EvalConfig: {"attack": {...} | null, "objective": "ce"|"contrastive",
//   "tau", "batch_size", "seed"}.

nlohmann::json to_json(const AttackConfig& c);
AttackConfig attack_config_from_json(const nlohmann::json& j, AttackConfig defaults = AttackConfig::evaluation_default());

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const EvalConfig& c);
EvalConfig eval_config_from_json(const nlohmann::json& j);

nlohmann::json parse_json_file(const std::filesystem::path& path);
TrainConfig load_train_config(const std::filesystem::path& path);
AttackConfig load_attack_config(const std::filesystem::path& path);
EvalConfig load_eval_config(const std::filesystem::path& path);

/// FNV-1a of the canonical (sorted-key, compact) JSON dump.
std::string config_hash(const nlohmann::json& j);

}  // namespace zsr
