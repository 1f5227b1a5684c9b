#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "zsr/evaluation.hpp"
#include "zsr/synth.hpp"
#include "zsr/training.hpp"

namespace zsr {

/// The toy zero-shot protocol. A "vanilla" dual-encoder analog is trained
/// with the clean contrastive loss on every class (the stand-in for
/// large-scale pretraining); methods then adapt it on the train classes only
/// and are scored zero-shot on the held-out groups with their own banks.
struct ExperimentSettings {
  SynthSpec synth;
  TrainConfig pretrain;
  TrainConfig adapt;  // template; recipes override the variant/adaptation
  EvalConfig eval;
  std::vector<std::uint64_t> seeds{0, 1, 2};
};

ExperimentSettings default_experiment_settings();

struct ToyTask {
  SynthData data;
  std::vector<EvalTask> heldout;
  EvalTask train_test;
};

ToyTask make_toy_task(const ExperimentSettings& settings, std::uint64_t seed);
Model<float> pretrain_vanilla(const ExperimentSettings& settings, const ToyTask& task, std::uint64_t seed);

struct GridPoint {
  std::string name;
  bool vanilla = false;  // evaluate the pretrained model as is
  TrainConfig adapt;
  EvalConfig eval;
};

struct MethodResult {
  std::string name;
  std::uint64_t seed = 0;
  EvalReport heldout;
  EvalRecord train_test;
  std::size_t trainable = 0;
  std::vector<EpochRecord> log;
  double seconds = 0;
};

/// Pretrained models per seed, shared across recipes.
using VanillaCache = std::map<std::uint64_t, Model<float>>;

struct GridOptions {
  std::filesystem::path out_dir;  // empty: nothing written
  VanillaCache* cache = nullptr;
  std::function<void(const MethodResult&)> progress;
  bool evaluate_train_test = true;
};

std::vector<MethodResult> run_grid(const ExperimentSettings& settings, const std::vector<GridPoint>& points,
                                   const GridOptions& options);

/// Named recipes: table1-toy, fig4, fig5, fig5a, fig5b.
std::vector<GridPoint> recipe_points(const std::string& recipe, const ExperimentSettings& settings);
std::vector<std::string> recipe_names();

/// Rows "name,seed,clean,robust,trainable" plus per-name means.
std::string summarize_results(const std::vector<MethodResult>& results);

}  // namespace zsr
