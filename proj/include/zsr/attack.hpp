#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "zsr/tensor.hpp"

namespace zsr {

/// fractional: δ takes any real value in the ball. pixel_grid: every
/// coordinate of δ is an integer multiple of 1/255, as with 8-bit images.
enum class StepMode { fractional, pixel_grid };

StepMode parse_step_mode(const std::string& s);
std::string to_string(StepMode m);

inline constexpr double kPixelStep = 1.0 / 255.0;

struct AttackConfig {
  double epsilon = kPixelStep;  // L∞ radius in [0, 1] pixel units
  double alpha = kPixelStep;    // step size
  std::size_t steps = 2;
  double norm = std::numeric_limits<double>::infinity();  // only ∞ is supported
  bool random_start = false;
  bool best_iterate = false;
  StepMode step_mode = StepMode::fractional;
  /// Independent runs; per example the run with the highest objective wins.
  std::size_t restarts = 1;

  void validate() const;
  /// 2 steps, ε = α = 1/255, final iterate.
  static AttackConfig training_default();
  /// 100 steps, ε = α = 1/255, best iterate.
  static AttackConfig evaluation_default();
  bool operator==(const AttackConfig&) const = default;
};

struct AdversarialBatch {
  Tensor x_adv;
  Tensor delta;  // x_adv − x
  /// Objective per example at the returned iterate. Empty when the caller
  /// did not ask for it and no extra forward pass was needed.
  std::vector<float> objective;
};

/// Maps a batch of images [N, ...] to per-example objective values [N]. The
/// attack ascends the sum.
using AttackObjective = std::function<Tensor(const Tensor& images)>;

/// L∞ projected gradient ascent: x ← Π_{ε-ball ∩ [0,1]}(x + α·sign(∇ objective)).
/// The step is applied, then the ε-ball projection, then the box clamp.
/// Throws NumericError carrying the step index if the objective is not finite.
AdversarialBatch pgd_attack(const AttackObjective& objective, const Tensor& x,
                            const AttackConfig& config, std::uint64_t seed,
                            bool record_objective = true);

/// Throws NumericError if x_adv leaves the ε-ball (+1e-7), the [0, 1] box,
/// or, in pixel_grid mode, the 1/255 grid.
void check_adversarial_constraints(const Tensor& x, const AdversarialBatch& batch,
                                   const AttackConfig& config);

}  // namespace zsr
