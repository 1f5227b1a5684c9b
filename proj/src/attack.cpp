#include "zsr/attack.hpp"

#include <algorithm>
#include <cmath>

#include "zsr/error.hpp"
#include "zsr/ops.hpp"
#include "zsr/util.hpp"

namespace zsr {

StepMode parse_step_mode(const std::string& s) {
  if (s == "fractional") return StepMode::fractional;
  if (s == "pixel_grid" || s == "pixel-grid" || s == "pixel-grid-quantized") return StepMode::pixel_grid;
  throw ValidationError("unknown step_mode '" + s + "' (expected fractional|pixel_grid)");
}

std::string to_string(StepMode m) { return m == StepMode::fractional ? "fractional" : "pixel_grid"; }

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
    throw ValidationError("attack epsilon must be in [0, 1] pixel units, got " + std::to_string(epsilon));
  }
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ValidationError("attack alpha must be > 0");
  if (steps < 1) throw ValidationError("attack steps must be >= 1");
  if (restarts < 1) throw ValidationError("attack restarts must be >= 1");
  if (!std::isinf(norm) || norm < 0) throw ValidationError("attack norm: only the L-infinity norm is supported");
}

AttackConfig AttackConfig::training_default() { return AttackConfig{}; }

AttackConfig AttackConfig::evaluation_default() {
  AttackConfig c;
  c.steps = 100;
  c.best_iterate = true;
  return c;
}

namespace {

constexpr float kGrid = 1.0f / 255.0f;

float sgn(float g) { return g > 0.0f ? 1.0f : (g < 0.0f ? -1.0f : 0.0f); }

// Mutable perturbation state for one run. Fractional mode keeps δ as floats;
// grid mode keeps integer pixel steps plus per-coordinate box limits.
struct Perturbation {
  const Tensor& x;
  const AttackConfig& cfg;
  std::vector<float> delta;
  std::vector<int> steps;
  std::vector<int> lo, hi;

  Perturbation(const Tensor& x_, const AttackConfig& cfg_) : x(x_), cfg(cfg_) {
    const std::size_t n = x.numel();
    if (cfg.step_mode == StepMode::fractional) {
      delta.assign(n, 0.0f);
      return;
    }
    steps.assign(n, 0);
    lo.resize(n);
    hi.resize(n);
    const int radius = static_cast<int>(std::floor(cfg.epsilon * 255.0 + 1e-6));
    for (std::size_t i = 0; i < n; ++i) {
      const float xi = x.data()[i];
      int l = -radius, h = radius;
      while (xi + static_cast<float>(l) * kGrid < 0.0f) ++l;
      while (xi + static_cast<float>(h) * kGrid > 1.0f) --h;
      lo[i] = std::min(l, 0);
      hi[i] = std::max(h, 0);
    }
  }

  void random_start(Rng& rng) {
    if (cfg.step_mode == StepMode::fractional) {
      const float eps = static_cast<float>(cfg.epsilon);
      for (auto& d : delta) d = eps > 0 ? uniform(rng, -eps, eps) : 0.0f;
      project_fractional();
      return;
    }
    const int radius = static_cast<int>(std::floor(cfg.epsilon * 255.0 + 1e-6));
    std::uniform_int_distribution<int> pick(-radius, radius);
    for (std::size_t i = 0; i < steps.size(); ++i) steps[i] = std::clamp(pick(rng), lo[i], hi[i]);
  }

  void project_fractional() {
    const float eps = static_cast<float>(cfg.epsilon);
    auto xs = x.data();
    for (std::size_t i = 0; i < delta.size(); ++i) {
      const float d = std::clamp(delta[i], -eps, eps);
      const float xa = std::clamp(xs[i] + d, 0.0f, 1.0f);
      delta[i] = xa - xs[i];
    }
  }

  void ascend(std::span<const float> grad) {
    if (cfg.step_mode == StepMode::fractional) {
      const float a = static_cast<float>(cfg.alpha);
      for (std::size_t i = 0; i < delta.size(); ++i) delta[i] += a * sgn(grad[i]);
      project_fractional();
      return;
    }
    const int stride = std::max(1, static_cast<int>(std::lround(cfg.alpha * 255.0)));
    for (std::size_t i = 0; i < steps.size(); ++i) {
      steps[i] = std::clamp(steps[i] + stride * static_cast<int>(sgn(grad[i])), lo[i], hi[i]);
    }
  }

  Tensor point() const {
    auto out = x.detach();
    auto o = out.data();
    if (cfg.step_mode == StepMode::fractional) {
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::clamp(o[i] + delta[i], 0.0f, 1.0f);
    } else {
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = o[i] + static_cast<float>(steps[i]) * kGrid;
    }
    return out;
  }
};

std::vector<float> evaluate(const AttackObjective& objective, const Tensor& point, std::size_t n,
                            std::size_t step) {
  Tensor values = objective(point);
  if (!values.defined() || values.numel() != n) {
    throw ShapeError("pgd_attack: objective must return one value per example (" + std::to_string(n) +
                     "), got " + (values.defined() ? shape_str(values.shape()) : std::string("undefined")));
  }
  std::vector<float> out(values.data().begin(), values.data().end());
  for (float v : out) {
    if (!std::isfinite(v)) {
      throw NumericError("pgd_attack: non-finite objective at step " + std::to_string(step));
    }
  }
  return out;
}

}  // namespace

AdversarialBatch pgd_attack(const AttackObjective& objective, const Tensor& x,
                            const AttackConfig& config, std::uint64_t seed, bool record_objective) {
  config.validate();
  if (!x.defined() || x.rank() < 1) throw ShapeError("pgd_attack: input must have a batch axis");
  for (float v : x.data()) {
    if (!(v >= 0.0f && v <= 1.0f)) throw ValidationError("pgd_attack: input pixels must lie in [0, 1]");
  }
  const std::size_t n = x.dim(0);
  const std::size_t per = x.numel() / n;

  Tensor best = x.detach();
  std::vector<float> best_value(n, -std::numeric_limits<float>::infinity());
  bool have_best_values = false;
  auto keep_better = [&](const Tensor& point, const std::vector<float>& values) {
    for (std::size_t i = 0; i < n; ++i) {
      if (values[i] > best_value[i]) {
        best_value[i] = values[i];
        std::copy_n(point.data().begin() + static_cast<std::ptrdiff_t>(i * per), per,
                    best.data().begin() + static_cast<std::ptrdiff_t>(i * per));
      }
    }
    have_best_values = true;
  };

  for (std::size_t run = 0; run < config.restarts; ++run) {
    Rng rng(derive_seed(seed, run));
    Perturbation state(x, config);
    if (config.random_start) state.random_start(rng);
    for (std::size_t step = 0; step < config.steps; ++step) {
      Tensor point = state.point();
      point.set_requires_grad(true);
      Tape tape;
      TapeScope scope(tape);
      Tensor values = objective(point);
      if (!values.defined() || values.numel() != n) {
        throw ShapeError("pgd_attack: objective must return one value per example (" +
                         std::to_string(n) + ")");
      }
      std::vector<float> vals(values.data().begin(), values.data().end());
      for (float v : vals) {
        if (!std::isfinite(v)) throw NumericError("pgd_attack: non-finite objective at step " + std::to_string(step));
      }
      if (config.best_iterate) keep_better(point, vals);
      Tensor total = ops::sum(values);
      tape.backward(total);
      if (point.has_grad()) {
        state.ascend(point.grad());
      } else {
        state.ascend(std::vector<float>(point.numel(), 0.0f));
      }
    }
    Tensor last = state.point();
    const bool need_final = config.best_iterate || config.restarts > 1 || record_objective;
    if (!need_final) {
      best = last;
      continue;
    }
    auto vals = evaluate(objective, last, n, config.steps);
    if (config.best_iterate || config.restarts > 1) {
      keep_better(last, vals);
    } else {
      best = last;
      best_value = vals;
      have_best_values = true;
    }
  }

  AdversarialBatch out;
  out.x_adv = best;
  out.delta = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out.delta.data()[i] = best.data()[i] - x.data()[i];
  if (have_best_values && (record_objective || config.best_iterate)) out.objective = best_value;
  return out;
}

void check_adversarial_constraints(const Tensor& x, const AdversarialBatch& batch,
                                   const AttackConfig& config) {
  if (batch.x_adv.shape() != x.shape()) throw ShapeError("adversarial batch shape differs from input");
  const double bound = config.epsilon + 1e-7;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const float xa = batch.x_adv.data()[i];
    const double d = static_cast<double>(xa) - static_cast<double>(x.data()[i]);
    if (!(xa >= 0.0f && xa <= 1.0f)) throw NumericError("adversarial example leaves the [0, 1] box");
    if (std::abs(d) > bound) throw NumericError("adversarial example leaves the epsilon ball");
    if (config.step_mode == StepMode::pixel_grid) {
      const double k = d * 255.0;
      if (std::abs(k - std::round(k)) > 1e-3) throw NumericError("adversarial perturbation is off the 1/255 grid");
    }
  }
}

}  // namespace zsr
