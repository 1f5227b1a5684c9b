#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <limits>
#include <random>

#include "zsr/attack.hpp"
#include "zsr/error.hpp"
#include "zsr/ops.hpp"

using namespace zsr;

namespace {

// objective(x)_i = Σ_j w_j x_ij for images [N, D].
AttackObjective linear(const std::vector<float>& w) {
  const auto col = Tensor::from_data({w.size(), 1}, w);
  return [col](const Tensor& x) {
    const std::size_t n = x.dim(0);
    auto flat = ops::reshape(x, {n, x.numel() / n});
    return ops::reshape(ops::matmul(flat, col), {n});
  };
}

// Indefinite quadratic in grid units around the clean batch x0:
// u = 255·(x − x0), f_i = u_iᵀ A u_i + bᵀ u_i.
AttackObjective quadratic(const Tensor& x0, const Tensor& a, const Tensor& b) {
  const std::size_t d = a.dim(0);
  const auto ones = Tensor::full({d, 1}, 1.0f);
  return [=](const Tensor& x) {
    const std::size_t n = x.dim(0);
    auto u = ops::scale(ops::sub(x, x0), 255.0);
    auto quad = ops::mul(u, ops::matmul(u, a));
    auto lin = ops::matmul(u, b);
    return ops::reshape(ops::add(ops::matmul(quad, ones), lin), {n});
  };
}

Tensor constant_tensor(Shape shape, float v) { return Tensor::full(std::move(shape), v); }

}  // namespace

TEST(Pgd, PositiveGradientSaturates) {
  auto x = constant_tensor({2, 3}, 0.5f);
  AttackConfig cfg;
  cfg.epsilon = 2.0 / 255;
  cfg.alpha = 1.0 / 255;
  cfg.steps = 2;
  const auto out = pgd_attack(linear({1.0f, 2.0f, 0.5f}), x, cfg, 0);
  for (float d : out.delta.data()) EXPECT_NEAR(d, 2.0 / 255, 1e-7);
}

TEST(Pgd, ZeroGradientLeavesInputUnchanged) {
  auto x = constant_tensor({2, 3}, 0.25f);
  AttackConfig cfg;
  cfg.steps = 5;
  const auto out = pgd_attack(linear({0.0f, 0.0f, 0.0f}), x, cfg, 0);
  EXPECT_EQ(0, std::memcmp(out.x_adv.ptr(), x.ptr(), x.numel() * sizeof(float)));
}

TEST(Pgd, BoxProjectionClampsAtOne) {
  auto x = constant_tensor({1, 2}, 0.999f);
  AttackConfig cfg;
  cfg.epsilon = cfg.alpha = 4.0 / 255;
  cfg.steps = 1;
  const auto out = pgd_attack(linear({1.0f, 1.0f}), x, cfg, 0);
  for (float v : out.x_adv.data()) EXPECT_EQ(v, 1.0f);
}

TEST(Pgd, NegativeGradientDescendsAndClampsAtZero) {
  auto x = Tensor::from_data({1, 2}, {0.001f, 0.5f});
  AttackConfig cfg;
  cfg.epsilon = cfg.alpha = 4.0 / 255;
  cfg.steps = 3;
  const auto out = pgd_attack(linear({-1.0f, -1.0f}), x, cfg, 0);
  EXPECT_EQ(out.x_adv.data()[0], 0.0f);
  EXPECT_NEAR(out.x_adv.data()[1], 0.5 - 4.0 / 255, 1e-7);
}

TEST(Pgd, ZeroEpsilonReturnsInput) {
  auto x = constant_tensor({2, 2}, 0.3f);
  AttackConfig cfg;
  cfg.epsilon = 0;
  cfg.random_start = true;
  const auto out = pgd_attack(linear({1.0f, -1.0f}), x, cfg, 3);
  EXPECT_EQ(0, std::memcmp(out.x_adv.ptr(), x.ptr(), x.numel() * sizeof(float)));
}

// A 2-pixel image at ε = 1/255 in grid mode has 9 reachable points. With the
// start included in best_iterate and enough random restarts the attack must
// return the exhaustive maximum.
TEST(Pgd, PixelGridMatchesExhaustiveMaximum) {
  for (std::uint64_t trial = 0; trial < 25; ++trial) {
    std::mt19937_64 rng(trial);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    const auto x = Tensor::from_data({1, 2}, {0.2f + 0.5f * (u(rng) + 1) / 2, 0.2f + 0.5f * (u(rng) + 1) / 2});
    auto a = Tensor::from_data({2, 2}, {u(rng), u(rng), u(rng), u(rng)});
    auto b = Tensor::from_data({2, 1}, {0.3f * u(rng), 0.3f * u(rng)});
    const auto f = quadratic(x, a, b);

    float exhaustive = -std::numeric_limits<float>::infinity();
    for (int i = -1; i <= 1; ++i) {
      for (int j = -1; j <= 1; ++j) {
        auto p = Tensor::from_data({1, 2}, {x.data()[0] + i * (1.0f / 255.0f), x.data()[1] + j * (1.0f / 255.0f)});
        exhaustive = std::max(exhaustive, f(p).data()[0]);
      }
    }

    AttackConfig cfg;
    cfg.epsilon = cfg.alpha = 1.0 / 255;
    cfg.step_mode = StepMode::pixel_grid;
    cfg.steps = 9;
    cfg.best_iterate = true;
    cfg.random_start = true;
    cfg.restarts = 40;
    const auto out = pgd_attack(f, x, cfg, trial);
    ASSERT_EQ(out.objective.size(), 1u);
    EXPECT_FLOAT_EQ(out.objective[0], exhaustive) << "trial " << trial;
    EXPECT_FLOAT_EQ(f(out.x_adv).data()[0], exhaustive);
    check_adversarial_constraints(x, out, cfg);
  }
}

TEST(Pgd, NonFiniteObjectiveReportsStep) {
  auto x = constant_tensor({1, 2}, 0.5f);
  AttackConfig cfg;
  cfg.steps = 3;
  int calls = 0;
  AttackObjective f = [&](const Tensor& p) {
    auto v = linear({1.0f, 1.0f})(p);
    if (++calls == 2) return ops::log(ops::scale(v, 0.0));
    return v;
  };
  try {
    pgd_attack(f, x, cfg, 0);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos) << e.what();
  }
}

TEST(Pgd, ObjectiveShapeChecked) {
  auto x = constant_tensor({2, 2}, 0.5f);
  AttackObjective f = [](const Tensor& p) { return ops::sum(p); };
  EXPECT_THROW(pgd_attack(f, x, AttackConfig{}, 0), ShapeError);
}

TEST(Pgd, InputOutsideBoxRejected) {
  EXPECT_THROW(pgd_attack(linear({1.0f}), constant_tensor({1, 1}, 1.5f), AttackConfig{}, 0), ValidationError);
}

TEST(Pgd, ConfigValidation) {
  AttackConfig c;
  c.alpha = 0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = AttackConfig{};
  c.epsilon = 1.5;
  EXPECT_THROW(c.validate(), ValidationError);
  c = AttackConfig{};
  c.steps = 0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = AttackConfig{};
  c.norm = 2;
  EXPECT_THROW(c.validate(), ValidationError);
  EXPECT_EQ(parse_step_mode("pixel-grid-quantized"), StepMode::pixel_grid);
  EXPECT_THROW(parse_step_mode("quantum"), ValidationError);
}

TEST(Pgd, Defaults) {
  const auto t = AttackConfig::training_default();
  EXPECT_DOUBLE_EQ(t.epsilon, 1.0 / 255);
  EXPECT_DOUBLE_EQ(t.alpha, 1.0 / 255);
  EXPECT_EQ(t.steps, 2u);
  EXPECT_FALSE(t.best_iterate);
  EXPECT_FALSE(t.random_start);
  const auto e = AttackConfig::evaluation_default();
  EXPECT_EQ(e.steps, 100u);
  EXPECT_TRUE(e.best_iterate);
  EXPECT_FALSE(e.random_start);
}

TEST(Pgd, DeterministicForFixedSeed) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  auto x = Tensor::zeros({3, 4});
  for (auto& v : x.data()) v = u(rng);
  auto a = Tensor::zeros({4, 4});
  for (auto& v : a.data()) v = u(rng) - 0.5f;
  const auto f = quadratic(x, a, Tensor::full({4, 1}, 0.1f));
  AttackConfig cfg;
  cfg.epsilon = 8.0 / 255;
  cfg.alpha = 2.0 / 255;
  cfg.steps = 7;
  cfg.random_start = true;
  const auto r1 = pgd_attack(f, x, cfg, 42);
  const auto r2 = pgd_attack(f, x, cfg, 42);
  EXPECT_EQ(0, std::memcmp(r1.x_adv.ptr(), r2.x_adv.ptr(), x.numel() * sizeof(float)));
  const auto r3 = pgd_attack(f, x, cfg, 43);
  EXPECT_NE(0, std::memcmp(r1.x_adv.ptr(), r3.x_adv.ptr(), x.numel() * sizeof(float)));
}

// 10,000 random (x, cfg) trials: ε-ball, box and (in grid mode) the grid hold
// exactly, and best_iterate never returns something worse than the start.
TEST(Pgd, ConstraintsAndBestIterateMonotonicity) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  int checked = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t n = 1 + rng() % 3, d = 1 + rng() % 4;
    auto x = Tensor::zeros({n, d});
    for (auto& v : x.data()) {
      const float r = u(rng);
      v = r < 0.15f ? 0.0f : (r > 0.85f ? 1.0f : u(rng));
    }
    auto a = Tensor::zeros({d, d});
    for (auto& v : a.data()) v = 2 * u(rng) - 1;
    auto b = Tensor::zeros({d, 1});
    for (auto& v : b.data()) v = 2 * u(rng) - 1;
    AttackConfig cfg;
    cfg.epsilon = (1 + rng() % 16) / 255.0;
    cfg.alpha = (1 + rng() % 4) / 255.0 * (rng() % 2 ? 1.0 : 0.37);
    cfg.steps = 1 + rng() % 6;
    cfg.random_start = rng() % 2;
    cfg.best_iterate = rng() % 2;
    cfg.step_mode = rng() % 2 ? StepMode::pixel_grid : StepMode::fractional;
    // Shift the quadratic's centre so the objective is not symmetric about x.
    auto centre = Tensor::zeros({n, d});
    for (std::size_t i = 0; i < x.numel(); ++i) centre.data()[i] = x.data()[i] + (u(rng) - 0.5f) * 0.02f;
    const auto f = quadratic(centre, a, b);
    const auto out = pgd_attack(f, x, cfg, trial);
    ASSERT_NO_THROW(check_adversarial_constraints(x, out, cfg)) << "trial " << trial;
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const float xa = out.x_adv.data()[i];
      ASSERT_TRUE(xa >= 0.0f && xa <= 1.0f);
      ASSERT_LE(std::abs(static_cast<double>(xa) - x.data()[i]), cfg.epsilon + 1e-7);
    }
    if (cfg.best_iterate && !cfg.random_start) {
      const auto clean = f(x);
      for (std::size_t i = 0; i < n; ++i) ASSERT_GE(out.objective[i], clean.data()[i]);
    }
    ++checked;
  }
  EXPECT_EQ(checked, 10000);
}

TEST(Constraints, DetectViolations) {
  auto x = constant_tensor({1, 2}, 0.5f);
  AttackConfig cfg;
  cfg.epsilon = 1.0 / 255;
  AdversarialBatch b;
  b.x_adv = Tensor::from_data({1, 2}, {0.5f + 2.0f / 255, 0.5f});
  EXPECT_THROW(check_adversarial_constraints(x, b, cfg), NumericError);
  cfg.epsilon = 0.1;
  cfg.step_mode = StepMode::pixel_grid;
  b.x_adv = Tensor::from_data({1, 2}, {0.5f + 0.5f / 255, 0.5f});
  EXPECT_THROW(check_adversarial_constraints(x, b, cfg), NumericError);
}
