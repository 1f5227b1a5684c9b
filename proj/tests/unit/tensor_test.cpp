#include <cstring>
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "grad_harness.hpp"
#include "zsr/error.hpp"
#include "zsr/gradcheck.hpp"
#include "zsr/ops.hpp"
#include "zsr/optim.hpp"
#include "zsr/tensor.hpp"

using namespace zsr;
using zsr::testing::compare_gradients;
using zsr::testing::random64;

namespace {

Tensor T(Shape s, std::vector<float> v) { return Tensor::from_data(std::move(s), std::move(v)); }

}  // namespace

TEST(Ops, SoftmaxOfZerosIsUniform) {
  auto y = ops::softmax(T({2}, {0, 0}));
  EXPECT_FLOAT_EQ(y.data()[0], 0.5f);
  EXPECT_FLOAT_EQ(y.data()[1], 0.5f);
}

TEST(Ops, L2NormalizeThreeFour) {
  auto y = ops::l2_normalize(T({2}, {3, 4}));
  EXPECT_FLOAT_EQ(y.data()[0], 0.6f);
  EXPECT_FLOAT_EQ(y.data()[1], 0.8f);
}

TEST(Ops, MatmulByHand) {
  auto y = ops::matmul(T({1, 2}, {1, 2}), T({2, 1}, {3, 4}));
  ASSERT_EQ(y.shape(), (Shape{1, 1}));
  EXPECT_EQ(y.data()[0], 11.0f);
}

TEST(Ops, LayerNormOfConstantIsZero) {
  auto y = ops::layer_norm(Tensor::full({5}, 3.0f), Tensor::full({5}, 1.0f), Tensor::zeros({5}));
  for (float v : y.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Ops, ShapeErrorNamesOpAndShapes) {
  try {
    ops::matmul(T({1, 2}, {1, 2}), T({3, 1}, {1, 2, 3}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("[1,2]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[3,1]"), std::string::npos) << msg;
  }
  EXPECT_THROW(ops::add(T({2}, {1, 2}), T({3}, {1, 2, 3})), ShapeError);
}

TEST(Ops, StrictModeRejectsNonFinite) {
  const auto bad = T({2}, {1.0f, std::nanf("")});
  EXPECT_NO_THROW(ops::scale(bad, 2.0));
  set_strict_mode(true);
  EXPECT_THROW(ops::scale(bad, 2.0), NumericError);
  set_strict_mode(false);
}

TEST(Ops, SignConvention) {
  auto y = ops::sign(T({4}, {-2.0f, 0.0f, -0.0f, 1e-30f}));
  EXPECT_EQ(y.data()[0], -1.0f);
  EXPECT_EQ(y.data()[1], 0.0f);
  EXPECT_EQ(y.data()[2], 0.0f);
  EXPECT_EQ(y.data()[3], 1.0f);
}

TEST(Ops, SoftmaxSumsToOneAndIsPositive) {
  std::mt19937_64 rng(5);
  std::normal_distribution<float> n(0.0f, 10.0f);
  for (int trial = 0; trial < 50; ++trial) {
    auto x = Tensor::zeros({3, 7});
    for (auto& v : x.data()) v = n(rng);
    auto y = ops::softmax(x);
    for (int r = 0; r < 3; ++r) {
      double s = 0;
      for (int c = 0; c < 7; ++c) {
        EXPECT_GT(y.data()[r * 7 + c], 0.0f);
        s += y.data()[r * 7 + c];
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(Backward, SumOfSquares) {
  auto x = T({2}, {1, 2});
  x.set_requires_grad(true);
  Tape tape;
  TapeScope scope(tape);
  auto loss = ops::sum(ops::mul(x, x));
  backward(loss);
  EXPECT_EQ(x.grad()[0], 2.0f);
  EXPECT_EQ(x.grad()[1], 4.0f);
}

TEST(Backward, ConstantLossLeavesGradsZero) {
  auto x = T({2}, {1, 2});
  x.set_requires_grad(true);
  x.zero_grad();
  Tape tape;
  TapeScope scope(tape);
  auto c = T({2}, {3, 4});
  auto loss = ops::sum(c);
  backward(loss);
  for (float g : x.grad()) EXPECT_EQ(g, 0.0f);
}

TEST(Backward, NonScalarLossThrows) {
  auto x = T({2}, {1, 2});
  x.set_requires_grad(true);
  Tape tape;
  TapeScope scope(tape);
  auto y = ops::scale(x, 2.0);
  EXPECT_THROW(backward(y), ShapeError);
}

TEST(Backward, NeedsActiveTape) {
  auto loss = Tensor::scalar(1.0f);
  EXPECT_THROW(backward(loss), Error);
}

TEST(Backward, UnrelatedTapeContentDoesNotChangeGradients) {
  auto run = [](bool noise) {
    auto x = T({3}, {0.5f, -1.0f, 2.0f});
    x.set_requires_grad(true);
    Tape tape;
    TapeScope scope(tape);
    if (noise) {
      auto other = T({3}, {1, 2, 3});
      other.set_requires_grad(true);
      auto junk = ops::gelu(ops::mul(other, other));
      (void)junk;
    }
    auto loss = ops::sum(ops::gelu(ops::mul(x, x)));
    backward(loss);
    return std::vector<float>(x.grad().begin(), x.grad().end());
  };
  EXPECT_EQ(run(false), run(true));
}

TEST(Backward, DeterministicAcrossRuns) {
  auto run = [] {
    std::mt19937_64 rng(11);
    auto a = random64(rng, {4, 6}).cast<float>();
    auto b = random64(rng, {6, 5}).cast<float>();
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    Tape tape;
    TapeScope scope(tape);
    auto loss = ops::sum(ops::softmax(ops::matmul(a, b)));
    backward(loss);
    std::vector<float> out(a.grad().begin(), a.grad().end());
    out.insert(out.end(), b.grad().begin(), b.grad().end());
    out.push_back(loss.item());
    return out;
  };
  set_deterministic(true);
  const auto first = run();
  const auto second = run();
  ASSERT_EQ(first.size(), second.size());
  EXPECT_EQ(0, std::memcmp(first.data(), second.data(), first.size() * sizeof(float)));
}

TEST(FiniteDiff, Square) {
  const std::vector<double> theta{3.0};
  auto g = finite_diff_gradient([](std::span<const double> p) { return p[0] * p[0]; }, theta, 1e-4);
  EXPECT_NEAR(g[0], 6.0, 1e-6);
}

TEST(FiniteDiff, ConstantIsZero) {
  const std::vector<double> theta{1.0, -2.0, 0.5};
  auto g = finite_diff_gradient([](std::span<const double>) { return 4.2; }, theta, 1e-4);
  for (double v : g) EXPECT_EQ(v, 0.0);
}

TEST(FiniteDiff, Errors) {
  const std::vector<double> theta{1.0, 2.0};
  EXPECT_THROW(finite_diff_gradient([](std::span<const double>) { return 0.0; }, theta, 0.0), ValidationError);
  try {
    finite_diff_gradient([](std::span<const double> p) { return p[1] > 2.0 ? NAN : 0.0; }, theta, 1e-3);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("coordinate 1"), std::string::npos) << e.what();
  }
}

TEST(Sgd, FirstStepIsPlainSgd) {
  std::vector<Tensor> p{Tensor::full({1}, 1.0f)};
  std::vector<Tensor> v{Tensor::zeros({1})};
  p[0].ensure_grad()[0] = 2.0f;
  sgd_momentum_step(p, v, 0.1, 0.9);
  EXPECT_FLOAT_EQ(v[0].data()[0], 2.0f);
  EXPECT_FLOAT_EQ(p[0].data()[0], 0.8f);
  for (float g : p[0].grad()) EXPECT_EQ(g, 0.0f);
}

TEST(Sgd, ZeroLearningRateLeavesParams) {
  std::vector<Tensor> p{T({2}, {1.5f, -3.0f})};
  std::vector<Tensor> v{Tensor::zeros({2})};
  p[0].ensure_grad()[0] = 7.0f;
  sgd_momentum_step(p, v, 0.0, 0.9);
  EXPECT_EQ(p[0].data()[0], 1.5f);
  EXPECT_EQ(p[0].data()[1], -3.0f);
}

TEST(Sgd, TwoStepsWithConstantGradient) {
  std::vector<Tensor> p{Tensor::full({1}, 0.0f)};
  std::vector<Tensor> v{Tensor::zeros({1})};
  p[0].ensure_grad()[0] = 1.0f;
  sgd_momentum_step(p, v, 0.1, 0.9);
  EXPECT_NEAR(p[0].data()[0], -0.1f, 1e-7);
  p[0].ensure_grad()[0] = 1.0f;
  sgd_momentum_step(p, v, 0.1, 0.9);
  EXPECT_NEAR(p[0].data()[0], -0.29f, 1e-6);
}

TEST(Sgd, MissingGradThrows) {
  std::vector<Tensor> p{Tensor::full({1}, 1.0f)};
  std::vector<Tensor> v{Tensor::zeros({1})};
  EXPECT_THROW(sgd_momentum_step(p, v, 0.1, 0.9), Error);
}

// Every primitive against central differences over 20 seeds. The loss is a
// random linear functional of the output so that every output coordinate
// contributes.
namespace {

struct PrimitiveCase {
  const char* name;
  std::vector<Shape> shapes;
  std::function<Tensor64(const std::vector<Tensor64>&)> fn;
  double lo = -1.0, hi = 1.0;
};

double primitive_error(const PrimitiveCase& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Tensor64> inputs;
  for (const auto& s : c.shapes) inputs.push_back(random64(rng, s, c.lo, c.hi));
  const auto probe = c.fn(inputs);
  const auto w = random64(rng, probe.shape());
  const auto loss = [&] { return ops::sum(ops::mul(c.fn(inputs), w)); };
  return compare_gradients(loss, inputs, {}, 1e-6, 1e-7).max_rel;
}

const std::uint32_t kRows[] = {2, 0, 2, 1};

std::vector<PrimitiveCase> primitive_cases() {
  using V = std::vector<Tensor64>;
  return {
      {"matmul", {{3, 4}, {4, 5}}, [](const V& v) { return ops::matmul(v[0], v[1]); }},
      {"matmul_t", {{2, 3, 4}, {5, 4}}, [](const V& v) { return ops::matmul(v[0], v[1], true); }},
      {"bmm", {{2, 3, 4}, {2, 4, 5}}, [](const V& v) { return ops::bmm(v[0], v[1]); }},
      {"bmm_t", {{2, 3, 4}, {2, 5, 4}}, [](const V& v) { return ops::bmm(v[0], v[1], true); }},
      {"add", {{3, 4}, {3, 4}}, [](const V& v) { return ops::add(v[0], v[1]); }},
      {"sub", {{3, 4}, {3, 4}}, [](const V& v) { return ops::sub(v[0], v[1]); }},
      {"mul", {{3, 4}, {3, 4}}, [](const V& v) { return ops::mul(v[0], v[1]); }},
      {"add_bias", {{2, 3, 4}, {4}}, [](const V& v) { return ops::add_bias(v[0], v[1]); }},
      {"scale", {{3, 4}}, [](const V& v) { return ops::scale(v[0], -2.5); }},
      {"clamp", {{3, 4}}, [](const V& v) { return ops::clamp(v[0], -0.5, 0.5); }},
      {"gelu", {{3, 4}}, [](const V& v) { return ops::gelu(v[0]); }, -3.0, 3.0},
      {"log", {{3, 4}}, [](const V& v) { return ops::log(v[0]); }, 0.2, 2.0},
      {"softmax", {{3, 5}}, [](const V& v) { return ops::softmax(v[0]); }, -3.0, 3.0},
      {"log_softmax", {{3, 5}}, [](const V& v) { return ops::log_softmax(v[0]); }, -3.0, 3.0},
      {"layer_norm", {{3, 6}, {6}, {6}}, [](const V& v) { return ops::layer_norm(v[0], v[1], v[2]); }},
      {"l2_normalize", {{3, 4}}, [](const V& v) { return ops::l2_normalize(v[0]); }},
      {"cosine", {{3, 4}, {5, 4}}, [](const V& v) { return ops::cosine_similarity_matrix(v[0], v[1]); }},
      {"gather_rows", {{3, 4}}, [](const V& v) { return ops::gather_rows(v[0], std::span<const std::uint32_t>(kRows)); }},
      {"select_per_row", {{4, 3}}, [](const V& v) { return ops::select_per_row(v[0], std::span<const std::uint32_t>(kRows)); }},
      {"sum", {{3, 4}}, [](const V& v) { return ops::sum(v[0]); }},
      {"mean", {{3, 4}}, [](const V& v) { return ops::mean(v[0]); }},
      {"reshape", {{3, 4}}, [](const V& v) { return ops::reshape(v[0], {2, 6}); }},
      {"patchify", {{2, 3, 4, 4}}, [](const V& v) { return ops::patchify(v[0], 2); }},
      {"split_heads", {{2, 3, 12}}, [](const V& v) { return ops::split_heads(v[0], 1, 2); }},
      {"merge_heads", {{4, 3, 2}}, [](const V& v) { return ops::merge_heads(v[0], 2); }},
      {"concat_front", {{2, 3, 4}, {1, 4}}, [](const V& v) { return ops::concat_tokens(v[0], v[1], true); }},
      {"concat_back", {{2, 3, 4}, {2, 4}}, [](const V& v) { return ops::concat_tokens(v[0], v[1], false); }},
      {"select_token", {{2, 3, 4}}, [](const V& v) { return ops::select_token(v[0], 1); }},
  };
}

}  // namespace

TEST(GradCheck, EveryPrimitiveOverTwentySeeds) {
  for (const auto& c : primitive_cases()) {
    double worst = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) worst = std::max(worst, primitive_error(c, seed));
    EXPECT_LT(worst, 1e-3) << c.name;
  }
}

TEST(GradCheck, SignHasZeroGradient) {
  std::mt19937_64 rng(3);
  auto x = random64(rng, {5});
  const auto loss = [&] { return ops::sum(ops::sign(x)); };
  auto cmp = compare_gradients(loss, {x}, {}, 1e-6, 1e-7);
  for (double g : cmp.analytic) EXPECT_EQ(g, 0.0);
  for (double g : cmp.numeric) EXPECT_EQ(g, 0.0);
}
