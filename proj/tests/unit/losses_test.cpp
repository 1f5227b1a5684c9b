#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <numeric>
#include <random>

#include "grad_harness.hpp"
#include "zsr/error.hpp"
#include "zsr/losses.hpp"
#include "zsr/ops.hpp"
#include "zsr/text_bank.hpp"

using namespace zsr;

namespace {

const double kClosed = std::log(1.0 + std::exp(-1.0));  // 0.313262

Tensor rows(std::vector<std::vector<float>> r) {
  std::vector<float> flat;
  for (auto& v : r) flat.insert(flat.end(), v.begin(), v.end());
  return Tensor::from_data({r.size(), r[0].size()}, flat);
}

TextBank bank_of(const Tensor& t) {
  TextBank b;
  for (std::size_t i = 0; i < t.dim(0); ++i) b.names.push_back("c" + std::to_string(i));
  b.embeddings = t;
  b.provenance = "generated";
  return b;
}

Tensor random_matrix(std::mt19937_64& rng, std::size_t n, std::size_t d) {
  std::normal_distribution<float> g(0.0f, 1.0f);
  auto t = Tensor::zeros({n, d});
  for (auto& v : t.data()) v = g(rng);
  return t;
}

std::vector<std::uint32_t> random_labels(std::mt19937_64& rng, std::size_t n, std::size_t c) {
  std::vector<std::uint32_t> y(n);
  for (auto& v : y) v = static_cast<std::uint32_t>(rng() % c);
  return y;
}

// Independent 64-bit recomputation straight from the definition.
double brute_cos(const float* a, const float* b, std::size_t d) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t k = 0; k < d; ++k) {
    ab += static_cast<double>(a[k]) * b[k];
    aa += static_cast<double>(a[k]) * a[k];
    bb += static_cast<double>(b[k]) * b[k];
  }
  return ab / (std::max(std::sqrt(aa), 1e-12) * std::max(std::sqrt(bb), 1e-12));
}

double brute_contrastive(const Tensor& z, const Tensor& cols, const std::vector<std::uint32_t>& y, double tau) {
  const std::size_t n = z.dim(0), c = cols.dim(0), d = z.dim(1);
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double denom = 0;
    for (std::size_t j = 0; j < c; ++j) denom += std::exp(brute_cos(z.ptr() + i * d, cols.ptr() + j * d, d) / tau);
    const double num = std::exp(brute_cos(z.ptr() + i * d, cols.ptr() + y[i] * d, d) / tau);
    total += -std::log(num / denom);
  }
  return total / static_cast<double>(n);
}

double brute_ce(const Tensor& logits, const std::vector<std::uint32_t>& y) {
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double denom = 0;
    for (std::size_t j = 0; j < c; ++j) denom += std::exp(static_cast<double>(logits.ptr()[i * c + j]));
    total += std::log(denom) - logits.ptr()[i * c + y[i]];
  }
  return total / static_cast<double>(n);
}

std::vector<std::uint32_t> iota_labels(std::size_t n) {
  std::vector<std::uint32_t> y(n);
  std::iota(y.begin(), y.end(), 0u);
  return y;
}

}  // namespace

TEST(Contrastive, OrthogonalClosedForm) {
  const auto e = rows({{1, 0}, {0, 1}});
  const std::vector<std::uint32_t> y{0, 1};
  EXPECT_NEAR(contrastive_image_text(e, bank_of(e), y, Temperature(1.0)).item(), kClosed, 1e-6);
}

TEST(Contrastive, UniformSoftmax) {
  const auto z = rows({{0.3f, 0.4f, 0.5f}, {0.3f, 0.4f, 0.5f}});
  const auto b = rows({{0.3f, 0.4f, 0.5f}, {0.3f, 0.4f, 0.5f}, {0.3f, 0.4f, 0.5f}, {0.3f, 0.4f, 0.5f}});
  EXPECT_NEAR(contrastive_image_text(z, bank_of(b), std::vector<std::uint32_t>{0, 3}, Temperature(0.07)).item(),
              std::log(4.0), 1e-6);
}

TEST(Contrastive, BruteForceOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const auto z = random_matrix(rng, 8, 6);
    const auto b = random_matrix(rng, 5, 6);
    const auto y = random_labels(rng, 8, 5);
    for (double tau : {1.0, 0.07}) {
      const double got = contrastive_image_text(z, bank_of(b), y, Temperature(tau)).item();
      EXPECT_NEAR(got, brute_contrastive(z, b, y, tau), 1e-6 * std::max(1.0, got)) << seed << " " << tau;
      // The 64-bit instantiation agrees to far tighter precision.
      const double got64 =
          ops::mean(contrastive_per_example(z.cast<double>(), b.cast<double>(), y, Temperature(tau))).item();
      EXPECT_NEAR(got64, brute_contrastive(z, b, y, tau), 1e-9);
    }
  }
}

TEST(Contrastive, LabelOutOfRange) {
  const auto e = rows({{1, 0}, {0, 1}});
  EXPECT_THROW(contrastive_image_text(e, bank_of(e), std::vector<std::uint32_t>{0, 2}, Temperature(1.0)),
               ValidationError);
  EXPECT_THROW(contrastive_image_text(e, bank_of(e), std::vector<std::uint32_t>{0}, Temperature(1.0)),
               ValidationError);
}

TEST(Contrastive, TemperatureMustBePositive) {
  EXPECT_THROW(Temperature(0.0), ValidationError);
  EXPECT_THROW(Temperature(-0.5), ValidationError);
  EXPECT_THROW(Temperature(std::nan("")), ValidationError);
}

TEST(Contrastive, PermutationEquivariance) {
  std::mt19937_64 rng(3);
  const auto z = random_matrix(rng, 8, 6);
  const auto b = random_matrix(rng, 5, 6);
  const auto y = random_labels(rng, 8, 5);
  const double base = contrastive_image_text(z, bank_of(b), y, Temperature(0.07)).item();
  std::vector<std::size_t> perm(8);
  std::iota(perm.begin(), perm.end(), 0u);
  std::shuffle(perm.begin(), perm.end(), rng);
  auto zp = Tensor::zeros({8, 6});
  std::vector<std::uint32_t> yp(8);
  for (std::size_t i = 0; i < 8; ++i) {
    std::memcpy(zp.ptr() + i * 6, z.ptr() + perm[i] * 6, 6 * sizeof(float));
    yp[i] = y[perm[i]];
  }
  EXPECT_NEAR(contrastive_image_text(zp, bank_of(b), yp, Temperature(0.07)).item(), base, 1e-6);
  // Batch permutation of both views moves the diagonal with it.
  const auto v = random_matrix(rng, 8, 6);
  auto vp = Tensor::zeros({8, 6});
  for (std::size_t i = 0; i < 8; ++i) std::memcpy(vp.ptr() + i * 6, v.ptr() + perm[i] * 6, 6 * sizeof(float));
  EXPECT_NEAR(imgcoadv_loss(zp, vp, Temperature(0.07)).item(), imgcoadv_loss(z, v, Temperature(0.07)).item(), 1e-6);
}

TEST(Contrastive, ScaleInvariance) {
  std::mt19937_64 rng(4);
  const auto z = random_matrix(rng, 8, 6);
  const auto b = random_matrix(rng, 5, 6);
  const auto v = random_matrix(rng, 8, 6);
  const auto y = random_labels(rng, 8, 5);
  auto zs = z.detach();
  std::uniform_real_distribution<float> s(0.1f, 10.0f);
  for (std::size_t i = 0; i < 8; ++i) {
    const float k = s(rng);
    for (std::size_t j = 0; j < 6; ++j) zs.ptr()[i * 6 + j] *= k;
  }
  const Temperature tau(0.07);
  EXPECT_NEAR(contrastive_image_text(zs, bank_of(b), y, tau).item(), contrastive_image_text(z, bank_of(b), y, tau).item(),
              1e-6);
  EXPECT_NEAR(imgcoadv_loss(zs, v, tau).item(), imgcoadv_loss(z, v, tau).item(), 1e-6);
}

TEST(Contrastive, Bounds) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const auto z = random_matrix(rng, 8, 6);
    const auto b = random_matrix(rng, 5, 6);
    const auto y = random_labels(rng, 8, 5);
    for (double tau : {0.07, 0.5, 1.0}) {
      const double l = contrastive_image_text(z, bank_of(b), y, Temperature(tau)).item();
      EXPECT_GE(l, 0.0);
      EXPECT_LE(l, std::log(5.0) + 2.0 / tau);
    }
  }
}

TEST(CoAdv, OrthonormalDictionaryClosedForm) {
  EmbeddingDictionary dict;
  dict.codes = rows({{1, 0}, {0, 1}});
  const std::vector<std::uint32_t> y{1, 0};
  EXPECT_NEAR(coadv_loss(rows({{0, 1}, {1, 0}}), dict, y, Temperature(1.0)).item(), kClosed, 1e-6);
}

TEST(CoAdv, BitIdenticalToTextLoss) {
  std::mt19937_64 rng(5);
  const auto z = random_matrix(rng, 8, 6);
  const auto y = random_labels(rng, 8, 5);
  const auto dict = make_embedding_dictionary(5, 6, 9);
  const float a = coadv_loss(z, dict, y, Temperature(0.07)).item();
  const float b = contrastive_image_text(z, bank_of(dict.codes), y, Temperature(0.07)).item();
  EXPECT_EQ(0, std::memcmp(&a, &b, sizeof(float)));
}

TEST(CoAdv, BruteForceOracle) {
  std::mt19937_64 rng(6);
  const auto z = random_matrix(rng, 8, 6);
  const auto y = random_labels(rng, 8, 5);
  const auto dict = make_embedding_dictionary(5, 6, 2);
  EXPECT_NEAR(coadv_loss(z, dict, y, Temperature(0.07)).item(), brute_contrastive(z, dict.codes, y, 0.07), 1e-5);
}

TEST(CoAdv, DictionaryConstruction) {
  const auto a = make_embedding_dictionary(4, 8, 1);
  const auto b = make_embedding_dictionary(4, 8, 1);
  EXPECT_EQ(a.codes.shape(), (Shape{4, 8}));
  EXPECT_EQ(0, std::memcmp(a.codes.ptr(), b.codes.ptr(), 32 * sizeof(float)));
  EXPECT_FALSE(a.trainable);
  EXPECT_FALSE(a.codes.requires_grad());
  for (std::size_t r = 0; r < 4; ++r) {
    double s = 0;
    for (std::size_t k = 0; k < 8; ++k) s += std::pow(a.codes.ptr()[r * 8 + k], 2);
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
  EXPECT_TRUE(make_embedding_dictionary(4, 8, 1, true).codes.requires_grad());
  EXPECT_THROW(make_embedding_dictionary(0, 8, 1), ValidationError);
}

TEST(ImgCoAdv, ClosedForm) {
  const auto e = rows({{1, 0}, {0, 1}});
  EXPECT_NEAR(imgcoadv_loss(e, e, Temperature(1.0)).item(), kClosed, 1e-6);
}

TEST(ImgCoAdv, SingleInstanceIsZero) {
  const auto a = rows({{0.2f, -0.7f, 0.1f}});
  const auto b = rows({{-0.5f, 0.4f, 0.9f}});
  EXPECT_NEAR(imgcoadv_loss(a, b, Temperature(0.07)).item(), 0.0, 1e-7);
}

TEST(ImgCoAdv, BruteForceOracle) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed + 40);
    const auto a = random_matrix(rng, 8, 6);
    const auto b = random_matrix(rng, 8, 6);
    EXPECT_NEAR(imgcoadv_loss(a, b, Temperature(0.5)).item(), brute_contrastive(a, b, iota_labels(8), 0.5), 1e-6);
    EXPECT_NEAR(imgcoadv_loss(a.cast<double>(), b.cast<double>(), Temperature(0.07)).item(),
                brute_contrastive(a, b, iota_labels(8), 0.07), 1e-9);
  }
}

TEST(ImgCoAdv, ViewMismatch) {
  std::mt19937_64 rng(1);
  EXPECT_THROW(imgcoadv_loss(random_matrix(rng, 3, 4), random_matrix(rng, 2, 4), Temperature(1.0)), ShapeError);
}

TEST(Ce, Examples) {
  EXPECT_NEAR(ce_loss(rows({{0, 0}}), std::vector<std::uint32_t>{0}).item(), std::log(2.0), 1e-6);
  EXPECT_LT(ce_loss(rows({{20, 0}}).cast<double>(), std::vector<std::uint32_t>{0}).item(), 1e-8);
  EXPECT_LT(ce_loss(rows({{20, 0}}), std::vector<std::uint32_t>{0}).item(), 1e-8);
}

TEST(Ce, BruteForceOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const auto logits = random_matrix(rng, 4, 3);
    const auto y = random_labels(rng, 4, 3);
    EXPECT_NEAR(ce_loss(logits, y).item(), brute_ce(logits, y), 1e-6);
  }
}

TEST(Ce, Errors) {
  EXPECT_THROW(ce_loss(rows({{0, 0}}), std::vector<std::uint32_t>{2}), ValidationError);
  EXPECT_THROW(ce_loss(Tensor::zeros({4}), std::vector<std::uint32_t>{0}), ShapeError);
}

TEST(LossVariant, ParseRoundTrip) {
  for (auto v : {LossVariant::ce, LossVariant::adv, LossVariant::coadv, LossVariant::imgcoadv, LossVariant::tecoa}) {
    EXPECT_EQ(parse_loss_variant(to_string(v)), v);
  }
  EXPECT_THROW(parse_loss_variant("trades"), ValidationError);
}

// Each loss through the encoder-free path: gradients with respect to the
// embeddings and columns against central differences.
TEST(LossGradients, AgainstFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    auto z = zsr::testing::random64(rng, {6, 5});
    auto c = zsr::testing::random64(rng, {4, 5});
    auto v = zsr::testing::random64(rng, {6, 5});
    auto logits = zsr::testing::random64(rng, {6, 4});
    const auto y = random_labels(rng, 6, 4);
    const Temperature tau(0.3);
    auto contrastive = zsr::testing::compare_gradients(
        [&] { return ops::mean(contrastive_per_example(z, c, y, tau)); }, {z, c}, {}, 1e-6, 1e-7);
    EXPECT_LT(contrastive.max_rel, 1e-5) << seed;
    auto img = zsr::testing::compare_gradients([&] { return imgcoadv_loss(z, v, tau); }, {z, v}, {}, 1e-6, 1e-7);
    EXPECT_LT(img.max_rel, 1e-5) << seed;
    auto ce = zsr::testing::compare_gradients([&] { return ce_loss(logits, y); }, {logits}, {}, 1e-6, 1e-7);
    EXPECT_LT(ce.max_rel, 1e-5) << seed;
  }
}
