#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "fixtures.hpp"
#include "zsr/checkpoint.hpp"
#include "zsr/error.hpp"
#include "zsr/evaluation.hpp"
#include "zsr/ops.hpp"
#include "zsr/training.hpp"

using namespace zsr;
using zsr::testing::bit_equal;
using zsr::testing::tiny_bank;
using zsr::testing::tiny_dataset;
using zsr::testing::tiny_encoder;

namespace {

TrainConfig tiny_config(LossVariant v, const std::string& adaptation = "full_ft") {
  TrainConfig c;
  c.loss_variant = v;
  c.adaptation = parse_adaptation(adaptation);
  c.epochs = 2;
  c.batch_size = 5;
  c.lr = 0.05;
  c.head_pretrain_epochs = 1;
  c.attack.epsilon = 4.0 / 255;
  c.attack.alpha = 2.0 / 255;
  c.seed = 3;
  return c;
}

std::vector<float> base_encoder_params(const Model<float>& m) {
  std::vector<float> out;
  for (const auto& nt : m.named_parameters()) {
    if (nt.name.rfind("encoder.", 0) != 0) continue;
    out.insert(out.end(), nt.tensor.data().begin(), nt.tensor.data().end());
  }
  return out;
}

}  // namespace

TEST(Adaptation, Parse) {
  EXPECT_EQ(parse_adaptation("partial_ft(2)"), (Adaptation{AdaptationKind::partial_ft, 2}));
  EXPECT_EQ(parse_adaptation("partial_ft"), (Adaptation{AdaptationKind::partial_ft, 1}));
  EXPECT_EQ(parse_adaptation("vpt_token"), (Adaptation{AdaptationKind::vpt_token, 5}));
  EXPECT_EQ(to_string(parse_adaptation("vpt_token(12)")), "vpt_token(12)");
  EXPECT_THROW(parse_adaptation("full_ft(3)"), ValidationError);
  EXPECT_THROW(parse_adaptation("partial_ft(0)"), ValidationError);
  EXPECT_THROW(parse_adaptation("lora"), ValidationError);
}

TEST(TrainConfigCheck, IncompatibleCombinationsRejectedBeforeAnyStep) {
  const auto data = tiny_dataset();
  const auto bank = tiny_bank();
  const auto model = init_model(tiny_encoder(), 1);
  const auto before = flatten_params(model);
  auto lp = tiny_config(LossVariant::tecoa, "linear_probe");
  EXPECT_THROW(train(lp, model, data, bank), ValidationError);
  for (auto v : {LossVariant::ce, LossVariant::adv, LossVariant::coadv, LossVariant::imgcoadv}) {
    auto c = tiny_config(v);
    c.unlabeled = true;
    EXPECT_THROW(train(c, model, data, bank), ValidationError) << to_string(v);
  }
  lp.loss_variant = LossVariant::coadv;
  EXPECT_THROW(lp.validate(), ValidationError);
  lp.loss_variant = LossVariant::adv;
  EXPECT_NO_THROW(lp.validate());
  EXPECT_TRUE(bit_equal(flatten_params(model), before));
}

TEST(TrainConfigCheck, LearningRateDefaults) {
  TrainConfig c;
  EXPECT_DOUBLE_EQ(c.effective_lr(), 1e-3);
  c.adaptation = parse_adaptation("vpt_pixel");
  EXPECT_DOUBLE_EQ(c.effective_lr(), 1e-1);
  c.lr = 40.0;
  EXPECT_DOUBLE_EQ(c.effective_lr(), 40.0);
  EXPECT_EQ(TrainConfig{}.epochs, 20u);
  EXPECT_EQ(TrainConfig{}.batch_size, 64u);
  EXPECT_DOUBLE_EQ(TrainConfig{}.momentum, 0.9);
}

TEST(Training, ZeroEpochsIsIdentity) {
  const auto data = tiny_dataset();
  const auto model = init_model(tiny_encoder(), 1);
  auto c = tiny_config(LossVariant::tecoa);
  c.epochs = 0;
  const auto st = train(c, model, data, tiny_bank());
  EXPECT_TRUE(bit_equal(flatten_params(st.model), flatten_params(model)));
  EXPECT_TRUE(st.log.empty());
}

TEST(Training, BankBytesUnchanged) {
  const auto data = tiny_dataset();
  const auto bank = tiny_bank();
  const auto before = bank.embeddings.detach();
  const auto st = train(tiny_config(LossVariant::tecoa), init_model(tiny_encoder(), 1), data, bank);
  EXPECT_TRUE(bit_equal(bank.embeddings, before));
  EXPECT_FALSE(bank.embeddings.requires_grad());
  EXPECT_FALSE(bank.embeddings.has_grad());
  EXPECT_EQ(st.log.size(), 2u);
}

// One minibatch, one step: attack with the library PGD, then an independently
// computed gradient and a hand-written momentum update.
TEST(Training, SingleStepMatchesOracle) {
  const auto data = tiny_dataset(2);
  const auto bank = tiny_bank();
  const auto model = init_model(tiny_encoder(), 5);
  auto c = tiny_config(LossVariant::tecoa);
  c.epochs = 1;
  c.batch_size = data.size();
  c.attack.steps = 3;
  const auto st = train(c, model, data, bank);

  auto oracle = model.clone();
  const Temperature tau(c.tau);
  std::vector<std::uint32_t> y;
  for (auto l : data.labels) y.push_back(static_cast<std::uint32_t>(bank.index_of(data.classes[l])));
  const auto x_adv = pgd_attack(
      [&](const Tensor& x) { return contrastive_per_example(encode_image(oracle, x), bank.embeddings, y, tau); },
      data.images, c.attack, 0).x_adv;
  const auto params = oracle.parameters();
  for (const auto& p : params) p.set_requires_grad(true);
  {
    Tape tape;
    TapeScope scope(tape);
    auto loss = ops::mean(contrastive_per_example(encode_image(oracle, x_adv), bank.embeddings, y, tau));
    tape.backward(loss);
  }
  std::vector<float> expected;
  for (const auto& p : params) {
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const float v = 0.0f * 0.9f + p.grad()[i];
      expected.push_back(p.data()[i] - static_cast<float>(*c.lr) * v);
    }
  }
  const auto got = flatten_params(st.model);
  ASSERT_EQ(got.size(), expected.size());
  double worst = 0;
  for (std::size_t i = 0; i < got.size(); ++i) worst = std::max(worst, std::abs(double(got[i]) - expected[i]));
  EXPECT_LT(worst, 1e-6);
  EXPECT_GT(std::abs(got[0] - flatten_params(model)[0]) + worst, 0.0);
}

// Each minibatch's adversarial example must be the attack on the parameters
// as they are at that moment, i.e. after the previous update.
TEST(Training, AttackUsesCurrentParameters) {
  for (auto v : {LossVariant::tecoa, LossVariant::adv, LossVariant::coadv, LossVariant::imgcoadv}) {
    const auto data = tiny_dataset(4);
    const auto bank = tiny_bank();
    auto c = tiny_config(v);
    c.attack.steps = 2;
    auto st = init_train_state(c, init_model(tiny_encoder(), 2), data);
    std::size_t batches = 0, attacked = 0;
    std::vector<float> previous;
    StepObserver obs;
    obs.on_attack = [&](const Tensor& x, const Tensor& x_adv, const std::vector<std::uint32_t>& y) {
      ++batches;
      const auto now = flatten_params(st.model);
      if (!previous.empty()) EXPECT_FALSE(bit_equal(now, previous)) << "no update between batches";
      previous = now;
      if (bit_equal(x, x_adv)) return;  // head pre-training is clean
      ++attacked;
      auto all = st.model.parameters();
      if (st.dictionary) all.push_back(st.dictionary->codes);
      NoGradGuard<float> guard(all);
      Tensor z_b;
      if (v == LossVariant::imgcoadv) return;  // second view is drawn inside the loop
      const auto expect = pgd_attack(
          [&](const Tensor& img) {
            return variant_forward(c, st.model, img, y, bank, st.dictionary ? &*st.dictionary : nullptr, nullptr)
                .per_example;
          },
          x, c.attack, 0).x_adv;
      EXPECT_TRUE(bit_equal(expect, x_adv)) << to_string(v);
    };
    run_training(c, data, bank, st, obs);
    EXPECT_GT(attacked, 0u) << to_string(v);
    EXPECT_EQ(batches, st.log.size() * ((data.size() + c.batch_size - 1) / c.batch_size));
  }
}

TEST(Training, AdvHeadPretrainPhaseComesFirst) {
  const auto data = tiny_dataset();
  auto c = tiny_config(LossVariant::adv);
  c.head_pretrain_epochs = 2;
  const auto model = init_model(tiny_encoder(), 1);
  auto st = init_train_state(c, model, data);
  StepObserver obs;
  std::vector<std::string> phases;
  obs.on_epoch = [&](const EpochRecord& r) {
    phases.push_back(r.phase);
    if (r.phase == "head_pretrain") EXPECT_TRUE(bit_equal(base_encoder_params(st.model), base_encoder_params(model)));
  };
  run_training(c, data, tiny_bank(), st, obs);
  EXPECT_EQ(phases, (std::vector<std::string>{"head_pretrain", "head_pretrain", "train", "train"}));
  EXPECT_FALSE(bit_equal(base_encoder_params(st.model), base_encoder_params(model)));
}

TEST(Training, FreezeDiscipline) {
  const auto data = tiny_dataset();
  const auto bank = tiny_bank();
  const auto model = init_model(tiny_encoder(), 1);
  const auto base = base_encoder_params(model);
  struct Case {
    LossVariant v;
    std::string a;
  };
  for (const auto& k : {Case{LossVariant::tecoa, "vpt_token(3)"}, Case{LossVariant::tecoa, "vpt_pixel"},
                        Case{LossVariant::ce, "linear_probe"}, Case{LossVariant::adv, "linear_probe"}}) {
    auto c = tiny_config(k.v, k.a);
    const auto init = init_train_state(c, model, data);
    const auto st = train(c, model, data, bank);
    EXPECT_TRUE(bit_equal(base_encoder_params(st.model), base)) << k.a;
    if (st.model.prompt) {
      EXPECT_FALSE(bit_equal(st.model.prompt->values, init.model.prompt->values)) << k.a;
    }
    if (st.model.head) EXPECT_FALSE(bit_equal(st.model.head->weight, init.model.head->weight)) << k.a;
  }
}

TEST(Training, PartialFineTuneTouchesOnlyLastBlocks) {
  const auto data = tiny_dataset();
  const auto model = init_model(tiny_encoder(), 1);
  const auto st = train(tiny_config(LossVariant::tecoa, "partial_ft(1)"), model, data, tiny_bank());
  const auto before = model.named_parameters();
  const auto after = st.model.named_parameters();
  for (std::size_t i = 0; i < before.size(); ++i) {
    const bool last = before[i].name.rfind("encoder.blocks.1.", 0) == 0;
    EXPECT_EQ(!bit_equal(before[i].tensor, after[i].tensor), last) << before[i].name;
  }
}

TEST(Training, CoadvDictionaryFrozenByDefault) {
  const auto data = tiny_dataset();
  auto c = tiny_config(LossVariant::coadv);
  const auto init = init_train_state(c, init_model(tiny_encoder(), 1), data);
  const auto st = train(c, init_model(tiny_encoder(), 1), data, tiny_bank());
  ASSERT_TRUE(st.dictionary);
  EXPECT_TRUE(bit_equal(st.dictionary->codes, init.dictionary->codes));
  c.train_dictionary = true;
  const auto st2 = train(c, init_model(tiny_encoder(), 1), data, tiny_bank());
  EXPECT_FALSE(bit_equal(st2.dictionary->codes, init.dictionary->codes));
}

TEST(Training, ResumeIsBitExact) {
  set_deterministic(true);
  const auto data = tiny_dataset();
  const auto bank = tiny_bank();
  for (auto v : {LossVariant::tecoa, LossVariant::adv, LossVariant::coadv, LossVariant::imgcoadv}) {
    auto c = tiny_config(v);
    c.epochs = 3;
    const auto model = init_model(tiny_encoder(), 4);
    const auto full = train(c, model, data, bank);

    auto part = init_train_state(c, model, data);
    auto c1 = c;
    c1.epochs = 1;
    run_training(c1, data, bank, part);
    const auto dir = zsr::testing::fresh_dir("resume");
    save_train_state(dir / "state.ckpt", part, c);
    auto resumed = load_train_state(dir / "state.ckpt");
    run_training(c, data, bank, resumed);

    EXPECT_TRUE(bit_equal(flatten_params(resumed.model), flatten_params(full.model))) << to_string(v);
    ASSERT_EQ(resumed.log.size(), full.log.size());
    for (std::size_t i = 0; i < full.log.size(); ++i) {
      EXPECT_EQ(resumed.log[i].loss, full.log[i].loss);
      EXPECT_EQ(resumed.log[i].attack_success, full.log[i].attack_success);
    }
    EXPECT_EQ(metric_log_jsonl(resumed.log), metric_log_jsonl(full.log));
  }
}

TEST(Training, MetricLogHasOneRecordPerEpoch) {
  auto c = tiny_config(LossVariant::adv);
  const auto st = train(c, init_model(tiny_encoder(), 1), tiny_dataset(), tiny_bank());
  const auto text = metric_log_jsonl(st.log);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 3);
  for (const auto& r : st.log) {
    EXPECT_GE(r.attack_success, 0.0);
    EXPECT_LE(r.attack_success, 1.0);
    EXPECT_TRUE(std::isfinite(r.loss));
  }
}

TEST(Training, UnlabeledModeRuns) {
  auto data = tiny_dataset();
  data.labels.clear();
  data.labeled = false;
  auto c = tiny_config(LossVariant::tecoa);
  c.unlabeled = true;
  const auto st = train(c, init_model(tiny_encoder(), 1), data, tiny_bank());
  EXPECT_EQ(st.log.size(), 2u);
  c.unlabeled = false;
  EXPECT_THROW(train(c, init_model(tiny_encoder(), 1), data, tiny_bank()), ValidationError);
}

TEST(FewShot, Examples) {
  const auto spec = zsr::testing::tiny_spec();
  const auto classes = spec.all_classes();
  std::vector<std::string> eight(classes.begin(), classes.begin() + 8);
  const auto data = render_classes(spec, eight, 6, 1, "train");
  EXPECT_EQ(few_shot_subset(data, 1, 0).size(), 8u);
  const auto all = few_shot_subset(data, 6, 0);
  EXPECT_TRUE(bit_equal(all.images, data.images));
  EXPECT_EQ(all.labels, data.labels);
  EXPECT_EQ(few_shot_subset(data, 100, 0).size(), data.size());
  EXPECT_EQ(few_shot_indices(data, 3, 9), few_shot_indices(data, 3, 9));
  EXPECT_NE(few_shot_indices(data, 3, 9), few_shot_indices(data, 3, 10));
  const auto sub = few_shot_subset(data, 3, 9);
  std::vector<int> per(8, 0);
  for (auto l : sub.labels) ++per[l];
  for (int p : per) EXPECT_EQ(p, 3);
  EXPECT_THROW(few_shot_subset(data, 0, 0), ValidationError);
}

TEST(FewShot, SamplingIsRoughlyUniform) {
  const auto data = render_classes(zsr::testing::tiny_spec(), {"red circle"}, 10, 1, "train");
  std::vector<int> hits(10, 0);
  for (std::uint64_t s = 0; s < 2000; ++s) {
    for (auto i : few_shot_indices(data, 3, s)) ++hits[i];
  }
  for (int h : hits) EXPECT_NEAR(h, 600, 90);
}

TEST(PseudoLabel, NearestRowAndTieRule) {
  auto bank = Tensor::zeros({5, 5});
  for (int i = 0; i < 5; ++i) bank.data()[i * 5 + i] = 1.0f;
  const auto z = Tensor::from_data({2, 5}, {0, 0, 0, 1, 0, 0, 0.5f, 0.5f, 0, 0});
  EXPECT_EQ(nearest_rows(z, bank), (std::vector<std::uint32_t>{3, 1}));
}

TEST(PseudoLabel, MatchesZeroShotRule) {
  const auto data = tiny_dataset(6);
  const auto bank = tiny_bank();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto model = init_model(tiny_encoder(), seed);
    EXPECT_EQ(pseudo_label(model, data.images, bank, Temperature(0.07)),
              zero_shot_classify(model, data.images, bank, Temperature(0.07)));
    EXPECT_EQ(pseudo_label(model, data.images, bank, Temperature(0.07)),
              pseudo_label(model, data.images, bank, Temperature(3.0)));
  }
  const TextBank empty;
  EXPECT_THROW(pseudo_label(init_model(tiny_encoder(), 0), data.images, empty, Temperature(1)), ValidationError);
}

TEST(Augment, StaysInBoxAndIsSeeded) {
  const auto data = tiny_dataset();
  Rng a(1), b(1);
  const auto va = augment_view(data.images, a);
  const auto vb = augment_view(data.images, b);
  EXPECT_TRUE(bit_equal(va, vb));
  EXPECT_FALSE(bit_equal(va, data.images));
  for (float v : va.data()) EXPECT_TRUE(v >= 0.0f && v <= 1.0f);
}
