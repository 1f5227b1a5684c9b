#include "zsr/experiments.hpp"

#include <chrono>
#include <cstdio>

#include "zsr/checkpoint.hpp"
#include "zsr/config.hpp"
#include "zsr/error.hpp"
#include "zsr/report.hpp"
#include "zsr/util.hpp"

namespace zsr {

ExperimentSettings default_experiment_settings() {
  ExperimentSettings s;
  s.synth = default_synth_spec(0);
  s.synth.pretrain_per_class = 100;
  s.synth.train_per_class = 100;
  s.synth.test_per_class = 25;
  s.synth.heldout_per_class = 25;

  EncoderConfig enc;
  enc.patch = 8;
  enc.model_width = 32;
  enc.layers = 2;
  enc.heads = 2;
  enc.embed_dim = s.synth.embed_dim;

  s.pretrain.loss_variant = LossVariant::tecoa;
  s.pretrain.adaptation = {AdaptationKind::full_ft, 0};
  s.pretrain.adversarial = false;
  s.pretrain.epochs = 40;
  s.pretrain.lr = 0.05;
  s.pretrain.batch_size = 64;
  s.pretrain.encoder = enc;

  s.adapt.loss_variant = LossVariant::tecoa;
  s.adapt.adaptation = {AdaptationKind::full_ft, 0};
  s.adapt.epochs = 20;
  s.adapt.lr = 0.05;
  s.adapt.batch_size = 64;
  // At 1/255 the toy vanilla model is already robust, so the toy protocol
  // uses 4/255; two training steps of ε/2 reach the ball's surface.
  s.adapt.attack.epsilon = 4.0 / 255.0;
  s.adapt.attack.alpha = 2.0 / 255.0;
  s.adapt.attack.steps = 2;
  s.adapt.head_pretrain_epochs = 3;
  s.adapt.encoder = enc;

  s.eval.attack = AttackConfig::evaluation_default();
  s.eval.attack->epsilon = s.adapt.attack.epsilon;
  s.eval.attack->alpha = 1.0 / 255.0;
  s.eval.attack->steps = 100;
  return s;
}

ToyTask make_toy_task(const ExperimentSettings& settings, std::uint64_t seed) {
  SynthSpec spec = settings.synth;
  spec.seed = seed;
  ToyTask task;
  task.data = gen_synthetic(spec);
  for (std::size_t g = 0; g < task.data.heldout.size(); ++g) {
    task.heldout.push_back({task.data.heldout[g].split, task.data.heldout[g], task.data.heldout_banks[g]});
  }
  task.train_test = {"train_test", task.data.train_test, task.data.train_bank};
  return task;
}

Model<float> pretrain_vanilla(const ExperimentSettings& settings, const ToyTask& task, std::uint64_t seed) {
  TrainConfig cfg = settings.pretrain;
  cfg.seed = derive_seed(seed, 0x76616e);
  auto model = init_model(cfg.encoder, cfg.seed);
  return train(cfg, model, task.data.pretrain, task.data.all_bank).model;
}

namespace {

TrainConfig with_variant(const ExperimentSettings& s, LossVariant v, Adaptation a) {
  TrainConfig c = s.adapt;
  c.loss_variant = v;
  c.adaptation = a;
  if (is_prompt(a)) c.lr.reset();
  return c;
}

GridPoint point(std::string name, TrainConfig adapt, EvalConfig eval) {
  GridPoint p;
  p.name = std::move(name);
  p.adapt = std::move(adapt);
  p.eval = std::move(eval);
  return p;
}

GridPoint vanilla_point(const ExperimentSettings& s, std::string name = "vanilla") {
  GridPoint p;
  p.name = std::move(name);
  p.vanilla = true;
  p.adapt = s.adapt;
  p.eval = s.eval;
  return p;
}

nlohmann::json json_for(const GridPoint& p) {
  return {{"name", p.name}, {"vanilla", p.vanilla}, {"adapt", to_json(p.adapt)}, {"eval", to_json(p.eval)}};
}

std::string eps_tag(double eps) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", eps * 255.0);
  return std::string(buf) + "of255";
}

}  // namespace

std::vector<std::string> recipe_names() { return {"table1-toy", "fig4", "fig5", "fig5a", "fig5b"}; }

std::vector<GridPoint> recipe_points(const std::string& recipe, const ExperimentSettings& s) {
  const Adaptation full{AdaptationKind::full_ft, 0};
  std::vector<GridPoint> pts;
  if (recipe == "table1-toy") {
    pts.push_back(vanilla_point(s));
    pts.push_back(point("ft_ce", with_variant(s, LossVariant::ce, full), s.eval));
    pts.push_back(point("ft_adv", with_variant(s, LossVariant::adv, full), s.eval));
    pts.push_back(point("ft_coadv", with_variant(s, LossVariant::coadv, full), s.eval));
    pts.push_back(point("ft_imgcoadv", with_variant(s, LossVariant::imgcoadv, full), s.eval));
    pts.push_back(point("ft_tecoa", with_variant(s, LossVariant::tecoa, full), s.eval));
    pts.push_back(point("vpt_token_tecoa", with_variant(s, LossVariant::tecoa, {AdaptationKind::vpt_token, 5}), s.eval));
  } else if (recipe == "fig4") {
    pts.push_back(vanilla_point(s));
    for (std::size_t shots : {1, 5, 50}) {
      auto c = with_variant(s, LossVariant::tecoa, full);
      c.shots = shots;
      pts.push_back(point("tecoa_shots_" + std::to_string(shots), c, s.eval));
    }
  } else if (recipe == "fig5") {
    for (double eps : {1.0 / 255.0, 2.0 / 255.0, 4.0 / 255.0}) {
      EvalConfig e = s.eval;
      e.attack->epsilon = eps;
      auto v = vanilla_point(s, "vanilla_eps_" + eps_tag(eps));
      v.eval = e;
      pts.push_back(v);
      auto c = with_variant(s, LossVariant::tecoa, full);
      c.attack.epsilon = eps;
      c.attack.alpha = eps / 2.0;
      pts.push_back(point("tecoa_eps_" + eps_tag(eps), c, e));
    }
  } else if (recipe == "fig5a") {
    pts.push_back(vanilla_point(s));
    pts.push_back(point("tecoa_vpt_token5", with_variant(s, LossVariant::tecoa, {AdaptationKind::vpt_token, 5}), s.eval));
    pts.push_back(point("tecoa_vpt_pixel", with_variant(s, LossVariant::tecoa, {AdaptationKind::vpt_pixel, 0}), s.eval));
    pts.push_back(point("tecoa_partial_ft1", with_variant(s, LossVariant::tecoa, {AdaptationKind::partial_ft, 1}), s.eval));
    pts.push_back(point("tecoa_full_ft", with_variant(s, LossVariant::tecoa, full), s.eval));
  } else if (recipe == "fig5b") {
    // Token budgets against one fine-tuned block: k·d parameters per prompt
    // versus 12d² + 13d per block.
    const std::size_t d = s.adapt.encoder.model_width;
    const std::size_t matched = block_parameter_count(d) / d;
    for (std::size_t k : {std::size_t{1}, std::size_t{8}, matched}) {
      pts.push_back(point("tecoa_vpt_token" + std::to_string(k),
                          with_variant(s, LossVariant::tecoa, {AdaptationKind::vpt_token, k}), s.eval));
    }
    pts.push_back(point("tecoa_partial_ft1", with_variant(s, LossVariant::tecoa, {AdaptationKind::partial_ft, 1}), s.eval));
  } else {
    throw ValidationError("unknown experiment recipe '" + recipe + "'");
  }
  return pts;
}

std::vector<MethodResult> run_grid(const ExperimentSettings& settings, const std::vector<GridPoint>& points,
                                   const GridOptions& options) {
  std::vector<MethodResult> results;
  VanillaCache local;
  VanillaCache& cache = options.cache ? *options.cache : local;
  for (auto seed : settings.seeds) {
    const auto task = make_toy_task(settings, seed);
    auto it = cache.find(seed);
    if (it == cache.end()) it = cache.emplace(seed, pretrain_vanilla(settings, task, seed)).first;
    const Model<float>& vanilla = it->second;
    const auto seed_dir = options.out_dir.empty() ? options.out_dir : options.out_dir / ("seed_" + std::to_string(seed));
    if (!options.out_dir.empty()) save_checkpoint(seed_dir / "vanilla.ckpt", vanilla, {{"seed", seed}});
    for (const auto& p : points) {
      const auto t0 = std::chrono::steady_clock::now();
      MethodResult r;
      r.name = p.name;
      r.seed = seed;
      Model<float> model = vanilla;
      if (!p.vanilla) {
        TrainConfig cfg = p.adapt;
        cfg.seed = derive_seed(seed, fnv1a64(p.name));
        auto st = train(cfg, vanilla, task.data.train, task.data.train_bank);
        model = st.model;
        r.log = st.log;
        FreezeSpec spec;
        switch (cfg.adaptation.kind) {
          case AdaptationKind::full_ft: spec = {FreezePolicy::full, 0}; break;
          case AdaptationKind::partial_ft: spec = {FreezePolicy::last_k_blocks, cfg.adaptation.k}; break;
          case AdaptationKind::linear_probe: spec = {FreezePolicy::head_only, 0}; break;
          default: spec = {FreezePolicy::prompt_only, 0}; break;
        }
        r.trainable = freeze_mask(model, spec).trainable_count;
      }
      EvalConfig ec = p.eval;
      ec.seed = derive_seed(seed, 0x6576616c);
      r.heldout = evaluate_tasks(model, task.heldout, ec);
      r.heldout.config_hash = config_hash(json_for(p));
      if (options.evaluate_train_test) r.train_test = evaluate(model, task.train_test.data, task.train_test.bank, ec, "train_test");
      r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (!options.out_dir.empty()) {
        const auto dir = seed_dir / p.name;
        emit_report(r.heldout, dir / "report.json");
        if (!p.vanilla) save_checkpoint(dir / "model.ckpt", model, {{"seed", seed}, {"point", p.name}});
        write_text(dir / "metrics.jsonl", metric_log_jsonl(r.log));
      }
      if (options.progress) options.progress(r);
      results.push_back(std::move(r));
    }
  }
  return results;
}

std::string summarize_results(const std::vector<MethodResult>& results) {
  std::string out = "name,seed,clean,robust,train_clean,train_robust,trainable,seconds\n";
  std::vector<std::string> order;
  std::map<std::string, std::pair<double, double>> sums;
  std::map<std::string, int> counts;
  for (const auto& r : results) {
    out += r.name + "," + std::to_string(r.seed) + "," + format_double(r.heldout.average_clean()) + "," +
           format_double(r.heldout.average_robust()) + "," + format_double(r.train_test.clean) + "," +
           format_double(r.train_test.robust) + "," + std::to_string(r.trainable) + "," +
           format_double(r.seconds) + "\n";
    if (!counts.count(r.name)) order.push_back(r.name);
    sums[r.name].first += r.heldout.average_clean();
    sums[r.name].second += r.heldout.average_robust();
    ++counts[r.name];
  }
  for (const auto& name : order) {
    out += name + ",mean," + format_double(sums[name].first / counts[name]) + "," +
           format_double(sums[name].second / counts[name]) + ",,,,\n";
  }
  return out;
}

}  // namespace zsr
