// zsr: command-line front end for data generation, training, attacks,
// evaluation, interpolation, pseudo-labeling and experiment recipes.
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "zsr/attack.hpp"
#include "zsr/checkpoint.hpp"
#include "zsr/config.hpp"
#include "zsr/dataset.hpp"
#include "zsr/error.hpp"
#include "zsr/evaluation.hpp"
#include "zsr/experiments.hpp"
#include "zsr/report.hpp"
#include "zsr/synth.hpp"
#include "zsr/tensor.hpp"
#include "zsr/training.hpp"
#include "zsr/util.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace zsr;

namespace {

constexpr int kUsage = 1;
constexpr int kValidation = 2;
constexpr int kRuntime = 3;

void print_error(const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << std::endl;
}

struct Manifest {
  std::string command;
  json config = json::object();
  std::uint64_t seed = 0;
  json inputs = json::object();
  json outputs = json::array();

  void input(const std::string& role, const fs::path& p) {
    inputs[role] = {{"path", p.string()}, {"hash", hash_path(p)}};
  }
  void write(const fs::path& path, const std::vector<std::string>& argv) const {
    json j{{"command", command}, {"argv", argv},      {"config", config}, {"config_hash", config_hash(config)},
           {"seed", seed},       {"inputs", inputs}, {"outputs", outputs}};
    write_text(path, j.dump(2) + "\n");
  }
};

fs::path sidecar(const fs::path& file, const std::string& suffix) {
  auto p = file;
  p += suffix;
  return p;
}

std::vector<double> parse_grid(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  for (std::string cell; std::getline(ss, cell, ',');) {
    try {
      out.push_back(std::stod(cell));
    } catch (const std::exception&) {
      throw ValidationError("--grid: malformed weight '" + cell + "'");
    }
  }
  if (out.empty()) throw ValidationError("--grid is empty");
  return out;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string cell; std::getline(ss, cell, ',');) {
    if (!cell.empty()) out.push_back(cell);
  }
  return out;
}

// Datasets under data_dir that have a bank; held-out groups when none named.
std::vector<EvalTask> load_tasks(const fs::path& data_dir, const fs::path& banks_dir, const std::string& names,
                                 Manifest& m) {
  std::vector<std::string> wanted = split_list(names);
  if (wanted.empty()) {
    std::vector<std::string> all;
    if (!fs::is_directory(data_dir)) throw IoError("data directory " + data_dir.string() + " does not exist");
    for (const auto& e : fs::directory_iterator(data_dir)) {
      if (e.is_directory() && fs::exists(e.path() / "meta.json") &&
          fs::exists(banks_dir / (e.path().filename().string() + ".json"))) {
        all.push_back(e.path().filename().string());
      }
    }
    std::sort(all.begin(), all.end());
    for (const auto& n : all) {
      if (n.rfind("heldout_", 0) == 0) wanted.push_back(n);
    }
    if (wanted.empty()) wanted = all;
  }
  if (wanted.empty()) throw ValidationError("no evaluation datasets found under " + data_dir.string());
  std::vector<EvalTask> tasks;
  for (const auto& n : wanted) {
    EvalTask t;
    t.name = n;
    t.data = load_dataset(data_dir / n);
    t.bank = load_text_bank(banks_dir / (n + ".json"));
    m.input("data:" + n, data_dir / n);
    m.input("bank:" + n, banks_dir / (n + ".json"));
    tasks.push_back(std::move(t));
  }
  return tasks;
}

EvalConfig eval_config_from_flags(const std::string& attack, const std::string& objective, double tau,
                                  std::size_t batch, std::uint64_t seed, Manifest& m) {
  EvalConfig c;
  if (attack == "none") {
    c.attack.reset();
  } else if (!attack.empty()) {
    c.attack = load_attack_config(attack);
    m.input("attack", attack);
  }
  c.objective = parse_eval_objective(objective);
  if (!(tau > 0)) throw ValidationError("--tau (τ) must be > 0");
  c.tau = tau;
  if (batch == 0) throw ValidationError("--batch-size must be >= 1");
  c.batch_size = batch;
  c.seed = seed;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  CLI::App app{"Adversarial adaptation of dual-encoder zero-shot classifiers at desk scale"};
  app.require_subcommand(1);
  bool deterministic_flag = false;
  app.add_flag("--deterministic", deterministic_flag, "Serialize reductions (single thread)");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Render the synthetic colored-shape datasets and text banks");
  fs::path gen_out;
  std::uint64_t gen_seed = 0;
  std::size_t per_class = 100, test_per_class = 50, heldout_per_class = 50;
  std::size_t embed_dim = 32;
  float render_noise = 0.05f;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--seed", gen_seed, "Seed");
  gen->add_option("--per-class", per_class, "Images per class in pretrain and train splits");
  gen->add_option("--test-per-class", test_per_class, "Images per class in train_test");
  gen->add_option("--heldout-per-class", heldout_per_class, "Images per held-out class");
  gen->add_option("--embed-dim", embed_dim, "Text bank dimension");
  gen->add_option("--render-noise", render_noise, "Pixel noise sigma");

  // train
  auto* tr = app.add_subcommand("train", "Adapt a model with one of the training losses");
  fs::path tr_config, tr_data, tr_bank, tr_out, tr_init, tr_log, tr_resume;
  std::optional<std::uint64_t> tr_seed;
  tr->add_option("--config", tr_config, "Training config JSON")->required();
  tr->add_option("--data", tr_data, "Dataset directory")->required();
  tr->add_option("--bank", tr_bank, "Text bank JSON")->required();
  tr->add_option("--out", tr_out, "Output checkpoint")->required();
  tr->add_option("--seed", tr_seed, "Overrides the config seed");
  tr->add_option("--init", tr_init, "Start from this checkpoint instead of a fresh model");
  tr->add_option("--resume", tr_resume, "Continue a run from a checkpoint written by train");
  tr->add_option("--log", tr_log, "Metric log (JSON lines); default <out>.metrics.jsonl");

  // attack
  auto* at = app.add_subcommand("attack", "Run PGD against a checkpoint and store the adversarial batch");
  fs::path at_ckpt, at_data, at_bank, at_attack, at_out;
  std::string at_objective = "ce";
  double at_tau = kDefaultTemperature;
  std::uint64_t at_seed = 0;
  at->add_option("--checkpoint", at_ckpt)->required();
  at->add_option("--data", at_data)->required();
  at->add_option("--bank", at_bank)->required();
  at->add_option("--attack", at_attack, "Attack config JSON (default: evaluation attack)");
  at->add_option("--objective", at_objective, "ce|contrastive");
  at->add_option("--tau", at_tau);
  at->add_option("--seed", at_seed);
  at->add_option("--out", at_out, "Output directory")->required();

  // eval
  auto* ev = app.add_subcommand("eval", "Zero-shot clean and robust accuracy");
  fs::path ev_ckpt, ev_data_dir, ev_banks_dir, ev_out;
  std::string ev_attack, ev_datasets, ev_objective = "ce";
  double ev_tau = kDefaultTemperature;
  std::size_t ev_batch = 100;
  std::uint64_t ev_seed = 0;
  ev->add_option("--checkpoint", ev_ckpt)->required();
  ev->add_option("--data-dir", ev_data_dir)->required();
  ev->add_option("--banks-dir", ev_banks_dir)->required();
  ev->add_option("--attack", ev_attack, "Attack config JSON, or 'none' for clean only");
  ev->add_option("--datasets", ev_datasets, "Comma-separated dataset names (default: heldout_*)");
  ev->add_option("--objective", ev_objective, "ce|contrastive");
  ev->add_option("--tau", ev_tau);
  ev->add_option("--batch-size", ev_batch);
  ev->add_option("--seed", ev_seed);
  ev->add_option("--out", ev_out, "report.json (a .csv is written alongside)")->required();

  // interpolate
  auto* ip = app.add_subcommand("interpolate", "Weight-interpolation frontier between two checkpoints");
  fs::path ip_a, ip_b, ip_out, ip_data_dir, ip_banks_dir;
  std::string ip_grid = "0,0.25,0.5,0.75,1", ip_attack, ip_datasets, ip_objective = "ce";
  double ip_tau = kDefaultTemperature;
  std::size_t ip_batch = 100;
  std::uint64_t ip_seed = 0;
  ip->add_option("--a", ip_a, "Checkpoint at w = 0")->required();
  ip->add_option("--b", ip_b, "Checkpoint at w = 1")->required();
  ip->add_option("--grid", ip_grid);
  ip->add_option("--data-dir", ip_data_dir)->required();
  ip->add_option("--banks-dir", ip_banks_dir)->required();
  ip->add_option("--attack", ip_attack);
  ip->add_option("--datasets", ip_datasets);
  ip->add_option("--objective", ip_objective);
  ip->add_option("--tau", ip_tau);
  ip->add_option("--batch-size", ip_batch);
  ip->add_option("--seed", ip_seed);
  ip->add_option("--out", ip_out, "frontier.csv")->required();

  // pseudo-label
  auto* pl = app.add_subcommand("pseudo-label", "Label images with their nearest text embedding");
  fs::path pl_ckpt, pl_data, pl_bank, pl_out;
  pl->add_option("--checkpoint", pl_ckpt)->required();
  pl->add_option("--data", pl_data)->required();
  pl->add_option("--bank", pl_bank)->required();
  pl->add_option("--out", pl_out, "Output dataset directory carrying the pseudo-labels")->required();

  // experiment
  auto* ex = app.add_subcommand("experiment", "Run a named recipe end to end");
  std::string ex_name, ex_seeds;
  fs::path ex_out = "experiments", ex_a, ex_b, ex_data_dir, ex_banks_dir;
  std::string ex_grid = "0,0.25,0.5,0.75,1";
  ex->add_option("name", ex_name, "table1-toy|fig4|fig5|fig5a|fig5b|fig6")->required();
  ex->add_option("--out", ex_out);
  ex->add_option("--seeds", ex_seeds, "Comma-separated seeds (default 0,1,2)");
  ex->add_option("--a", ex_a, "fig6: vanilla checkpoint");
  ex->add_option("--b", ex_b, "fig6: adapted checkpoint");
  ex->add_option("--data-dir", ex_data_dir, "fig6 with --a/--b: evaluation data");
  ex->add_option("--banks-dir", ex_banks_dir, "fig6 with --a/--b: evaluation banks");
  ex->add_option("--grid", ex_grid);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << app.help() << std::endl;
    print_error("usage", e.what());
    return kUsage;
  }

  set_deterministic(deterministic_flag);
  try {
    Manifest m;
    if (*gen) {
      m.command = "gen-data";
      SynthSpec spec = default_synth_spec(gen_seed);
      spec.pretrain_per_class = spec.train_per_class = per_class;
      spec.test_per_class = test_per_class;
      spec.heldout_per_class = heldout_per_class;
      spec.embed_dim = embed_dim;
      spec.render_noise = render_noise;
      save_synthetic(gen_synthetic(spec), gen_out);
      m.seed = gen_seed;
      m.config = {{"per_class", per_class},   {"test_per_class", test_per_class},
                  {"heldout_per_class", heldout_per_class}, {"embed_dim", embed_dim},
                  {"render_noise", render_noise}, {"train_classes", spec.train_classes},
                  {"heldout_groups", spec.heldout_groups}};
      m.outputs.push_back(gen_out.string());
      m.write(gen_out / "manifest.json", args);
    } else if (*tr) {
      m.command = "train";
      TrainConfig cfg = load_train_config(tr_config);
      if (tr_seed) cfg.seed = *tr_seed;
      m.input("config", tr_config);
      m.input("data", tr_data);
      m.input("bank", tr_bank);
      const auto data = load_dataset(tr_data);
      const auto bank = load_text_bank(tr_bank);
      const auto bank_hash_before = hash_path(tr_bank);
      TrainState st;
      if (!tr_resume.empty()) {
        m.input("resume", tr_resume);
        st = load_train_state(tr_resume);
      } else {
        Model<float> model;
        if (!tr_init.empty()) {
          m.input("init", tr_init);
          model = load_checkpoint(tr_init).model;
        } else {
          model = init_model(cfg.encoder, cfg.seed);
        }
        st = init_train_state(cfg, model, data);
      }
      run_training(cfg, data, bank, st);
      if (hash_path(tr_bank) != bank_hash_before) throw NumericError("text bank file changed during training");
      save_train_state(tr_out, st, cfg);
      const auto log_path = tr_log.empty() ? sidecar(tr_out, ".metrics.jsonl") : tr_log;
      write_text(log_path, metric_log_jsonl(st.log));
      m.config = to_json(cfg);
      m.seed = cfg.seed;
      m.outputs = {tr_out.string(), log_path.string()};
      m.write(sidecar(tr_out, ".manifest.json"), args);
    } else if (*at) {
      m.command = "attack";
      m.input("checkpoint", at_ckpt);
      m.input("data", at_data);
      m.input("bank", at_bank);
      AttackConfig cfg = AttackConfig::evaluation_default();
      if (!at_attack.empty()) {
        cfg = load_attack_config(at_attack);
        m.input("attack", at_attack);
      }
      const auto objective = parse_eval_objective(at_objective);
      const Temperature tau(at_tau);
      const auto model = load_checkpoint(at_ckpt).model;
      const auto data = load_dataset(at_data);
      const auto bank = load_text_bank(at_bank);
      if (!data.labeled) throw ValidationError("attack needs a labeled dataset");
      std::vector<std::uint32_t> labels;
      for (auto y : data.labels) labels.push_back(static_cast<std::uint32_t>(bank.index_of(data.classes[y])));
      NoGradGuard<float> guard(model.parameters());
      const auto obj = [&](const Tensor& images) { return eval_objective(model, images, labels, bank, objective, tau); };
      const auto adv = pgd_attack(obj, data.images, cfg, at_seed);
      check_adversarial_constraints(data.images, adv, cfg);
      std::vector<char> xb, xab;
      append_f32le(xb, data.images.data());
      append_f32le(xab, adv.x_adv.data());
      write_file(at_out / "x.bin", xb);
      write_file(at_out / "x_adv.bin", xab);
      std::vector<char> ob;
      append_f32le(ob, adv.objective);
      write_file(at_out / "objective.bin", ob);
      json meta{{"shape", data.images.shape()}, {"dtype", "f32le"}, {"attack", to_json(cfg)},
                {"objective", to_string(objective)}, {"tau", at_tau}, {"seed", at_seed},
                {"files", {{"x", "x.bin"}, {"x_adv", "x_adv.bin"}, {"objective", "objective.bin"}}}};
      write_text(at_out / "meta.json", meta.dump(2) + "\n");
      m.config = meta;
      m.seed = at_seed;
      m.outputs = {at_out.string()};
      m.write(at_out / "manifest.json", args);
    } else if (*ev) {
      m.command = "eval";
      m.input("checkpoint", ev_ckpt);
      const auto cfg = eval_config_from_flags(ev_attack, ev_objective, ev_tau, ev_batch, ev_seed, m);
      const auto tasks = load_tasks(ev_data_dir, ev_banks_dir, ev_datasets, m);
      const auto model = load_checkpoint(ev_ckpt).model;
      auto report = evaluate_tasks(model, tasks, cfg);
      report.config_hash = config_hash(to_json(cfg));
      emit_report(report, ev_out);
      m.config = to_json(cfg);
      m.seed = cfg.seed;
      auto csv = ev_out;
      csv.replace_extension(".csv");
      m.outputs = {ev_out.string(), csv.string()};
      m.write(sidecar(ev_out, ".manifest.json"), args);
    } else if (*ip) {
      m.command = "interpolate";
      m.input("a", ip_a);
      m.input("b", ip_b);
      const auto cfg = eval_config_from_flags(ip_attack, ip_objective, ip_tau, ip_batch, ip_seed, m);
      const auto tasks = load_tasks(ip_data_dir, ip_banks_dir, ip_datasets, m);
      const auto rows = interpolation_sweep(load_checkpoint(ip_a).model, load_checkpoint(ip_b).model,
                                            parse_grid(ip_grid), tasks, cfg);
      write_text(ip_out, frontier_to_csv(rows));
      m.config = to_json(cfg);
      m.config["grid"] = parse_grid(ip_grid);
      m.seed = cfg.seed;
      m.outputs = {ip_out.string()};
      m.write(sidecar(ip_out, ".manifest.json"), args);
    } else if (*pl) {
      m.command = "pseudo-label";
      m.input("checkpoint", pl_ckpt);
      m.input("data", pl_data);
      m.input("bank", pl_bank);
      const auto model = load_checkpoint(pl_ckpt).model;
      auto data = load_dataset(pl_data);
      const auto bank = load_text_bank(pl_bank);
      data.labels = pseudo_label(model, data.images, bank, Temperature(kDefaultTemperature));
      data.classes = bank.names;
      data.labeled = true;
      data.split = data.split.empty() ? "pseudo" : data.split + "_pseudo";
      save_dataset(data, pl_out);
      m.outputs = {pl_out.string()};
      m.write(pl_out / "manifest.json", args);
    } else if (*ex) {
      m.command = "experiment " + ex_name;
      auto settings = default_experiment_settings();
      if (!ex_seeds.empty()) {
        settings.seeds.clear();
        for (const auto& s : split_list(ex_seeds)) settings.seeds.push_back(std::stoull(s));
      }
      const auto out = ex_out / ex_name;
      m.config = {{"recipe", ex_name}, {"seeds", settings.seeds}, {"adapt", to_json(settings.adapt)},
                  {"pretrain", to_json(settings.pretrain)}, {"eval", to_json(settings.eval)}};
      if (ex_name == "fig6") {
        const auto grid = parse_grid(ex_grid);
        if (!ex_a.empty() || !ex_b.empty()) {
          if (ex_a.empty() || ex_b.empty() || ex_data_dir.empty() || ex_banks_dir.empty()) {
            throw ValidationError("fig6 with checkpoints needs --a, --b, --data-dir and --banks-dir");
          }
          m.input("a", ex_a);
          m.input("b", ex_b);
          const auto tasks = load_tasks(ex_data_dir, ex_banks_dir, "", m);
          const auto rows = interpolation_sweep(load_checkpoint(ex_a).model, load_checkpoint(ex_b).model, grid,
                                                tasks, settings.eval);
          write_text(out / "frontier.csv", frontier_to_csv(rows));
          for (const auto& r : rows) {
            EvalReport rep;
            rep.records = r.records;
            rep.seed = settings.eval.seed;
            rep.config_hash = config_hash(to_json(settings.eval));
            emit_report(rep, out / ("w_" + format_double(r.w)) / "report.json");
          }
        } else {
          for (auto seed : settings.seeds) {
            ExperimentSettings one = settings;
            one.seeds = {seed};
            GridOptions opts;
            opts.out_dir = out;
            const auto pts = std::vector<GridPoint>{recipe_points("table1-toy", settings)[5]};
            run_grid(one, pts, opts);
            const auto task = make_toy_task(settings, seed);
            const auto seed_dir = out / ("seed_" + std::to_string(seed));
            EvalConfig ec = settings.eval;
            ec.seed = derive_seed(seed, 0x6576616c);
            const auto rows = interpolation_sweep(load_checkpoint(seed_dir / "vanilla.ckpt").model,
                                                  load_checkpoint(seed_dir / pts[0].name / "model.ckpt").model, grid,
                                                  task.heldout, ec);
            write_text(seed_dir / "frontier.csv", frontier_to_csv(rows));
            std::cout << "seed " << seed << "\n" << frontier_to_csv(rows);
          }
        }
      } else {
        GridOptions opts;
        opts.out_dir = out;
        opts.progress = [](const MethodResult& r) {
          std::printf("%-20s seed %llu  heldout clean %.3f robust %.3f  (%.1fs)\n", r.name.c_str(),
                      static_cast<unsigned long long>(r.seed), r.heldout.average_clean(),
                      r.heldout.average_robust(), r.seconds);
          std::fflush(stdout);
        };
        const auto results = run_grid(settings, recipe_points(ex_name, settings), opts);
        write_text(out / "summary.csv", summarize_results(results));
      }
      m.outputs = {out.string()};
      m.write(out / "manifest.json", args);
    }
  } catch (const ValidationError& e) {
    print_error(e.kind(), e.what());
    return kValidation;
  } catch (const ShapeError& e) {
    print_error(e.kind(), e.what());
    return kValidation;
  } catch (const Error& e) {
    print_error(e.kind(), e.what());
    return kRuntime;
  } catch (const std::exception& e) {
    print_error("runtime", e.what());
    return kRuntime;
  }
  return 0;
}
