#include "zsr/evaluation.hpp"

#include <cmath>

#include "zsr/error.hpp"
#include "zsr/ops.hpp"
#include "zsr/util.hpp"

namespace zsr {

EvalObjective parse_eval_objective(const std::string& s) {
  if (s == "ce") return EvalObjective::ce;
  if (s == "contrastive") return EvalObjective::contrastive;
  throw ValidationError("unknown evaluation objective '" + s + "' (expected ce|contrastive)");
}

std::string to_string(EvalObjective o) { return o == EvalObjective::ce ? "ce" : "contrastive"; }

std::vector<std::uint32_t> nearest_rows(const Tensor& embeddings, const Tensor& rows) {
  if (!rows.defined() || rows.dim(0) == 0) throw ValidationError("zero-shot classification needs a non-empty bank");
  const auto sims = ops::cosine_similarity_matrix(embeddings.detach(), rows.detach());
  const std::size_t n = sims.dim(0), c = sims.dim(1);
  std::vector<std::uint32_t> out(n);
  const float* s = sims.ptr();
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j) {
      if (s[i * c + j] > s[i * c + best]) best = j;
    }
    out[i] = static_cast<std::uint32_t>(best);
  }
  return out;
}

Tensor embed_images(const Model<float>& model, const Tensor& images, std::size_t batch_size) {
  NoGradGuard<float> guard(model.parameters());
  const std::size_t n = images.dim(0);
  const std::size_t per = images.numel() / n;
  const std::size_t d = model.encoder.config.embed_dim;
  auto out = Tensor::zeros({n, d});
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    Shape shape = images.shape();
    shape[0] = end - start;
    std::vector<float> chunk(images.data().begin() + static_cast<std::ptrdiff_t>(start * per),
                             images.data().begin() + static_cast<std::ptrdiff_t>(end * per));
    const auto z = encode_image(model, Tensor::from_data(shape, std::move(chunk)));
    std::copy(z.data().begin(), z.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(start * d));
  }
  return out;
}

std::vector<std::uint32_t> zero_shot_classify(const Model<float>& model, const Tensor& images,
                                              const TextBank& bank, Temperature tau) {
  (void)tau;  // positive rescaling never moves the argmax
  if (bank.size() == 0) throw ValidationError("zero_shot_classify: empty text bank");
  return nearest_rows(embed_images(model, images), bank.embeddings);
}

Tensor eval_objective(const Model<float>& model, const Tensor& images, const std::vector<std::uint32_t>& labels,
                      const TextBank& bank, EvalObjective objective, Temperature tau) {
  const auto z = encode_image(model, images);
  if (objective == EvalObjective::contrastive) return contrastive_per_example(z, bank.embeddings, labels, tau);
  const auto logits = ops::scale(ops::cosine_similarity_matrix(z, bank.embeddings), 1.0 / tau.value());
  return ce_per_example(logits, labels);
}

namespace {

std::vector<std::uint32_t> predict_batch(const Model<float>& model, const Tensor& images, const TextBank& bank) {
  return nearest_rows(encode_image(model, images), bank.embeddings);
}

}  // namespace

EvalRecord evaluate(const Model<float>& model, const Dataset& data, const TextBank& bank, const EvalConfig& config,
                    const std::string& name) {
  if (bank.size() == 0) throw ValidationError("evaluate: empty text bank");
  if (!data.labeled) throw ValidationError("evaluate: dataset '" + name + "' has no labels");
  if (config.batch_size == 0) throw ValidationError("evaluate: batch_size must be >= 1");
  if (config.attack) {
    if (!(config.attack->epsilon >= 0.0 && config.attack->epsilon <= 1.0)) {
      throw ValidationError("evaluate: attack epsilon " + std::to_string(config.attack->epsilon) +
                            " is outside the [0, 1] pixel range");
    }
    config.attack->validate();
  }
  const Temperature tau(config.tau);
  std::vector<std::uint32_t> label_map(data.classes.size());
  for (std::size_t c = 0; c < data.classes.size(); ++c) {
    label_map[c] = static_cast<std::uint32_t>(bank.index_of(data.classes[c]));
  }
  NoGradGuard<float> guard(model.parameters());
  EvalRecord rec;
  rec.dataset = name.empty() ? data.split : name;
  rec.n = data.size();
  rec.attack = config.attack;
  std::size_t clean_ok = 0, robust_ok = 0;
  const std::size_t n = data.size();
  for (std::size_t start = 0, b = 0; start < n; start += config.batch_size, ++b) {
    const std::size_t end = std::min(n, start + config.batch_size);
    std::vector<std::size_t> idx(end - start);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
    const Tensor x = gather_images(data, idx);
    std::vector<std::uint32_t> y;
    for (auto i : idx) y.push_back(label_map[data.labels[i]]);
    const auto clean = predict_batch(model, x, bank);
    std::vector<bool> ok(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      ok[i] = clean[i] == y[i];
      clean_ok += ok[i];
    }
    if (!config.attack) continue;
    const auto objective = [&](const Tensor& images) {
      return eval_objective(model, images, y, bank, config.objective, tau);
    };
    const auto adv = pgd_attack(objective, x, *config.attack, config.seed + b, /*record_objective=*/false);
    check_adversarial_constraints(x, adv, *config.attack);
    const auto attacked = predict_batch(model, adv.x_adv, bank);
    for (std::size_t i = 0; i < idx.size(); ++i) robust_ok += ok[i] && attacked[i] == y[i];
  }
  rec.clean = n ? static_cast<double>(clean_ok) / static_cast<double>(n) : 0.0;
  rec.robust = config.attack ? (n ? static_cast<double>(robust_ok) / static_cast<double>(n) : 0.0) : rec.clean;
  return rec;
}

double EvalReport::average_clean() const {
  double s = 0;
  for (const auto& r : records) s += r.clean;
  return records.empty() ? 0.0 : s / static_cast<double>(records.size());
}

double EvalReport::average_robust() const {
  double s = 0;
  for (const auto& r : records) s += r.robust;
  return records.empty() ? 0.0 : s / static_cast<double>(records.size());
}

EvalReport evaluate_tasks(const Model<float>& model, const std::vector<EvalTask>& tasks, const EvalConfig& config) {
  EvalReport report;
  report.seed = config.seed;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    EvalConfig c = config;
    c.seed = config.seed + 1000003ULL * t;
    report.records.push_back(evaluate(model, tasks[t].data, tasks[t].bank, c, tasks[t].name));
  }
  return report;
}

std::vector<FrontierRow> interpolation_sweep(const Model<float>& a, const Model<float>& b,
                                             const std::vector<double>& grid, const std::vector<EvalTask>& tasks,
                                             const EvalConfig& config) {
  check_same_manifest(a, b);
  if (grid.empty()) throw ValidationError("interpolation grid is empty");
  std::vector<FrontierRow> rows;
  for (double w : grid) {
    if (!(w >= 0.0 && w <= 1.0)) throw ValidationError("interpolation weight " + std::to_string(w) + " outside [0, 1]");
    const auto m = interpolate_models(a, b, static_cast<float>(w));
    const auto report = evaluate_tasks(m, tasks, config);
    rows.push_back({w, report.average_clean(), report.average_robust(), report.records});
  }
  return rows;
}

}  // namespace zsr
