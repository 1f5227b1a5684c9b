#include "zsr/config.hpp"

#include <cmath>
#include <set>

#include "zsr/checkpoint.hpp"
#include "zsr/error.hpp"
#include "zsr/util.hpp"

namespace zsr {

using json = nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + ": expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ValidationError(where + ": unknown key '" + key + "'");
  }
}

template <typename V>
V get_as(const json& j, const std::string& key) {
  try {
    return j.at(key).get<V>();
  } catch (const json::exception&) {
    throw ValidationError("config key '" + key + "': wrong type (" + std::string(j.at(key).type_name()) + ")");
  }
}

std::size_t get_count(const json& j, const std::string& key) {
  const auto& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ValidationError("config key '" + key + "': expected a non-negative integer");
  }
  return v.get<std::size_t>();
}

// Numbers, or "a/b" strings such as "2/255".
double get_real(const json& j, const std::string& key) {
  const auto& v = j.at(key);
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    const auto slash = s.find('/');
    try {
      if (slash == std::string::npos) return std::stod(s);
      return std::stod(s.substr(0, slash)) / std::stod(s.substr(slash + 1));
    } catch (const std::exception&) {
    }
  }
  throw ValidationError("config key '" + key + "': expected a number");
}

template <typename F>
void with_key(const std::string& key, F f) {
  try {
    f();
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    if (msg.find("'" + key + "'") != std::string::npos) throw;
    throw ValidationError("config key '" + key + "': " + msg);
  }
}

}  // namespace

json to_json(const AttackConfig& c) {
  return json{{"epsilon", c.epsilon},       {"alpha", c.alpha},
              {"steps", c.steps},           {"norm", "inf"},
              {"random_start", c.random_start}, {"best_iterate", c.best_iterate},
              {"step_mode", to_string(c.step_mode)}, {"restarts", c.restarts}};
}

AttackConfig attack_config_from_json(const json& j, AttackConfig c) {
  reject_unknown(j, {"epsilon", "alpha", "steps", "norm", "random_start", "best_iterate", "step_mode", "restarts"},
                 "attack config");
  if (j.contains("epsilon")) c.epsilon = get_real(j, "epsilon");
  if (j.contains("alpha")) c.alpha = get_real(j, "alpha");
  if (j.contains("steps")) c.steps = get_count(j, "steps");
  if (j.contains("norm")) {
    const auto& v = j.at("norm");
    const bool inf = (v.is_string() && (v.get<std::string>() == "inf" || v.get<std::string>() == "linf")) ||
                     (v.is_number() && std::isinf(v.get<double>()));
    if (!inf) throw ValidationError("config key 'norm': only \"inf\" is supported");
  }
  if (j.contains("random_start")) c.random_start = get_as<bool>(j, "random_start");
  if (j.contains("best_iterate")) c.best_iterate = get_as<bool>(j, "best_iterate");
  if (j.contains("step_mode")) with_key("step_mode", [&] { c.step_mode = parse_step_mode(get_as<std::string>(j, "step_mode")); });
  if (j.contains("restarts")) c.restarts = get_count(j, "restarts");
  with_key(!(c.epsilon >= 0 && c.epsilon <= 1) ? "epsilon" : (!(c.alpha > 0) ? "alpha" : (c.steps < 1 ? "steps" : "restarts")),
           [&] { c.validate(); });
  return c;
}

json to_json(const TrainConfig& c) {
  json j{{"loss_variant", to_string(c.loss_variant)},
         {"adaptation", to_string(c.adaptation)},
         {"lr", c.lr ? json(*c.lr) : json(nullptr)},
         {"momentum", c.momentum},
         {"epochs", c.epochs},
         {"batch_size", c.batch_size},
         {"tau", c.tau},
         {"seed", c.seed},
         {"attack", to_json(c.attack)},
         {"adversarial", c.adversarial},
         {"shots", c.shots ? json(*c.shots) : json(nullptr)},
         {"unlabeled", c.unlabeled},
         {"head_pretrain_epochs", c.head_pretrain_epochs},
         {"freeze_head", c.freeze_head},
         {"train_dictionary", c.train_dictionary},
         {"encoder", encoder_config_to_json(c.encoder)}};
  return j;
}

TrainConfig train_config_from_json(const json& j) {
  reject_unknown(j, {"loss_variant", "adaptation", "lr", "momentum", "epochs", "batch_size", "tau", "τ", "seed",
                     "attack", "adversarial", "shots", "unlabeled", "head_pretrain_epochs", "freeze_head",
                     "train_dictionary", "encoder"},
                 "train config");
  TrainConfig c;
  if (!j.contains("loss_variant")) throw ValidationError("config key 'loss_variant' is required");
  with_key("loss_variant", [&] { c.loss_variant = parse_loss_variant(get_as<std::string>(j, "loss_variant")); });
  if (j.contains("adaptation")) {
    with_key("adaptation", [&] { c.adaptation = parse_adaptation(get_as<std::string>(j, "adaptation")); });
  }
  if (j.contains("lr") && !j.at("lr").is_null()) {
    c.lr = get_real(j, "lr");
    if (!(*c.lr > 0) || !std::isfinite(*c.lr)) throw ValidationError("config key 'lr': must be > 0");
  }
  if (j.contains("momentum")) {
    c.momentum = get_real(j, "momentum");
    if (!(c.momentum >= 0 && c.momentum < 1)) throw ValidationError("config key 'momentum': must be in [0, 1)");
  }
  if (j.contains("epochs")) c.epochs = get_count(j, "epochs");
  if (j.contains("batch_size")) c.batch_size = get_count(j, "batch_size");
  for (const char* key : {"tau", "τ"}) {
    if (!j.contains(key)) continue;
    c.tau = get_real(j, key);
    if (!(c.tau > 0) || !std::isfinite(c.tau)) throw ValidationError("config key 'tau' (τ): must be > 0");
  }
  if (j.contains("seed")) c.seed = get_as<std::uint64_t>(j, "seed");
  if (j.contains("attack")) {
    with_key("attack", [&] { c.attack = attack_config_from_json(j.at("attack"), AttackConfig::training_default()); });
  }
  if (j.contains("adversarial")) c.adversarial = get_as<bool>(j, "adversarial");
  if (j.contains("shots") && !j.at("shots").is_null()) {
    c.shots = get_count(j, "shots");
    if (*c.shots == 0) throw ValidationError("config key 'shots': must be >= 1");
  }
  if (j.contains("unlabeled")) c.unlabeled = get_as<bool>(j, "unlabeled");
  if (j.contains("head_pretrain_epochs")) c.head_pretrain_epochs = get_count(j, "head_pretrain_epochs");
  if (j.contains("freeze_head")) c.freeze_head = get_as<bool>(j, "freeze_head");
  if (j.contains("train_dictionary")) c.train_dictionary = get_as<bool>(j, "train_dictionary");
  if (j.contains("encoder")) with_key("encoder", [&] { c.encoder = encoder_config_from_json(j.at("encoder")); });
  with_key(c.batch_size == 0 ? "batch_size" : (c.unlabeled ? "unlabeled" : "adaptation"), [&] { c.validate(); });
  return c;
}

json to_json(const EvalConfig& c) {
  return json{{"attack", c.attack ? to_json(*c.attack) : json(nullptr)},
              {"objective", to_string(c.objective)},
              {"tau", c.tau},
              {"batch_size", c.batch_size},
              {"seed", c.seed}};
}

EvalConfig eval_config_from_json(const json& j) {
  reject_unknown(j, {"attack", "objective", "tau", "τ", "batch_size", "seed"}, "eval config");
  EvalConfig c;
  if (j.contains("attack")) {
    if (j.at("attack").is_null()) {
      c.attack.reset();
    } else {
      with_key("attack", [&] { c.attack = attack_config_from_json(j.at("attack")); });
    }
  }
  if (j.contains("objective")) {
    with_key("objective", [&] { c.objective = parse_eval_objective(get_as<std::string>(j, "objective")); });
  }
  for (const char* key : {"tau", "τ"}) {
    if (!j.contains(key)) continue;
    c.tau = get_real(j, key);
    if (!(c.tau > 0) || !std::isfinite(c.tau)) throw ValidationError("config key 'tau' (τ): must be > 0");
  }
  if (j.contains("batch_size")) {
    c.batch_size = get_count(j, "batch_size");
    if (c.batch_size == 0) throw ValidationError("config key 'batch_size': must be >= 1");
  }
  if (j.contains("seed")) c.seed = get_as<std::uint64_t>(j, "seed");
  return c;
}

json parse_json_file(const std::filesystem::path& path) {
  const auto text = read_text(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": malformed JSON: " + e.what());
  }
}

TrainConfig load_train_config(const std::filesystem::path& path) { return train_config_from_json(parse_json_file(path)); }

AttackConfig load_attack_config(const std::filesystem::path& path) {
  return attack_config_from_json(parse_json_file(path));
}

EvalConfig load_eval_config(const std::filesystem::path& path) { return eval_config_from_json(parse_json_file(path)); }

std::string config_hash(const json& j) { return hex64(fnv1a64(j.dump())); }

}  // namespace zsr
