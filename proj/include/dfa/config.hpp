#pragma once

#include "dfa/common.hpp"
#include "dfa/dataset.hpp"
#include "dfa/trainer.hpp"

#include <json.hpp>

#include <cctype>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace dfa {

namespace cfg_detail {

using nlohmann::json;

[[noreturn]] inline void fail(const std::string& path, const std::string& msg) {
  throw ConfigError(path + ": " + msg);
}

inline std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

inline void ensure_object(const json& j, const std::string& path) {
  if (!j.is_object()) fail(path, "expected an object");
}

// Unknown keys are rejected so typos cannot silently fall back to defaults.
inline void ensure_keys(const json& j, const std::string& path,
                        std::initializer_list<const char*> allowed) {
  ensure_object(j, path);
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!ok.count(it.key())) fail(join(path, it.key()), "unknown key");
}

inline double get_number(const json& j, const std::string& path, const char* key, double def) {
  if (!j.contains(key)) return def;
  const auto& v = j.at(key);
  if (!v.is_number()) fail(join(path, key), "expected a number");
  return v.get<double>();
}

inline int get_int(const json& j, const std::string& path, const char* key, int def) {
  if (!j.contains(key)) return def;
  const auto& v = j.at(key);
  if (!v.is_number_integer()) fail(join(path, key), "expected an integer");
  return v.get<int>();
}

inline long get_long(const json& j, const std::string& path, const char* key, long def) {
  if (!j.contains(key)) return def;
  const auto& v = j.at(key);
  if (!v.is_number_integer()) fail(join(path, key), "expected an integer");
  return v.get<long>();
}

inline int require_int(const json& j, const std::string& path, const char* key) {
  if (!j.contains(key)) fail(join(path, key), "required key missing");
  const auto& v = j.at(key);
  if (!v.is_number_integer()) fail(join(path, key), "expected an integer");
  return v.get<int>();
}

inline bool get_bool(const json& j, const std::string& path, const char* key, bool def) {
  if (!j.contains(key)) return def;
  const auto& v = j.at(key);
  if (!v.is_boolean()) fail(join(path, key), "expected a boolean");
  return v.get<bool>();
}

inline std::string get_string(const json& j, const std::string& path, const char* key,
                              const std::string& def) {
  if (!j.contains(key)) return def;
  const auto& v = j.at(key);
  if (!v.is_string()) fail(join(path, key), "expected a string");
  return v.get<std::string>();
}

inline std::vector<double> get_num_array(const json& j, const std::string& path, const char* key,
                                         std::vector<double> def) {
  if (!j.contains(key)) return def;
  const auto& v = j.at(key);
  if (!v.is_array()) fail(join(path, key), "expected an array of numbers");
  std::vector<double> out;
  for (const auto& e : v) {
    if (!e.is_number()) fail(join(path, key), "expected an array of numbers");
    out.push_back(e.get<double>());
  }
  return out;
}

inline std::vector<int> get_int_array(const json& j, const std::string& path, const char* key,
                                      std::vector<int> def) {
  if (!j.contains(key)) return def;
  const auto& v = j.at(key);
  if (!v.is_array()) fail(join(path, key), "expected an array of integers");
  std::vector<int> out;
  for (const auto& e : v) {
    if (!e.is_number_integer()) fail(join(path, key), "expected an array of integers");
    out.push_back(e.get<int>());
  }
  return out;
}

}  // namespace cfg_detail

// The default dataset block is the standard synthetic benchmark: a K=5
// Gaussian mixture in 2-D with a 30 degree rotation shift, 3 labeled target
// shots per class, and enough cluster overlap that adaptation quality shows.
struct DatasetConfig {
  std::string kind = "gaussian";  // gaussian | two_moons
  int n_classes = 5;
  int dim = 2;
  int n_source = 400;
  int n_unlabeled = 300;
  int shots = 3;
  double cluster_radius = 3.0;
  double cluster_std = 0.9;
  bool cluster_std_given = false;  // two_moons uses a tighter default jitter
  ShiftSpec shift{ShiftKind::rotation, 30.0, {}, 0.0};
};

/**
 * The full experiment description with the published defaults for every
 * hyperparameter. Parsed strictly: unknown keys and type mismatches are
 * rejected with the offending dotted path.
 */
struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::vector<int> seeds = {0, 1, 2, 3, 4};  // for sweeps and reports
  std::string output_dir = "runs/out";
  DatasetConfig dataset;

  // model
  std::vector<int> hidden = {32, 32};
  int feature_dim = 8;
  std::string activation = "tanh";
  double tau = 0.05;
  bool normalize_weights = true;

  // bank
  double gamma = 0.1;

  // mmd
  KernelSpec kernel;
  bool detach_prototypes = true;

  // pseudo
  double tau_p = 0.07;
  double eps_dist = 0.3;
  double eps_ent = 0.5;

  PerturbSpec perturb;

  // trainer
  std::string mode = "dfa";
  LossWeights weights;
  double ent_weight = 1.0;
  OptimizerConfig optimizer;
  int batch_size = 8;
  int unlabeled_batch_size = 16;
  long eval_interval = 50;
  long checkpoint_interval = 0;  // 0: final checkpoint only
  double warmup_frac = 0.1;

  static ExperimentConfig from_json(const nlohmann::json& root) {
    namespace cd = cfg_detail;
    ExperimentConfig c;
    cd::ensure_keys(root, "", {"seed", "seeds", "output_dir", "dataset", "model", "bank", "mmd",
                               "pseudo", "perturb", "trainer"});
    c.seed = static_cast<std::uint64_t>(cd::get_long(root, "", "seed", 0));
    c.seeds = cd::get_int_array(root, "", "seeds", c.seeds);
    c.output_dir = cd::get_string(root, "", "output_dir", c.output_dir);

    if (!root.contains("dataset")) cd::fail("dataset", "required key missing");
    {
      const auto& d = root.at("dataset");
      cd::ensure_keys(d, "dataset",
                      {"kind", "n_classes", "dim", "n_source", "n_unlabeled", "shots",
                       "cluster_radius", "cluster_std", "shift"});
      c.dataset.kind = cd::get_string(d, "dataset", "kind", "gaussian");
      if (c.dataset.kind != "gaussian" && c.dataset.kind != "two_moons")
        cd::fail("dataset.kind", "expected 'gaussian' or 'two_moons'");
      c.dataset.n_classes = cd::require_int(d, "dataset", "n_classes");
      c.dataset.dim = cd::require_int(d, "dataset", "dim");
      c.dataset.n_source = cd::require_int(d, "dataset", "n_source");
      c.dataset.n_unlabeled = cd::require_int(d, "dataset", "n_unlabeled");
      c.dataset.shots = cd::require_int(d, "dataset", "shots");
      c.dataset.cluster_radius = cd::get_number(d, "dataset", "cluster_radius", 3.0);
      c.dataset.cluster_std_given = d.contains("cluster_std");
      c.dataset.cluster_std = cd::get_number(d, "dataset", "cluster_std", 0.9);
      if (c.dataset.kind == "two_moons") {
        if (c.dataset.n_classes != 2) cd::fail("dataset.n_classes", "two_moons requires n_classes=2");
        if (c.dataset.dim != 2) cd::fail("dataset.dim", "two_moons requires dim=2");
      }
      if (d.contains("shift")) {
        const auto& sh = d.at("shift");
        cd::ensure_keys(sh, "dataset.shift", {"kind", "magnitude", "noise_std", "class_imbalance"});
        std::string kind = cd::get_string(sh, "dataset.shift", "kind", "rotation");
        if (kind == "rotation") c.dataset.shift.kind = ShiftKind::rotation;
        else if (kind == "translation") c.dataset.shift.kind = ShiftKind::translation;
        else if (kind == "scale") c.dataset.shift.kind = ShiftKind::scale;
        else if (kind == "mixed") c.dataset.shift.kind = ShiftKind::mixed;
        else cd::fail("dataset.shift.kind", "expected rotation, translation, scale, or mixed");
        c.dataset.shift.magnitude = cd::get_number(sh, "dataset.shift", "magnitude", 30.0);
        c.dataset.shift.noise_std = cd::get_number(sh, "dataset.shift", "noise_std", 0.0);
        c.dataset.shift.class_imbalance =
            cd::get_num_array(sh, "dataset.shift", "class_imbalance", {});
      }
    }

    if (root.contains("model")) {
      const auto& m = root.at("model");
      cd::ensure_keys(m, "model", {"hidden", "feature_dim", "activation", "tau", "normalize_weights"});
      c.hidden = cd::get_int_array(m, "model", "hidden", c.hidden);
      c.feature_dim = cd::get_int(m, "model", "feature_dim", c.feature_dim);
      c.activation = cd::get_string(m, "model", "activation", c.activation);
      if (c.activation != "tanh" && c.activation != "relu")
        cd::fail("model.activation", "expected 'tanh' or 'relu'");
      c.tau = cd::get_number(m, "model", "tau", c.tau);
      c.normalize_weights = cd::get_bool(m, "model", "normalize_weights", c.normalize_weights);
    }

    if (root.contains("bank")) {
      const auto& b = root.at("bank");
      cd::ensure_keys(b, "bank", {"gamma"});
      c.gamma = cd::get_number(b, "bank", "gamma", c.gamma);
    }

    if (root.contains("mmd")) {
      const auto& m = root.at("mmd");
      cd::ensure_keys(m, "mmd", {"kernel", "detach_prototypes"});
      if (m.contains("kernel")) {
        const auto& k = m.at("kernel");
        cd::ensure_keys(k, "mmd.kernel", {"strategy", "sigmas", "n_kernels"});
        std::string strat = cd::get_string(k, "mmd.kernel", "strategy", "median_heuristic");
        if (strat == "median_heuristic") c.kernel.strategy = BandwidthStrategy::median_heuristic;
        else if (strat == "fixed_list") c.kernel.strategy = BandwidthStrategy::fixed_list;
        else cd::fail("mmd.kernel.strategy", "expected 'median_heuristic' or 'fixed_list'");
        c.kernel.sigmas = cd::get_num_array(k, "mmd.kernel", "sigmas", {});
        c.kernel.n_kernels = cd::get_int(k, "mmd.kernel", "n_kernels", 5);
      }
      c.detach_prototypes = cd::get_bool(m, "mmd", "detach_prototypes", true);
      if (!c.detach_prototypes)
        cd::fail("mmd.detach_prototypes",
                 "prototype gradients are not supported; the bank moves only by its EWMA rule");
    }

    if (root.contains("pseudo")) {
      const auto& p = root.at("pseudo");
      cd::ensure_keys(p, "pseudo", {"tau_p", "eps_dist", "eps_ent"});
      c.tau_p = cd::get_number(p, "pseudo", "tau_p", c.tau_p);
      c.eps_dist = cd::get_number(p, "pseudo", "eps_dist", c.eps_dist);
      c.eps_ent = cd::get_number(p, "pseudo", "eps_ent", c.eps_ent);
    }

    if (root.contains("perturb")) {
      const auto& p = root.at("perturb");
      cd::ensure_keys(p, "perturb", {"radius", "xi", "power_iters"});
      c.perturb.radius = cd::get_number(p, "perturb", "radius", c.perturb.radius);
      c.perturb.xi = cd::get_number(p, "perturb", "xi", c.perturb.xi);
      c.perturb.power_iters = cd::get_int(p, "perturb", "power_iters", c.perturb.power_iters);
    }

    if (root.contains("trainer")) {
      const auto& t = root.at("trainer");
      cd::ensure_keys(t, "trainer",
                      {"mode", "alpha1", "alpha2", "alpha3", "ent_weight", "lr", "momentum",
                       "weight_decay", "lr_schedule", "total_iters", "batch_size",
                       "unlabeled_batch_size", "eval_interval", "checkpoint_interval",
                       "warmup_frac"});
      c.mode = cd::get_string(t, "trainer", "mode", c.mode);
      train_mode_from_string(c.mode);  // validates
      c.weights.alpha1 = cd::get_number(t, "trainer", "alpha1", 1.0);
      c.weights.alpha2 = cd::get_number(t, "trainer", "alpha2", 1.0);
      c.weights.alpha3 = cd::get_number(t, "trainer", "alpha3", 1.0);
      c.ent_weight = cd::get_number(t, "trainer", "ent_weight", 1.0);
      c.optimizer.lr = cd::get_number(t, "trainer", "lr", c.optimizer.lr);
      c.optimizer.momentum = cd::get_number(t, "trainer", "momentum", c.optimizer.momentum);
      c.optimizer.weight_decay = cd::get_number(t, "trainer", "weight_decay", c.optimizer.weight_decay);
      if (t.contains("lr_schedule")) {
        const auto& sc = t.at("lr_schedule");
        cd::ensure_keys(sc, "trainer.lr_schedule", {"kind", "decay", "power"});
        std::string kind = cd::get_string(sc, "trainer.lr_schedule", "kind", "inv_decay");
        if (kind == "inv_decay") c.optimizer.schedule.kind = LrSchedule::Kind::inv_decay;
        else if (kind == "constant") c.optimizer.schedule.kind = LrSchedule::Kind::constant;
        else cd::fail("trainer.lr_schedule.kind", "expected 'inv_decay' or 'constant'");
        c.optimizer.schedule.decay = cd::get_number(sc, "trainer.lr_schedule", "decay", 1e-4);
        c.optimizer.schedule.power = cd::get_number(sc, "trainer.lr_schedule", "power", 0.75);
      }
      c.optimizer.total_iters = cd::get_long(t, "trainer", "total_iters", c.optimizer.total_iters);
      c.batch_size = cd::get_int(t, "trainer", "batch_size", c.batch_size);
      c.unlabeled_batch_size = cd::get_int(t, "trainer", "unlabeled_batch_size", c.unlabeled_batch_size);
      c.eval_interval = cd::get_long(t, "trainer", "eval_interval", c.eval_interval);
      c.checkpoint_interval = cd::get_long(t, "trainer", "checkpoint_interval", c.checkpoint_interval);
      c.warmup_frac = cd::get_number(t, "trainer", "warmup_frac", c.warmup_frac);
    }

    c.make_train_settings().validate();  // range checks with precise messages
    return c;
  }

  // Resolved copy: every value that will actually be used, defaults included.
  nlohmann::json to_json() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["seeds"] = seeds;
    j["output_dir"] = output_dir;
    j["dataset"] = {{"kind", dataset.kind},
                    {"n_classes", dataset.n_classes},
                    {"dim", dataset.dim},
                    {"n_source", dataset.n_source},
                    {"n_unlabeled", dataset.n_unlabeled},
                    {"shots", dataset.shots},
                    {"cluster_radius", dataset.cluster_radius},
                    {"cluster_std", effective_cluster_std()},
                    {"shift",
                     {{"kind", shift_kind_name()},
                      {"magnitude", dataset.shift.magnitude},
                      {"noise_std", dataset.shift.noise_std},
                      {"class_imbalance", dataset.shift.class_imbalance}}}};
    j["model"] = {{"hidden", hidden},
                  {"feature_dim", feature_dim},
                  {"activation", activation},
                  {"tau", tau},
                  {"normalize_weights", normalize_weights}};
    j["bank"] = {{"gamma", gamma}};
    j["mmd"] = {{"kernel",
                 {{"strategy", kernel.strategy == BandwidthStrategy::fixed_list ? "fixed_list"
                                                                                : "median_heuristic"},
                  {"sigmas", kernel.sigmas},
                  {"n_kernels", kernel.n_kernels}}},
                {"detach_prototypes", detach_prototypes}};
    j["pseudo"] = {{"tau_p", tau_p}, {"eps_dist", eps_dist}, {"eps_ent", eps_ent}};
    j["perturb"] = {{"radius", perturb.radius}, {"xi", perturb.xi}, {"power_iters", perturb.power_iters}};
    j["trainer"] = {{"mode", mode},
                    {"alpha1", weights.alpha1},
                    {"alpha2", weights.alpha2},
                    {"alpha3", weights.alpha3},
                    {"ent_weight", ent_weight},
                    {"lr", optimizer.lr},
                    {"momentum", optimizer.momentum},
                    {"weight_decay", optimizer.weight_decay},
                    {"lr_schedule",
                     {{"kind", optimizer.schedule.kind == LrSchedule::Kind::constant ? "constant"
                                                                                     : "inv_decay"},
                      {"decay", optimizer.schedule.decay},
                      {"power", optimizer.schedule.power}}},
                    {"total_iters", optimizer.total_iters},
                    {"batch_size", batch_size},
                    {"unlabeled_batch_size", unlabeled_batch_size},
                    {"eval_interval", eval_interval},
                    {"checkpoint_interval", checkpoint_interval},
                    {"warmup_frac", warmup_frac}};
    return j;
  }

  std::string config_hash() const {
    std::uint64_t h = fnv1a(to_json().dump());
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
  }

  double effective_cluster_std() const {
    if (dataset.kind == "two_moons" && !dataset.cluster_std_given) return 0.1;
    return dataset.cluster_std;
  }

  std::string shift_kind_name() const {
    switch (dataset.shift.kind) {
      case ShiftKind::rotation: return "rotation";
      case ShiftKind::translation: return "translation";
      case ShiftKind::scale: return "scale";
      case ShiftKind::mixed: return "mixed";
    }
    return "?";
  }

  SSDAEpisode make_episode() const {
    if (dataset.kind == "two_moons")
      return make_two_moons_episode(seed, dataset.n_source, dataset.n_unlabeled, dataset.shots,
                                    dataset.shift, effective_cluster_std());
    ClusterGeometry geom{dataset.cluster_radius, effective_cluster_std()};
    return make_synthetic_episode(seed, dataset.n_classes, dataset.dim, dataset.n_source,
                                  dataset.n_unlabeled, dataset.shots, dataset.shift, geom);
  }

  TrainSettings make_train_settings() const {
    TrainSettings s;
    s.mode = train_mode_from_string(mode);
    s.weights = weights;
    s.ent_weight = ent_weight;
    s.optimizer = optimizer;
    s.model.hidden = hidden;
    s.model.feature_dim = feature_dim;
    s.model.activation = activation == "relu" ? Activation::relu : Activation::tanh_fn;
    s.model.input_dim = dataset.dim;
    s.tau = tau;
    s.normalize_weights = normalize_weights;
    s.gamma = gamma;
    s.kernel = kernel;
    s.tau_p = tau_p;
    s.eps_dist = eps_dist;
    s.eps_ent = eps_ent;
    s.perturb = perturb;
    s.batch_size = batch_size;
    s.unlabeled_batch_size = unlabeled_batch_size;
    s.eval_interval = eval_interval;
    s.warmup_frac = warmup_frac;
    s.seed = seed;
    return s;
  }
};

// --set overrides accept either full dotted paths or these shorthands.
inline std::string resolve_config_alias(const std::string& key) {
  if (key == "alpha1" || key == "alpha2" || key == "alpha3" || key == "mode" ||
      key == "ent_weight" || key == "lr" || key == "momentum" || key == "weight_decay" ||
      key == "total_iters" || key == "batch_size" || key == "unlabeled_batch_size" ||
      key == "eval_interval" || key == "warmup_frac")
    return "trainer." + key;
  if (key == "iters") return "trainer.total_iters";
  if (key == "gamma") return "bank.gamma";
  if (key == "tau") return "model.tau";
  if (key == "tau_p" || key == "eps_dist" || key == "eps_ent") return "pseudo." + key;
  return key;
}

// Apply `path=value` onto a raw config object; the value is parsed as JSON
// when possible and treated as a string otherwise.
inline void apply_override(nlohmann::json& root, const std::string& path,
                           const std::string& value) {
  std::string full = resolve_config_alias(path);
  nlohmann::json* at = &root;
  size_t start = 0;
  while (true) {
    size_t dot = full.find('.', start);
    std::string key = full.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("override '" + path + "': empty key segment");
    if (dot == std::string::npos) {
      nlohmann::json parsed = nlohmann::json::parse(value, nullptr, false);
      (*at)[key] = parsed.is_discarded() ? nlohmann::json(value) : parsed;
      return;
    }
    if (!at->contains(key) || !(*at)[key].is_object()) (*at)[key] = nlohmann::json::object();
    at = &(*at)[key];
    start = dot + 1;
  }
}

inline void apply_override_arg(nlohmann::json& root, const std::string& arg) {
  size_t eq = arg.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override '" + arg + "' must have the form key=value");
  apply_override(root, arg.substr(0, eq), arg.substr(eq + 1));
}

// Environment overrides for CI: DFA_TRAINER__TOTAL_ITERS=50 sets
// trainer.total_iters. Double underscore separates path segments.
inline void apply_env_overrides(nlohmann::json& root, char** envp) {
  if (!envp) return;
  const std::string prefix = "DFA_";
  for (char** e = envp; *e; ++e) {
    std::string entry(*e);
    if (entry.rfind(prefix, 0) != 0) continue;
    size_t eq = entry.find('=');
    if (eq == std::string::npos) continue;
    std::string name = entry.substr(prefix.size(), eq - prefix.size());
    std::string value = entry.substr(eq + 1);
    std::string path;
    for (size_t i = 0; i < name.size(); ++i) {
      if (name[i] == '_' && i + 1 < name.size() && name[i + 1] == '_') {
        path += '.';
        ++i;
      } else {
        path += static_cast<char>(std::tolower(static_cast<unsigned char>(name[i])));
      }
    }
    apply_override(root, path, value);
  }
}

// Parse a config file; parse errors are reported with line and column.
inline nlohmann::json load_config_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  std::string text = ss.str();
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    size_t byte = e.byte > 0 ? e.byte - 1 : 0;
    size_t line = 1, col = 1;
    for (size_t i = 0; i < byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ConfigError(path + ":" + std::to_string(line) + ":" + std::to_string(col) +
                      ": " + e.what());
  }
}

}  // namespace dfa
