#pragma once

// JSON experiment configuration. Every key is optional except where noted;
// unknown keys are rejected so a typo never silently falls back to a default.
//
// {
//   "seed": 0,
//   "output_dir": "out",
//   "dataset": { "name": "gaussians",
//                "synthetic": { "n_per_class": [400, 400], "test_n_per_class": [200, 200],
//                               "means": [[...], [...]], "scale": 1.0, "label_flip_rate": 0.1 } }
//            | { "name": "derma", "train": "train.csv", "test": "test.uds" },
//   "binarization": "identity" | "dermamnist" | "pathmnist" | [0, 1, ...] | null,
//   "fractions": [0.2, 0.5],
//   "model": { "hidden": [32] },
//   "baseline":   { "learning_rate": 0.1, "momentum": 0.9, "batch_size": 64, "epochs": 100 },
//   "unlearning": { "learning_rate": 0.01, "momentum": 0.9, "batch_size": 64, "epochs": 10,
//                   "alpha": 1.0, "malignant_class": 1 },
//   "methods": ["retrain", "fine_tune", {"name": "salun", "alpha": 2.0}, ...],
//   "risk": ["I", "II", {"name": "custom", "c_fp": 1, "c_fn": 5}]
// }

#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ulab/data.hpp"
#include "ulab/error.hpp"
#include "ulab/metrics.hpp"
#include "ulab/training.hpp"
#include "ulab/unlearn.hpp"

namespace ulab {

struct SyntheticSource {
  std::vector<std::size_t> n_per_class{400, 400};
  std::vector<std::size_t> test_n_per_class{200, 200};
  std::vector<std::vector<double>> means{{0, 0, 0, 0, 0, 0, 0, 0},
                                         {0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5}};
  double scale = 1.0;
  double label_flip_rate = 0.1;
};

struct DatasetSource {
  std::string name = "gaussians";
  std::optional<SyntheticSource> synthetic = SyntheticSource{};
  std::string train_path;
  std::string test_path;
};

struct MethodSpec {
  MethodSpec() = default;
  MethodSpec(Method m) : method(m) {}  // NOLINT: implicit by design

  Method method = Method::retrain;
  std::optional<double> learning_rate;
  std::optional<double> momentum;
  std::optional<std::size_t> batch_size;
  std::optional<std::size_t> epochs;
  std::optional<double> alpha;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  DatasetSource dataset;
  std::optional<BinarizationMap> binarization;
  std::vector<double> fractions{0.2, 0.5};
  std::vector<std::size_t> hidden{32};
  SgdConfig baseline = baseline_sgd();
  SgdConfig unlearning = unlearning_sgd();
  double alpha = 1.0;
  int malignant_class = 1;
  std::vector<MethodSpec> methods{Method::retrain, Method::fine_tune, Method::random_label, Method::salun,
                                  Method::salun_cra};
  std::vector<RiskConfig> risks{presets::risk_I(), presets::risk_II()};

  void validate() const {
    if (fractions.empty()) throw ConfigError("fractions: at least one forget fraction required");
    for (std::size_t i = 0; i < fractions.size(); ++i)
      if (!(fractions[i] > 0.0 && fractions[i] < 1.0))
        throw ConfigError("fractions[" + std::to_string(i) + "]: must lie in (0, 1)");
    if (methods.empty()) throw ConfigError("methods: at least one method required");
    if (risks.empty()) throw ConfigError("risk: at least one risk preset required");
    std::set<std::string> risk_names;
    for (const auto& r : risks) {
      r.validate();
      if (!risk_names.insert(r.name).second) throw ConfigError("risk: duplicate name '" + r.name + "'");
    }
    std::set<Method> seen;
    for (const auto& m : methods)
      if (!seen.insert(m.method).second)
        throw ConfigError("methods: '" + std::string(method_name(m.method)) + "' listed twice");
    for (std::size_t h : hidden)
      if (h < 1) throw ConfigError("model.hidden: sizes must be >= 1");
    baseline.validate();
    unlearning.validate();
    if (!(alpha > 0.0)) throw ConfigError("unlearning.alpha: must be > 0");
    if (malignant_class < 0 || malignant_class > 1) throw ConfigError("unlearning.malignant_class: must be 0 or 1");
    if (binarization) binarization->validate();
    if (dataset.name.empty()) throw ConfigError("dataset.name: must not be empty");
    if (!dataset.synthetic && (dataset.train_path.empty() || dataset.test_path.empty()))
      throw ConfigError("dataset: need either 'synthetic' or both 'train' and 'test'");
  }

  /// Recipe for one method, with per-method overrides applied.
  UnlearnConfig unlearn_config(const MethodSpec& spec, std::uint64_t cell_seed) const {
    UnlearnConfig u;
    u.method = spec.method;
    u.sgd = unlearning;
    u.retrain_sgd = baseline;
    SgdConfig& target = spec.method == Method::retrain ? u.retrain_sgd : u.sgd;
    if (spec.learning_rate) target.learning_rate = *spec.learning_rate;
    if (spec.momentum) target.momentum = *spec.momentum;
    if (spec.batch_size) target.batch_size = *spec.batch_size;
    if (spec.epochs) target.epochs = *spec.epochs;
    u.alpha = spec.alpha.value_or(alpha);
    u.malignant_class = malignant_class;
    u.seed = cell_seed;
    return u;
  }
};

namespace detail {

using nlohmann::json;

inline void check_keys(const json& j, const std::string& path, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(path + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError((path.empty() ? key : path + "." + key) + ": unknown key");
  }
}

inline double get_number(const json& j, const std::string& path) {
  if (!j.is_number()) throw ConfigError(path + ": expected a number");
  return j.get<double>();
}

inline bool is_count(const json& j) {
  return j.is_number_unsigned() || (j.is_number_integer() && j.get<std::int64_t>() >= 0);
}

inline std::size_t get_count(const json& j, const std::string& path) {
  if (!is_count(j)) throw ConfigError(path + ": expected a nonnegative integer");
  return j.get<std::size_t>();
}

inline std::vector<std::size_t> get_counts(const json& j, const std::string& path) {
  if (!j.is_array()) throw ConfigError(path + ": expected an array");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(get_count(j[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

inline void read_sgd(const json& j, const std::string& path, SgdConfig& sgd, double* alpha, int* malignant) {
  if (alpha)
    check_keys(j, path, {"learning_rate", "momentum", "batch_size", "epochs", "alpha", "malignant_class"});
  else
    check_keys(j, path, {"learning_rate", "momentum", "batch_size", "epochs"});
  if (j.contains("learning_rate")) sgd.learning_rate = get_number(j["learning_rate"], path + ".learning_rate");
  if (j.contains("momentum")) sgd.momentum = get_number(j["momentum"], path + ".momentum");
  if (j.contains("batch_size")) sgd.batch_size = get_count(j["batch_size"], path + ".batch_size");
  if (j.contains("epochs")) sgd.epochs = get_count(j["epochs"], path + ".epochs");
  if (alpha && j.contains("alpha")) *alpha = get_number(j["alpha"], path + ".alpha");
  if (malignant && j.contains("malignant_class")) {
    if (!j["malignant_class"].is_number_integer()) throw ConfigError(path + ".malignant_class: expected an integer");
    *malignant = j["malignant_class"].get<int>();
  }
}

inline Method get_method(const json& j, const std::string& path) {
  if (!j.is_string()) throw ConfigError(path + ": expected a method name");
  const auto m = parse_method(j.get<std::string>());
  if (!m)
    throw ConfigError(path + ": unknown method '" + j.get<std::string>() +
                      "' (expected retrain, fine_tune, random_label, salun or salun_cra)");
  return *m;
}

}  // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& j) {
  using detail::check_keys;
  using detail::get_number;
  ExperimentConfig cfg;
  check_keys(j, "", {"seed", "output_dir", "dataset", "binarization", "fractions", "model", "baseline",
                     "unlearning", "methods", "risk"});
  if (j.contains("seed")) {
    if (!detail::is_count(j["seed"])) throw ConfigError("seed: expected a nonnegative integer");
    cfg.seed = j["seed"].get<std::uint64_t>();
  }
  if (j.contains("output_dir")) {
    if (!j["output_dir"].is_string()) throw ConfigError("output_dir: expected a string");
    cfg.output_dir = j["output_dir"].get<std::string>();
  }
  if (j.contains("dataset")) {
    const auto& d = j["dataset"];
    check_keys(d, "dataset", {"name", "synthetic", "train", "test"});
    if (d.contains("name")) {
      if (!d["name"].is_string()) throw ConfigError("dataset.name: expected a string");
      cfg.dataset.name = d["name"].get<std::string>();
    }
    if (d.contains("train") || d.contains("test")) {
      if (d.contains("synthetic")) throw ConfigError("dataset: 'synthetic' and 'train'/'test' are exclusive");
      cfg.dataset.synthetic.reset();
      for (const char* key : {"train", "test"}) {
        if (!d.contains(key) || !d[key].is_string())
          throw ConfigError(std::string("dataset.") + key + ": expected a file path");
      }
      cfg.dataset.train_path = d["train"].get<std::string>();
      cfg.dataset.test_path = d["test"].get<std::string>();
    }
    if (d.contains("synthetic")) {
      const auto& s = d["synthetic"];
      check_keys(s, "dataset.synthetic", {"n_per_class", "test_n_per_class", "means", "scale", "label_flip_rate"});
      SyntheticSource src;
      if (s.contains("n_per_class")) src.n_per_class = detail::get_counts(s["n_per_class"], "dataset.synthetic.n_per_class");
      if (s.contains("test_n_per_class"))
        src.test_n_per_class = detail::get_counts(s["test_n_per_class"], "dataset.synthetic.test_n_per_class");
      if (s.contains("means")) {
        if (!s["means"].is_array()) throw ConfigError("dataset.synthetic.means: expected an array of arrays");
        src.means.clear();
        for (std::size_t c = 0; c < s["means"].size(); ++c) {
          const auto& row = s["means"][c];
          const std::string p = "dataset.synthetic.means[" + std::to_string(c) + "]";
          if (!row.is_array()) throw ConfigError(p + ": expected an array");
          std::vector<double> mean;
          for (std::size_t k = 0; k < row.size(); ++k) mean.push_back(get_number(row[k], p + "[" + std::to_string(k) + "]"));
          src.means.push_back(std::move(mean));
        }
      }
      if (s.contains("scale")) src.scale = get_number(s["scale"], "dataset.synthetic.scale");
      if (s.contains("label_flip_rate")) src.label_flip_rate = get_number(s["label_flip_rate"], "dataset.synthetic.label_flip_rate");
      if (src.n_per_class.size() != src.means.size() || src.test_n_per_class.size() != src.means.size())
        throw ConfigError("dataset.synthetic: n_per_class, test_n_per_class and means need one entry per class");
      cfg.dataset.synthetic = src;
    }
  }
  if (j.contains("binarization")) {
    const auto& b = j["binarization"];
    if (b.is_null()) {
      cfg.binarization.reset();
    } else if (b.is_string()) {
      cfg.binarization = presets::by_name(b.get<std::string>());
      if (!cfg.binarization)
        throw ConfigError("binarization: unknown preset '" + b.get<std::string>() +
                          "' (expected identity, dermamnist or pathmnist)");
    } else if (b.is_array()) {
      BinarizationMap map{"custom", {}};
      for (std::size_t i = 0; i < b.size(); ++i) {
        if (!b[i].is_number_integer()) throw ConfigError("binarization[" + std::to_string(i) + "]: expected 0 or 1");
        map.to_binary.push_back(b[i].get<int>());
      }
      try {
        map.validate();
      } catch (const ConfigError& e) {
        throw ConfigError(std::string("binarization: ") + e.what());
      }
      cfg.binarization = map;
    } else {
      throw ConfigError("binarization: expected a preset name, an array, or null");
    }
  }
  if (j.contains("fractions")) {
    const auto& f = j["fractions"];
    if (!f.is_array()) throw ConfigError("fractions: expected an array");
    cfg.fractions.clear();
    for (std::size_t i = 0; i < f.size(); ++i)
      cfg.fractions.push_back(get_number(f[i], "fractions[" + std::to_string(i) + "]"));
  }
  if (j.contains("model")) {
    check_keys(j["model"], "model", {"hidden"});
    if (j["model"].contains("hidden")) cfg.hidden = detail::get_counts(j["model"]["hidden"], "model.hidden");
  }
  if (j.contains("baseline")) detail::read_sgd(j["baseline"], "baseline", cfg.baseline, nullptr, nullptr);
  if (j.contains("unlearning"))
    detail::read_sgd(j["unlearning"], "unlearning", cfg.unlearning, &cfg.alpha, &cfg.malignant_class);
  if (j.contains("methods")) {
    const auto& ms = j["methods"];
    if (!ms.is_array()) throw ConfigError("methods: expected an array");
    cfg.methods.clear();
    for (std::size_t i = 0; i < ms.size(); ++i) {
      const std::string path = "methods[" + std::to_string(i) + "]";
      MethodSpec spec;
      if (ms[i].is_object()) {
        const auto& m = ms[i];
        check_keys(m, path, {"name", "learning_rate", "momentum", "batch_size", "epochs", "alpha"});
        if (!m.contains("name")) throw ConfigError(path + ".name: required");
        spec.method = detail::get_method(m["name"], path + ".name");
        if (m.contains("learning_rate")) spec.learning_rate = get_number(m["learning_rate"], path + ".learning_rate");
        if (m.contains("momentum")) spec.momentum = get_number(m["momentum"], path + ".momentum");
        if (m.contains("batch_size")) spec.batch_size = detail::get_count(m["batch_size"], path + ".batch_size");
        if (m.contains("epochs")) spec.epochs = detail::get_count(m["epochs"], path + ".epochs");
        if (m.contains("alpha")) spec.alpha = get_number(m["alpha"], path + ".alpha");
        if (spec.alpha && !(*spec.alpha > 0.0)) throw ConfigError(path + ".alpha: must be > 0");
        if (spec.learning_rate && !(*spec.learning_rate >= 0.0)) throw ConfigError(path + ".learning_rate: must be >= 0");
        if (spec.momentum && !(*spec.momentum >= 0.0 && *spec.momentum < 1.0))
          throw ConfigError(path + ".momentum: must lie in [0, 1)");
        if (spec.batch_size && *spec.batch_size < 1) throw ConfigError(path + ".batch_size: must be >= 1");
      } else {
        spec.method = detail::get_method(ms[i], path);
      }
      cfg.methods.push_back(spec);
    }
  }
  if (j.contains("risk")) {
    const auto& rs = j["risk"];
    if (!rs.is_array()) throw ConfigError("risk: expected an array");
    cfg.risks.clear();
    for (std::size_t i = 0; i < rs.size(); ++i) {
      const std::string path = "risk[" + std::to_string(i) + "]";
      if (rs[i].is_string()) {
        const auto name = rs[i].get<std::string>();
        if (name == "I") cfg.risks.push_back(presets::risk_I());
        else if (name == "II") cfg.risks.push_back(presets::risk_II());
        else throw ConfigError(path + ": unknown risk preset '" + name + "' (expected I or II)");
      } else {
        check_keys(rs[i], path, {"name", "c_fp", "c_fn"});
        if (!rs[i].contains("name") || !rs[i]["name"].is_string()) throw ConfigError(path + ".name: required string");
        RiskConfig r{rs[i]["name"].get<std::string>(), 1.0, 1.0};
        if (rs[i].contains("c_fp")) r.c_fp = get_number(rs[i]["c_fp"], path + ".c_fp");
        if (rs[i].contains("c_fn")) r.c_fn = get_number(rs[i]["c_fn"], path + ".c_fn");
        cfg.risks.push_back(r);
      }
    }
  }
  cfg.validate();
  return cfg;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  return parse_config(j);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

/// Canonical JSON echo of a config (all defaults made explicit).
inline nlohmann::json config_to_json(const ExperimentConfig& cfg) {
  using nlohmann::json;
  json j;
  j["seed"] = cfg.seed;
  j["output_dir"] = cfg.output_dir;
  json d = {{"name", cfg.dataset.name}};
  if (cfg.dataset.synthetic) {
    const auto& s = *cfg.dataset.synthetic;
    d["synthetic"] = {{"n_per_class", s.n_per_class},
                      {"test_n_per_class", s.test_n_per_class},
                      {"means", s.means},
                      {"scale", s.scale},
                      {"label_flip_rate", s.label_flip_rate}};
  } else {
    d["train"] = cfg.dataset.train_path;
    d["test"] = cfg.dataset.test_path;
  }
  j["dataset"] = d;
  j["binarization"] = cfg.binarization ? json(cfg.binarization->to_binary) : json(nullptr);
  j["fractions"] = cfg.fractions;
  j["model"] = {{"hidden", cfg.hidden}};
  auto sgd = [](const SgdConfig& s) {
    return json{{"learning_rate", s.learning_rate}, {"momentum", s.momentum},
                {"batch_size", s.batch_size}, {"epochs", s.epochs}};
  };
  j["baseline"] = sgd(cfg.baseline);
  j["unlearning"] = sgd(cfg.unlearning);
  j["unlearning"]["alpha"] = cfg.alpha;
  j["unlearning"]["malignant_class"] = cfg.malignant_class;
  json methods = json::array();
  for (const auto& m : cfg.methods) {
    json o = {{"name", std::string(method_name(m.method))}};
    if (m.learning_rate) o["learning_rate"] = *m.learning_rate;
    if (m.momentum) o["momentum"] = *m.momentum;
    if (m.batch_size) o["batch_size"] = *m.batch_size;
    if (m.epochs) o["epochs"] = *m.epochs;
    if (m.alpha) o["alpha"] = *m.alpha;
    methods.push_back(o);
  }
  j["methods"] = methods;
  json risks = json::array();
  for (const auto& r : cfg.risks) risks.push_back({{"name", r.name}, {"c_fp", r.c_fp}, {"c_fn", r.c_fn}});
  j["risk"] = risks;
  return j;
}

}  // namespace ulab
