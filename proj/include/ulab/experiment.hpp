#pragma once

// End-to-end pipeline: prepare data -> train theta_o -> for each forget
// fraction build the balanced split, run retrain first, then every other
// configured method -> evaluate -> persist.
//
// Output directory layout:
//   baseline.uck                       theta_o
//   cells/<fraction>/<method>.uck      theta_u per cell
//   results.csv / results.json         one row per successful cell
//   risk_bars.csv / gap_scatter.csv    plot data
//   artifacts.json                     config echo, seeds, reports, errors, timing

#include <algorithm>
#include <array>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ulab/config.hpp"
#include "ulab/data.hpp"
#include "ulab/error.hpp"
#include "ulab/io.hpp"
#include "ulab/metrics.hpp"
#include "ulab/model.hpp"
#include "ulab/seed.hpp"
#include "ulab/training.hpp"
#include "ulab/unlearn.hpp"

namespace ulab {

// ---------------------------------------------------------------------------
// Seeds

inline std::uint64_t data_seed(const ExperimentConfig& c, const char* part) {
  return hash64(c.seed, c.dataset.name, part);
}
inline std::uint64_t baseline_seed(const ExperimentConfig& c) { return hash64(c.seed, c.dataset.name, "baseline"); }
inline std::uint64_t split_seed(const ExperimentConfig& c, double fraction) {
  return hash64(c.seed, c.dataset.name, fraction, "split");
}
inline std::uint64_t cell_seed(const ExperimentConfig& c, double fraction, Method m) {
  return hash64(c.seed, c.dataset.name, fraction, method_name(m));
}

// ---------------------------------------------------------------------------
// Data preparation

struct PreparedData {
  Dataset train;
  Dataset test;
  MlpConfig model;
};

inline PreparedData prepare_data(const ExperimentConfig& cfg) {
  PreparedData p;
  if (cfg.dataset.synthetic) {
    const auto& s = *cfg.dataset.synthetic;
    p.train = synth_gaussians({s.n_per_class, s.means, s.scale, s.label_flip_rate, data_seed(cfg, "train")});
    p.test = synth_gaussians({s.test_n_per_class, s.means, s.scale, s.label_flip_rate, data_seed(cfg, "test")});
  } else {
    p.train = load_dataset(cfg.dataset.train_path);
    p.test = load_dataset(cfg.dataset.test_path);
  }
  if (cfg.binarization) {
    p.train = binarize(p.train, *cfg.binarization);
    p.test = binarize(p.test, *cfg.binarization);
  }
  p.train.validate();
  p.test.validate();
  if (p.train.num_classes != 2 || p.test.num_classes > 2)
    throw DataError("dataset '" + cfg.dataset.name + "' has " + std::to_string(p.train.num_classes) +
                    " classes; configure a binarization map");
  p.test.num_classes = 2;
  if (p.train.dim() != p.test.dim()) throw DataError("train and test feature widths differ");
  p.model.layer_sizes.push_back(p.train.dim());
  for (std::size_t h : cfg.hidden) p.model.layer_sizes.push_back(h);
  p.model.layer_sizes.push_back(2);
  return p;
}

struct ForgetSplit {
  SplitResult indices;
  Dataset forget;
  Dataset retain;
};

inline ForgetSplit make_split(const ExperimentConfig& cfg, const Dataset& train, double fraction) {
  ForgetSplit s;
  s.indices = balanced_split(train, {fraction, split_seed(cfg, fraction)});
  s.forget = subset(train, s.indices.forget_indices);
  s.retain = subset(train, s.indices.retain_indices);
  return s;
}

inline ParamVector train_baseline(const ExperimentConfig& cfg, const PreparedData& data) {
  SgdConfig sgd = cfg.baseline;
  sgd.seed = baseline_seed(cfg);
  return train(init_params(data.model, sgd.seed), data.model, data.train, sgd,
               LossSpec{LossVariant::weighted_ce, class_weights(data.train), 1.0});
}

// ---------------------------------------------------------------------------
// Artifacts

struct CellResult {
  std::string dataset;
  double fraction = 0.0;
  Method method = Method::retrain;
  std::uint64_t seed = 0;
  std::optional<MetricsReport> report;
  std::optional<std::string> error;
  std::string checkpoint;  // relative to output_dir
  double mask_seconds = 0.0, unlearn_seconds = 0.0, eval_seconds = 0.0;
};

struct RunArtifacts {
  nlohmann::json config;
  std::string dataset;
  std::vector<double> fractions;
  std::vector<std::string> risk_names;
  std::uint64_t baseline_seed = 0;
  std::string baseline_checkpoint;
  double baseline_seconds = 0.0;
  std::vector<CellResult> cells;
  std::vector<std::string> warnings;
};

inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  std::array<char, 32> buf{};
  auto [p, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), p);
}

inline std::string fraction_dir(double fraction) { return "cells/" + format_number(fraction); }

inline nlohmann::json report_to_json(const MetricsReport& r) {
  nlohmann::json j = {{"specificity", r.specificity}, {"recall", r.recall}, {"bac", r.bac},   {"auc", r.auc},
                      {"ubac", r.ubac},               {"rbac", r.rbac},     {"tbac", r.tbac}, {"mia", r.mia}};
  for (const auto& risk : r.risks) j["risk_" + risk.name] = risk.value;
  j["tp"] = r.test_confusion.tp;
  j["fp"] = r.test_confusion.fp;
  j["tn"] = r.test_confusion.tn;
  j["fn"] = r.test_confusion.fn;
  j["single_class"] = r.single_class;
  if (r.gap) {
    j["gap_mean"] = r.gap->mean;
    j["gap_ubac"] = r.gap->ubac;
    j["gap_rbac"] = r.gap->rbac;
    j["gap_tbac"] = r.gap->tbac;
    j["gap_mia"] = r.gap->mia;
    j["gap_specificity"] = r.gap->specificity;
    j["gap_recall"] = r.gap->recall;
    j["gap_bac"] = r.gap->bac;
    j["gap_auc"] = r.gap->auc;
  }
  return j;
}

/// JSON has no NaN; undefined rates are written as null and read back as NaN.
inline double number_or_nan(const nlohmann::json& j, const std::string& key) {
  const auto& v = j.at(key);
  return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
}

inline MetricsReport report_from_json(const nlohmann::json& j, const std::vector<std::string>& risk_names) {
  MetricsReport r;
  r.specificity = number_or_nan(j, "specificity");
  r.recall = number_or_nan(j, "recall");
  r.bac = number_or_nan(j, "bac");
  r.auc = number_or_nan(j, "auc");
  r.ubac = number_or_nan(j, "ubac");
  r.rbac = number_or_nan(j, "rbac");
  r.tbac = number_or_nan(j, "tbac");
  r.mia = number_or_nan(j, "mia");
  for (const auto& name : risk_names) r.risks.push_back({name, number_or_nan(j, "risk_" + name)});
  r.test_confusion = {j.at("tp").get<std::size_t>(), j.at("fp").get<std::size_t>(), j.at("tn").get<std::size_t>(),
                      j.at("fn").get<std::size_t>()};
  r.single_class = j.at("single_class").get<bool>();
  if (j.contains("gap_mean")) {
    GapReport g;
    g.mean = number_or_nan(j, "gap_mean");
    g.ubac = number_or_nan(j, "gap_ubac");
    g.rbac = number_or_nan(j, "gap_rbac");
    g.tbac = number_or_nan(j, "gap_tbac");
    g.mia = number_or_nan(j, "gap_mia");
    g.specificity = number_or_nan(j, "gap_specificity");
    g.recall = number_or_nan(j, "gap_recall");
    g.bac = number_or_nan(j, "gap_bac");
    g.auc = number_or_nan(j, "gap_auc");
    r.gap = g;
  }
  return r;
}

inline nlohmann::json artifacts_to_json(const RunArtifacts& a) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : a.cells) {
    nlohmann::json cj = {{"dataset", c.dataset},
                         {"fraction", c.fraction},
                         {"method", std::string(method_name(c.method))},
                         {"seed", c.seed},
                         {"checkpoint", c.checkpoint},
                         {"timing", {{"mask", c.mask_seconds}, {"unlearn", c.unlearn_seconds}, {"eval", c.eval_seconds}}}};
    cj["report"] = c.report ? report_to_json(*c.report) : nlohmann::json(nullptr);
    cj["error"] = c.error ? nlohmann::json(*c.error) : nlohmann::json(nullptr);
    cells.push_back(cj);
  }
  return {{"config", a.config},
          {"dataset", a.dataset},
          {"fractions", a.fractions},
          {"risk_names", a.risk_names},
          {"seeds", {{"global", a.config.value("seed", std::uint64_t{0})}, {"baseline", a.baseline_seed}}},
          {"baseline", {{"checkpoint", a.baseline_checkpoint}, {"timing", {{"train", a.baseline_seconds}}}}},
          {"cells", cells},
          {"warnings", a.warnings}};
}

inline RunArtifacts artifacts_from_json(const nlohmann::json& j) {
  try {
    RunArtifacts a;
    a.config = j.at("config");
    a.dataset = j.at("dataset").get<std::string>();
    a.fractions = j.at("fractions").get<std::vector<double>>();
    a.risk_names = j.at("risk_names").get<std::vector<std::string>>();
    a.baseline_seed = j.at("seeds").at("baseline").get<std::uint64_t>();
    a.baseline_checkpoint = j.at("baseline").at("checkpoint").get<std::string>();
    a.baseline_seconds = j.at("baseline").at("timing").at("train").get<double>();
    a.warnings = j.at("warnings").get<std::vector<std::string>>();
    for (const auto& cj : j.at("cells")) {
      CellResult c;
      c.dataset = cj.at("dataset").get<std::string>();
      c.fraction = cj.at("fraction").get<double>();
      const auto m = parse_method(cj.at("method").get<std::string>());
      if (!m) throw ParseError("artifacts: unknown method '" + cj.at("method").get<std::string>() + "'");
      c.method = *m;
      c.seed = cj.at("seed").get<std::uint64_t>();
      c.checkpoint = cj.at("checkpoint").get<std::string>();
      c.mask_seconds = cj.at("timing").at("mask").get<double>();
      c.unlearn_seconds = cj.at("timing").at("unlearn").get<double>();
      c.eval_seconds = cj.at("timing").at("eval").get<double>();
      if (!cj.at("report").is_null()) c.report = report_from_json(cj.at("report"), a.risk_names);
      if (!cj.at("error").is_null()) c.error = cj.at("error").get<std::string>();
      a.cells.push_back(std::move(c));
    }
    return a;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("artifacts: ") + e.what());
  }
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

inline RunArtifacts load_artifacts(const std::filesystem::path& out_dir) {
  const auto path = out_dir / "artifacts.json";
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  try {
    return artifacts_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("'" + path.string() + "': " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Report emission

/// Column order of results.csv: fixed prefix, one risk_<name> per configured
/// risk, then the gap columns.
inline std::vector<std::string> result_columns(const std::vector<std::string>& risk_names) {
  std::vector<std::string> cols = {"dataset", "fraction", "method", "specificity", "recall", "bac",
                                   "auc",     "ubac",     "rbac",   "tbac",        "mia"};
  for (const auto& r : risk_names) cols.push_back("risk_" + r);
  for (const char* g : {"gap_mean", "gap_ubac", "gap_rbac", "gap_tbac", "gap_mia"}) cols.push_back(g);
  return cols;
}

inline std::vector<const CellResult*> reported_cells(const RunArtifacts& a) {
  std::vector<const CellResult*> out;
  for (const auto& c : a.cells)
    if (c.report) out.push_back(&c);
  return out;
}

inline std::string results_csv(const RunArtifacts& a) {
  std::string out;
  const auto cols = result_columns(a.risk_names);
  for (std::size_t i = 0; i < cols.size(); ++i) out += (i ? "," : "") + cols[i];
  out += "\n";
  for (const CellResult* c : reported_cells(a)) {
    const auto& r = *c->report;
    std::vector<std::string> row = {c->dataset, format_number(c->fraction), std::string(method_name(c->method)),
                                    format_number(r.specificity), format_number(r.recall), format_number(r.bac),
                                    format_number(r.auc), format_number(r.ubac), format_number(r.rbac),
                                    format_number(r.tbac), format_number(r.mia)};
    for (const auto& risk : r.risks) row.push_back(format_number(risk.value));
    if (r.gap) {
      for (double v : {r.gap->mean, r.gap->ubac, r.gap->rbac, r.gap->tbac, r.gap->mia}) row.push_back(format_number(v));
    } else {
      row.insert(row.end(), 5, "");
    }
    for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + row[i];
    out += "\n";
  }
  return out;
}

inline nlohmann::json results_json(const RunArtifacts& a) {
  nlohmann::json rows = nlohmann::json::array();
  for (const CellResult* c : reported_cells(a)) {
    const auto& r = *c->report;
    nlohmann::json row = {{"dataset", c->dataset},   {"fraction", c->fraction}, {"method", std::string(method_name(c->method))},
                          {"specificity", r.specificity}, {"recall", r.recall},   {"bac", r.bac},
                          {"auc", r.auc},            {"ubac", r.ubac},         {"rbac", r.rbac},
                          {"tbac", r.tbac},          {"mia", r.mia}};
    for (const auto& risk : r.risks) row["risk_" + risk.name] = risk.value;
    if (r.gap) {
      row["gap_mean"] = r.gap->mean;
      row["gap_ubac"] = r.gap->ubac;
      row["gap_rbac"] = r.gap->rbac;
      row["gap_tbac"] = r.gap->tbac;
      row["gap_mia"] = r.gap->mia;
    }
    rows.push_back(row);
  }
  return rows;
}

enum class ReportFormat { csv, json, both };

inline void emit_report(const RunArtifacts& a, const std::filesystem::path& out_dir, ReportFormat format) {
  std::filesystem::create_directories(out_dir);
  if (format != ReportFormat::json) write_text(out_dir / "results.csv", results_csv(a));
  if (format != ReportFormat::csv) write_text(out_dir / "results.json", results_json(a).dump(2) + "\n");
}

inline std::optional<double> named_risk(const MetricsReport& r, const std::string& name) {
  for (const auto& v : r.risks)
    if (v.name == name) return v.value;
  return std::nullopt;
}

/// risk_bars.csv (method, fraction, risk_I, risk_II) and gap_scatter.csv
/// (method, fraction, gap_mean, risk_I, risk_II). Risk columns follow the
/// configured risk presets.
inline void emit_plot_data(const RunArtifacts& a, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::string bars = "method,fraction", scatter = "method,fraction,gap_mean";
  for (const auto& n : a.risk_names) {
    bars += ",risk_" + n;
    scatter += ",risk_" + n;
  }
  bars += "\n";
  scatter += "\n";
  for (const CellResult* c : reported_cells(a)) {
    const auto& r = *c->report;
    const std::string prefix = std::string(method_name(c->method)) + "," + format_number(c->fraction);
    std::string risks;
    for (const auto& n : a.risk_names) risks += "," + format_number(named_risk(r, n).value_or(std::nan("")));
    bars += prefix + risks + "\n";
    scatter += prefix + "," + (r.gap ? format_number(r.gap->mean) : std::string()) + risks + "\n";
  }
  write_text(out_dir / "risk_bars.csv", bars);
  write_text(out_dir / "gap_scatter.csv", scatter);
}

// ---------------------------------------------------------------------------
// Pipeline

struct RunOptions {
  bool write_files = true;
  ReportFormat format = ReportFormat::both;
  bool log_progress = false;  // one line per phase on std::clog
};

/// Evaluate theta_u for one cell against the given split.
inline MetricsReport evaluate_cell(const ExperimentConfig& cfg, const MlpConfig& model, const ParamVector& params,
                                   const ForgetSplit& split, const Dataset& test) {
  return evaluate(Model{model, params}, EvalSets{split.forget, split.retain, test}, cfg.risks, 1);
}

inline RunArtifacts run_experiment(const ExperimentConfig& cfg, const RunOptions& opts = {}) {
  using clock = std::chrono::steady_clock;
  auto seconds_since = [](clock::time_point t0) { return std::chrono::duration<double>(clock::now() - t0).count(); };
  auto log = [&](const std::string& msg) {
    if (opts.log_progress) std::clog << "[ulab] " << msg << "\n";
  };
  cfg.validate();
  const std::filesystem::path out_dir = cfg.output_dir;
  if (opts.write_files) std::filesystem::create_directories(out_dir);

  RunArtifacts art;
  art.config = config_to_json(cfg);
  art.dataset = cfg.dataset.name;
  art.fractions = cfg.fractions;
  for (const auto& r : cfg.risks) art.risk_names.push_back(r.name);

  const PreparedData data = prepare_data(cfg);
  auto t0 = clock::now();
  log("training baseline on " + std::to_string(data.train.size()) + " samples");
  const ParamVector theta_o = train_baseline(cfg, data);
  art.baseline_seconds = seconds_since(t0);
  art.baseline_seed = baseline_seed(cfg);
  art.baseline_checkpoint = "baseline.uck";
  if (opts.write_files) save_checkpoint({data.model, theta_o}, (out_dir / art.baseline_checkpoint).string());

  const bool has_retrain = std::any_of(cfg.methods.begin(), cfg.methods.end(),
                                       [](const MethodSpec& m) { return m.method == Method::retrain; });
  if (!has_retrain) art.warnings.push_back("retrain not configured: GAP fields omitted");

  for (double fraction : cfg.fractions) {
    const ForgetSplit split = make_split(cfg, data.train, fraction);
    // retrain first so every other cell can be compared against it
    std::vector<MethodSpec> order;
    for (const auto& m : cfg.methods)
      if (m.method == Method::retrain) order.push_back(m);
    for (const auto& m : cfg.methods)
      if (m.method != Method::retrain) order.push_back(m);

    std::optional<MetricsReport> reference;
    for (const auto& spec : order) {
      CellResult cell;
      cell.dataset = cfg.dataset.name;
      cell.fraction = fraction;
      cell.method = spec.method;
      cell.seed = cell_seed(cfg, fraction, spec.method);
      const std::string label = std::string(method_name(spec.method)) + " @ " + format_number(fraction);
      try {
        log("unlearning " + label);
        const auto ucfg = cfg.unlearn_config(spec, cell.seed);
        const UnlearnResult res = unlearn_detailed(theta_o, data.model, split.forget, split.retain, ucfg);
        cell.mask_seconds = res.mask_seconds;
        cell.unlearn_seconds = res.unlearn_seconds;
        const auto te = clock::now();
        MetricsReport report = evaluate_cell(cfg, data.model, res.params, split, data.test);
        cell.eval_seconds = seconds_since(te);
        if (spec.method == Method::retrain) reference = report;
        if (reference) report.gap = metric_gap(report, *reference);
        cell.report = report;
        cell.checkpoint = fraction_dir(fraction) + "/" + std::string(method_name(spec.method)) + ".uck";
        if (opts.write_files) {
          std::filesystem::create_directories(out_dir / fraction_dir(fraction));
          save_checkpoint({data.model, res.params}, (out_dir / cell.checkpoint).string());
        }
      } catch (const std::exception& e) {
        cell.error = e.what();
        cell.report.reset();
        cell.checkpoint.clear();
        log("cell " + label + " failed: " + e.what());
        if (spec.method == Method::retrain)
          art.warnings.push_back("retrain failed at fraction " + format_number(fraction) + ": GAP fields omitted");
      }
      art.cells.push_back(std::move(cell));
    }
  }

  if (opts.write_files) {
    emit_report(art, out_dir, opts.format);
    emit_plot_data(art, out_dir);
    write_text(out_dir / "artifacts.json", artifacts_to_json(art).dump(2) + "\n");
  }
  return art;
}

}  // namespace ulab
