#pragma once

// Command-line front end.
//
//   ulab train   [--config c.json] [--seed N] [--out DIR]
//   ulab unlearn [--config c.json] --method M --fraction F [--checkpoint P] [--seed N] [--out DIR]
//   ulab eval    [--config c.json] --checkpoint P --fraction F [--method M] [--seed N]
//   ulab run     [--config c.json] [--seed N] [--out DIR] [--format csv|json] [--method M] [--fraction F]
//   ulab report  [--out DIR] [--format csv|json]
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.
// Diagnostics go to the error stream; reports go to files or the output stream.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ulab/config.hpp"
#include "ulab/error.hpp"
#include "ulab/experiment.hpp"
#include "ulab/io.hpp"

namespace ulab {

namespace detail {

struct CliOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string format;
  std::string method;
  std::optional<double> fraction;
  std::string checkpoint;
};

inline ExperimentConfig resolve_config(const CliOptions& o) {
  ExperimentConfig cfg = o.config_path.empty() ? ExperimentConfig{} : load_config(o.config_path);
  if (o.seed) cfg.seed = *o.seed;
  if (!o.out_dir.empty()) cfg.output_dir = o.out_dir;
  cfg.validate();
  return cfg;
}

inline Method require_method(const CliOptions& o) {
  if (o.method.empty()) throw ConfigError("--method is required");
  const auto m = parse_method(o.method);
  if (!m) throw ConfigError("--method: unknown method '" + o.method + "'");
  return *m;
}

inline double require_fraction(const CliOptions& o) {
  if (!o.fraction) throw ConfigError("--fraction is required");
  if (!(*o.fraction > 0.0 && *o.fraction < 1.0)) throw ConfigError("--fraction: must lie in (0, 1)");
  return *o.fraction;
}

inline ReportFormat parse_format(const std::string& f) {
  if (f.empty()) return ReportFormat::both;
  if (f == "csv") return ReportFormat::csv;
  if (f == "json") return ReportFormat::json;
  throw ConfigError("--format: expected csv or json, got '" + f + "'");
}

inline MethodSpec method_spec(const ExperimentConfig& cfg, Method m) {
  for (const auto& s : cfg.methods)
    if (s.method == m) return s;
  return MethodSpec{m};
}

inline Checkpoint load_compatible(const std::string& path, const MlpConfig& model) {
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.config != model) throw DataError("checkpoint '" + path + "' does not match the configured model");
  return ckpt;
}

inline int cmd_train(const CliOptions& o, std::ostream& out) {
  const auto cfg = resolve_config(o);
  const auto data = prepare_data(cfg);
  const auto theta = train_baseline(cfg, data);
  const std::filesystem::path dir = cfg.output_dir;
  std::filesystem::create_directories(dir);
  save_checkpoint({data.model, theta}, (dir / "baseline.uck").string());

  const Model m{data.model, theta};
  const auto cm = model_confusion(m, data.test);
  const Tensor probs = predict_proba(theta, data.model, data.test.features);
  std::vector<double> scores(probs.rows());
  for (std::size_t i = 0; i < scores.size(); ++i) scores[i] = probs.at(i, 1);
  nlohmann::json j = {{"specificity", specificity(cm)}, {"recall", recall(cm)},
                      {"bac", balanced_accuracy(cm)},   {"auc", auc(scores, data.test.labels)}};
  for (const auto& r : cfg.risks) j["risk_" + r.name] = global_risk(cm, r, cm.total());
  out << j.dump(2) << "\n";
  return 0;
}

inline int cmd_unlearn(const CliOptions& o, std::ostream& out) {
  const auto cfg = resolve_config(o);
  const Method method = require_method(o);
  const double fraction = require_fraction(o);
  const auto data = prepare_data(cfg);
  const std::filesystem::path dir = cfg.output_dir;
  const std::string ckpt_path = o.checkpoint.empty() ? (dir / "baseline.uck").string() : o.checkpoint;
  const auto baseline = load_compatible(ckpt_path, data.model);
  const auto split = make_split(cfg, data.train, fraction);
  const auto ucfg = cfg.unlearn_config(method_spec(cfg, method), cell_seed(cfg, fraction, method));
  const auto params = unlearn(baseline.params, data.model, split.forget, split.retain, ucfg);
  std::filesystem::create_directories(dir / fraction_dir(fraction));
  save_checkpoint({data.model, params},
                  (dir / fraction_dir(fraction) / (std::string(method_name(method)) + ".uck")).string());
  out << report_to_json(evaluate_cell(cfg, data.model, params, split, data.test)).dump(2) << "\n";
  return 0;
}

inline int cmd_eval(const CliOptions& o, std::ostream& out) {
  const auto cfg = resolve_config(o);
  if (o.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  const double fraction = require_fraction(o);
  const auto data = prepare_data(cfg);
  const auto ckpt = load_compatible(o.checkpoint, data.model);
  const auto split = make_split(cfg, data.train, fraction);
  auto j = report_to_json(evaluate_cell(cfg, data.model, ckpt.params, split, data.test));
  if (!o.method.empty()) j["method"] = std::string(method_name(require_method(o)));
  j["fraction"] = fraction;
  out << j.dump(2) << "\n";
  return 0;
}

inline int cmd_run(const CliOptions& o, std::ostream& err) {
  auto cfg = resolve_config(o);
  if (o.fraction) cfg.fractions = {require_fraction(o)};
  if (!o.method.empty()) cfg.methods = {method_spec(cfg, require_method(o))};
  cfg.validate();
  RunOptions opts;
  opts.format = parse_format(o.format);
  const auto art = run_experiment(cfg, opts);
  for (const auto& w : art.warnings) err << "warning: " << w << "\n";
  int failures = 0;
  for (const auto& c : art.cells) {
    if (c.error) {
      err << "error: " << method_name(c.method) << " @ " << format_number(c.fraction) << ": " << *c.error << "\n";
      ++failures;
    }
  }
  return failures ? 2 : 0;
}

inline int cmd_report(const CliOptions& o) {
  const std::filesystem::path dir = o.out_dir.empty() ? "out" : o.out_dir;
  const auto format = parse_format(o.format);
  const auto art = load_artifacts(dir);
  emit_report(art, dir, format);
  emit_plot_data(art, dir);
  return 0;
}

}  // namespace detail

inline int run_cli(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Machine-unlearning laboratory with clinical-risk evaluation", "ulab"};
  app.require_subcommand(1);
  detail::CliOptions o;
  auto add_common = [&](CLI::App* sub, bool with_config) {
    if (with_config) {
      sub->add_option("--config", o.config_path, "experiment configuration (JSON)");
      sub->add_option("--seed", o.seed, "global seed, overrides the config");
    }
    sub->add_option("--out", o.out_dir, "output directory, overrides the config");
  };
  auto* train = app.add_subcommand("train", "train the baseline model only");
  add_common(train, true);
  auto* unl = app.add_subcommand("unlearn", "run one unlearning method from a baseline checkpoint");
  add_common(unl, true);
  unl->add_option("--method", o.method, "retrain, fine_tune, random_label, salun or salun_cra");
  unl->add_option("--fraction", o.fraction, "forget fraction");
  unl->add_option("--checkpoint", o.checkpoint, "baseline checkpoint (default <out>/baseline.uck)");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a configured split");
  add_common(eval, true);
  eval->add_option("--checkpoint", o.checkpoint, "checkpoint to evaluate");
  eval->add_option("--fraction", o.fraction, "forget fraction defining the split");
  eval->add_option("--method", o.method, "method label for the output");
  auto* run = app.add_subcommand("run", "run the full experiment");
  add_common(run, true);
  run->add_option("--format", o.format, "csv or json (default: both)");
  run->add_option("--method", o.method, "restrict to a single method");
  run->add_option("--fraction", o.fraction, "restrict to a single forget fraction");
  auto* report = app.add_subcommand("report", "re-emit results from saved artifacts");
  add_common(report, false);
  report->add_option("--format", o.format, "csv or json (default: both)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (train->parsed()) return detail::cmd_train(o, out);
    if (unl->parsed()) return detail::cmd_unlearn(o, out);
    if (eval->parsed()) return detail::cmd_eval(o, out);
    if (run->parsed()) return detail::cmd_run(o, err);
    if (report->parsed()) return detail::cmd_report(o);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace ulab
