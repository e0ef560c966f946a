#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "steinfed/errors.hpp"
#include "steinfed/experiment.hpp"

namespace fs = std::filesystem;
using namespace steinfed;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};

void add_common(CLI::App* cmd, Common& c, bool config_required = true) {
  auto* opt = cmd->add_option("--config", c.config, "experiment config (JSON)");
  if (config_required) opt->required();
  cmd->add_option("--seed", c.seed, "override the config seed");
  cmd->add_option("--out", c.out, "override the output directory");
}

ExperimentConfig load(const Common& c) {
  ExperimentConfig cfg = load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (c.out) cfg.output.dir = *c.out;
  return cfg;
}

fs::path out_dir(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.output.dir);
  return fs::path(cfg.output.dir);
}

int last_round(const fs::path& metrics) {
  if (!fs::exists(metrics)) return -1;
  const auto records = read_metrics_csv(metrics.string());
  return records.empty() ? -1 : records.back().round;
}

void write_phase(const fs::path& dir, const PhaseResult& result, Phase phase, bool append) {
  write_metrics((dir / kMetricsFile).string(), result.log, append);
  write_transcript((dir / kTranscriptFile).string(), result.log, append);
  write_snapshot((dir / snapshot_file(phase)).string(), result.snapshot);
}

int cmd_learn(const Common& c) {
  const ExperimentConfig cfg = load(c);
  const fs::path dir = out_dir(cfg);
  const Problem problem = build_problem(cfg);
  std::ofstream(dir / "config.json", std::ios::binary) << dump_config(cfg) << '\n';
  write_phase(dir, run_learning(cfg, problem), Phase::kLearn, false);
  std::cout << "learned state written to " << (dir / snapshot_file(Phase::kLearn)).string() << "\n";
  return 0;
}

int cmd_unlearn(const Common& c) {
  const ExperimentConfig cfg = load(c);
  const fs::path dir = out_dir(cfg);
  const fs::path snap = dir / snapshot_file(Phase::kLearn);
  if (!fs::exists(snap)) {
    std::cerr << "error: no learned state found at " << snap.string() << " (run 'learn' first)\n";
    return 1;
  }
  const Problem problem = build_problem(cfg);
  const Snapshot learned = read_snapshot(snap.string());
  const bool append = fs::exists(dir / kMetricsFile);
  write_phase(dir, run_unlearning(cfg, problem, learned), Phase::kUnlearn, append);
  std::cout << "unlearned state written to " << (dir / snapshot_file(Phase::kUnlearn)).string()
            << "\n";
  return 0;
}

int cmd_retrain(const Common& c) {
  const ExperimentConfig cfg = load(c);
  const fs::path dir = out_dir(cfg);
  const Problem problem = build_problem(cfg);
  const int first = last_round(dir / kMetricsFile) + 1;
  write_phase(dir, run_retraining(cfg, problem, first), Phase::kRetrain, first > 0);
  std::cout << "retrained state written to " << (dir / snapshot_file(Phase::kRetrain)).string()
            << "\n";
  return 0;
}

Phase parse_phase(const std::string& name) {
  if (name == "unlearn") return Phase::kUnlearn;
  if (name == "retrain") return Phase::kRetrain;
  return Phase::kLearn;
}

int cmd_eval(const Common& c, const std::string& snapshot_path, const std::string& phase_arg) {
  const ExperimentConfig cfg = load(c);
  std::string path = snapshot_path;
  if (path.empty()) path = (fs::path(cfg.output.dir) / snapshot_file(parse_phase(phase_arg))).string();
  // Without --phase, the snapshot name (learn.snap, unlearn.snap, ...) decides.
  const Phase phase = parse_phase(phase_arg.empty() ? fs::path(path).stem().string() : phase_arg);
  if (!fs::exists(path)) {
    std::cerr << "error: snapshot not found: " << path << "\n";
    return 1;
  }
  const Problem problem = build_problem(cfg);
  const RoundLog log = evaluate_snapshot(cfg, problem, read_snapshot(path), phase);
  std::cout << kMetricsHeader << "\n" << format_metric_row(log.record) << "\n";
  return 0;
}

std::string number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

int cmd_export(const std::string& metrics_path, const std::string& output) {
  const auto records = read_metrics_csv(metrics_path);
  std::ofstream file;
  std::ostream* out = &std::cout;
  if (!output.empty()) {
    file.open(output, std::ios::binary);
    if (!file) throw DataError("cannot write '" + output + "'");
    out = &file;
  }
  *out << "round,forgotten_acc,retained_acc,kl,wall_ms\n";
  for (const auto& r : records) {
    *out << r.round << ',' << number(r.forgotten_acc) << ',' << number(r.retained_acc) << ','
         << number(r.kl) << ',' << number(r.wall_ms) << '\n';
  }
  return 0;
}

int cmd_run(const Common& c) {
  const ExperimentConfig cfg = load(c);
  const auto records = run_experiment(cfg);
  std::cout << records.size() << " records written to "
            << (fs::path(cfg.output.dir) / kMetricsFile).string() << "\n";
  if (cfg.experiment == ExperimentKind::kMultilabel &&
      (cfg.method == Method::kForgetSvgd || cfg.method == Method::kRetrain)) {
    const int classes = cfg.multilabel.source == DataSource::kIdx ? 10 : cfg.multilabel.synthetic.classes;
    const ForgettingSummary s = summarize_forgetting(records, classes);
    std::cout << "reference retained accuracy " << s.reference_retained << "; rounds to forget "
              << (cfg.method == Method::kForgetSvgd ? s.unlearn_rounds : s.retrain_iterations)
              << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Particle-based federated learning and unlearning simulator"};
  app.require_subcommand(1);

  Common learn_opts, unlearn_opts, retrain_opts, eval_opts, run_opts;
  auto* learn = app.add_subcommand("learn", "federated learning from the prior");
  add_common(learn, learn_opts);
  auto* unlearn = app.add_subcommand("unlearn", "unlearn the forget set from the learned state");
  add_common(unlearn, unlearn_opts);
  auto* retrain = app.add_subcommand("retrain", "retrain from scratch without the forget set");
  add_common(retrain, retrain_opts);

  auto* eval = app.add_subcommand("eval", "recompute metrics from a snapshot");
  add_common(eval, eval_opts);
  std::string snapshot_path, phase;
  eval->add_option("--snapshot", snapshot_path, "snapshot file (default: <out>/<phase>.snap)");
  eval->add_option("--phase", phase, "learn, unlearn or retrain (selects the KL target)")
      ->check(CLI::IsMember({"learn", "unlearn", "retrain"}));

  auto* exporter = app.add_subcommand("export-plot-data", "per-round CSV for plotting");
  std::string metrics_path, export_out;
  exporter->add_option("--metrics", metrics_path, "metrics CSV")->required();
  exporter->add_option("--output", export_out, "output file (default: stdout)");

  auto* run = app.add_subcommand("run", "learn, then unlearn or retrain as the method requires");
  add_common(run, run_opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*learn) return cmd_learn(learn_opts);
    if (*unlearn) return cmd_unlearn(unlearn_opts);
    if (*retrain) return cmd_retrain(retrain_opts);
    if (*eval) return cmd_eval(eval_opts, snapshot_path, phase);
    if (*exporter) return cmd_export(metrics_path, export_out);
    if (*run) return cmd_run(run_opts);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
