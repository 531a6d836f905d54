// mtadvlab: train small multi-task models, attack them, sweep attack and
// architecture settings, and correlate vulnerability metrics across
// experimental settings.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "mtadv/harness.hpp"
#include "mtadv/vuln.hpp"

namespace fs = std::filesystem;
using namespace mtadv;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  long long seed = -1;
  std::vector<double> eps;
  std::vector<std::size_t> steps;
  std::string norm;
  std::string variant;
  std::string tasks;
};

ExperimentConfig load_config(const CommonOpts& o) {
  ExperimentConfig cfg = ExperimentConfig::from_file(o.config_path);
  if (o.seed >= 0) cfg.seed = static_cast<std::uint64_t>(o.seed);
  if (!o.out_dir.empty()) cfg.output_dir = o.out_dir;
  if (!o.eps.empty()) cfg.sweep.epsilon = o.eps;
  if (!o.steps.empty()) cfg.sweep.steps = o.steps;
  if (!o.norm.empty()) {
    cfg.sweep.norms = {pnorm_from_string(o.norm)};
    for (AttackConfig& a : cfg.attacks) a.p = pnorm_from_string(o.norm);
  }
  if (!o.variant.empty()) {
    for (AttackConfig& a : cfg.attacks) a.variant = variant_from_string(o.variant);
  }
  return cfg;
}

std::vector<std::string> split_ids(const std::string& csv) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : csv) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

void add_common(CLI::App* cmd, CommonOpts& o, bool config_required = true) {
  cmd->add_option("--config", o.config_path, "experiment config file")
      ->required(config_required);
  cmd->add_option("--seed", o.seed, "override the config seed");
  cmd->add_option("--out", o.out_dir, "output directory");
  cmd->add_option("--eps", o.eps, "epsilon sweep values")->delimiter(',');
  cmd->add_option("--steps", o.steps, "attack step counts")->delimiter(',');
  cmd->add_option("--norm", o.norm, "attack norm (l2 or linf)");
  cmd->add_option("--variant", o.variant, "attack variant (fgsm, pgd, wgd, apgd)");
  cmd->add_option("--tasks", o.tasks, "comma-separated task ids");
}

int cmd_train(const CommonOpts& o) {
  ExperimentConfig cfg = load_config(o);
  fs::create_directories(cfg.output_dir);
  SynthDataset ds = cfg.dataset_path.empty() ? generate_dataset(cfg.dataset)
                                             : load_dataset(cfg.dataset_path);
  std::vector<std::size_t> dims;
  dims.push_back(ds.spec.input_dim);
  for (std::size_t d : cfg.encoder) dims.push_back(d);
  MultiTaskModel model =
      build_model(dims, model_tasks_for(ds.spec), cfg.weights, cfg.train.seed);
  TrainResult tr = train(model, ds.examples, cfg.train);

  const std::string ckpt = (fs::path(cfg.output_dir) / "model.ckpt").string();
  save_model(tr.model, ckpt, cfg.train.seed);
  const std::string data_path = (fs::path(cfg.output_dir) / "dataset.bin").string();
  save_dataset(ds, data_path);

  std::printf("trained %zu epochs (%zu sgd steps)\n", cfg.train.epochs, tr.steps);
  if (!tr.epoch_loss.empty())
    std::printf("joint loss: %.6g -> %.6g\n", tr.epoch_loss.front(),
                tr.epoch_loss.back());
  std::printf("checkpoint: %s\ndataset: %s\n", ckpt.c_str(), data_path.c_str());
  for (const std::string& id : tr.model.task_ids())
    std::printf("clean_error[%s] = %.6g\n", id.c_str(),
                clean_error(tr.model, ds.examples, id));
  return 0;
}

int cmd_attack(const CommonOpts& o) {
  ExperimentConfig cfg = load_config(o);
  fs::create_directories(cfg.output_dir);
  SynthDataset ds = cfg.dataset_path.empty() ? generate_dataset(cfg.dataset)
                                             : load_dataset(cfg.dataset_path);
  std::vector<std::size_t> dims;
  dims.push_back(ds.spec.input_dim);
  for (std::size_t d : cfg.encoder) dims.push_back(d);
  MultiTaskModel model =
      build_model(dims, model_tasks_for(ds.spec), cfg.weights, cfg.train.seed);
  TrainResult tr = train(model, ds.examples, cfg.train);

  AttackConfig atk = cfg.attacks.front();
  if (!o.eps.empty()) atk.epsilon = o.eps.front();
  if (!o.steps.empty()) atk.steps = o.steps.front();
  std::set<std::string> attacked;
  if (!o.tasks.empty()) {
    for (const std::string& id : split_ids(o.tasks)) attacked.insert(id);
  } else {
    for (const std::string& id : tr.model.task_ids()) attacked.insert(id);
  }
  atk.attacked = attacked;
  atk.seed = cfg.seed;

  ReportOptions opts;
  opts.with_second_order = (atk.p == PNorm::l2);
  VulnerabilityReport rep =
      build_report(tr.model, ds.examples, attacked, atk, opts);
  const std::string report_path = (fs::path(cfg.output_dir) / "report.csv").string();
  {
    std::ofstream os(report_path, std::ios::binary);
    os << report_to_csv(rep);
  }

  AttackConfig first = atk;
  first.seed = atk.seed ^ 0ULL;
  const AttackTrace trace =
      run_attack(tr.model, ds.examples[0].x, ds.examples[0].targets, first);
  const std::string trace_path = (fs::path(cfg.output_dir) / "trace0.csv").string();
  {
    std::ofstream os(trace_path, std::ios::binary);
    os << trace_to_csv(trace);
  }

  std::printf("vulnerability = %.6g\nfirst_order  = %.6g\n", rep.vulnerability,
              rep.first_order);
  if (rep.second_order) std::printf("second_order = %.6g\n", *rep.second_order);
  for (const auto& [id, v] : rep.per_task_relative)
    std::printf("rel_vuln[%s] = %.6g\n", id.c_str(), v);
  std::printf("report: %s\ntrace:  %s\n", report_path.c_str(), trace_path.c_str());
  return 0;
}

int cmd_sweep(const CommonOpts& o) {
  ExperimentConfig cfg = load_config(o);
  RunResult res = run_experiment(cfg);
  const auto files = emit_outputs(res.table, cfg.output_dir, cfg.sweep);
  std::printf("cells=%zu training_steps=%zu cache_hits=%zu error_rows=%zu\n",
              res.stats.cells, res.stats.training_steps, res.stats.cache_hits,
              res.stats.error_rows);
  for (const std::string& f : files) std::printf("wrote %s\n", f.c_str());
  return res.stats.error_rows > 0 ? 2 : 0;
}

int cmd_incremental(const CommonOpts& o) {
  ExperimentConfig cfg = load_config(o);
  std::vector<std::string> order = split_ids(o.tasks);
  if (order.empty()) {
    for (const SynthTaskSpec& t : cfg.dataset.tasks) order.push_back(t.id);
  }
  RunResult res = incremental_task_sweep(cfg, order);
  const auto files = emit_outputs(res.table, cfg.output_dir, cfg.sweep);
  std::printf("cells=%zu training_steps=%zu error_rows=%zu\n", res.stats.cells,
              res.stats.training_steps, res.stats.error_rows);
  for (const std::string& f : files) std::printf("wrote %s\n", f.c_str());
  return res.stats.error_rows > 0 ? 2 : 0;
}

SweepTable load_table(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  std::stringstream buf;
  buf << is.rdbuf();
  return SweepTable::from_csv(buf.str());
}

int cmd_analyze(const std::string& target_path, const std::string& surrogate_path,
                const std::string& stat, const std::string& out_dir) {
  const SweepTable target = load_table(target_path);
  const SweepTable surrogate = load_table(surrogate_path);

  std::vector<std::string> stats_to_run;
  if (stat.empty())
    stats_to_run = {"pearson", "kendall", "wilcoxon", "wilcoxon_greater"};
  else
    stats_to_run = {stat};

  std::string csv = "metric1,metric2,test,effect_size,p_value\n";
  const std::string m1 = fs::path(target_path).stem().string();
  const std::string m2 = fs::path(surrogate_path).stem().string();
  for (const std::string& s : stats_to_run) {
    const StatResult r = surrogate_correlation(target, surrogate, s);
    csv += m1 + ',' + m2 + ',' + s + ',' + format_double(r.statistic) + ',' +
           format_double(r.p_value) + '\n';
    std::printf("%-16s statistic=%.6g p=%.4g n=%zu (%s)\n", s.c_str(),
                r.statistic, r.p_value, r.n,
                r.method == PMethod::exact ? "exact" : "normal approx");
  }
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    const std::string path = (fs::path(out_dir) / "correlations.csv").string();
    std::ofstream os(path, std::ios::binary);
    os << csv;
    std::printf("wrote %s\n", path.c_str());
  }
  return 0;
}

int cmd_emit(const std::string& in_path, const std::string& out_dir) {
  const SweepTable table = load_table(in_path);
  // infer which axes vary so each gets a chart
  SweepAxes axes;
  std::set<std::string> eps, steps, norms, encoders, epochs;
  for (const SweepRow& r : table.rows) {
    eps.insert(format_double(r.epsilon));
    steps.insert(std::to_string(r.steps));
    norms.insert(r.p);
    encoders.insert(r.encoder_id);
    epochs.insert(std::to_string(r.epochs));
  }
  if (eps.size() > 1) axes.epsilon = {0.0};
  if (steps.size() > 1) axes.steps = {0};
  if (norms.size() > 1) axes.norms = {PNorm::linf};
  if (encoders.size() > 1) axes.encoders = {{0}};
  if (epochs.size() > 1) axes.epochs = {0};
  const auto files = emit_outputs(table, out_dir, axes);
  for (const std::string& f : files) std::printf("wrote %s\n", f.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adversarial robustness laboratory for multi-task models"};
  app.require_subcommand(1);

  CommonOpts train_o, attack_o, sweep_o, incr_o;
  std::string target_path, surrogate_path, stat, analyze_out;
  std::string emit_in, emit_out = "out";

  add_common(app.add_subcommand("train", "train a model on every dataset task"),
             train_o);
  add_common(app.add_subcommand("attack", "attack a freshly trained model"),
             attack_o);
  add_common(app.add_subcommand("sweep", "run the configured experiment sweep"),
             sweep_o);
  add_common(app.add_subcommand(
                 "incremental", "vulnerability while enabling tasks one by one"),
             incr_o);

  CLI::App* analyze =
      app.add_subcommand("analyze", "correlate two sweep result tables");
  analyze->add_option("--target", target_path, "target results.csv")->required();
  analyze->add_option("--surrogate", surrogate_path, "surrogate results.csv")
      ->required();
  analyze->add_option("--stat", stat,
                      "pearson, kendall, wilcoxon or wilcoxon_greater "
                      "(default: all)");
  analyze->add_option("--out", analyze_out, "directory for correlations.csv");

  CLI::App* emit = app.add_subcommand("emit", "re-emit CSV and charts");
  emit->add_option("--in", emit_in, "input results.csv")->required();
  emit->add_option("--out", emit_out, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("train")) return cmd_train(train_o);
    if (app.got_subcommand("attack")) return cmd_attack(attack_o);
    if (app.got_subcommand("sweep")) return cmd_sweep(sweep_o);
    if (app.got_subcommand("incremental")) return cmd_incremental(incr_o);
    if (app.got_subcommand("analyze"))
      return cmd_analyze(target_path, surrogate_path, stat, analyze_out);
    if (app.got_subcommand("emit")) return cmd_emit(emit_in, emit_out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
