#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mtadv/attack.hpp"
#include "mtadv/model.hpp"
#include "mtadv/stats.hpp"
#include "mtadv/sweep.hpp"
#include "mtadv/synth.hpp"

namespace mtadv {

enum class CombinationPolicy { pairs, incremental, all_subsets_up_to_k };

CombinationPolicy policy_from_string(const std::string& s);

struct SweepAxes {
  std::vector<double> epsilon;
  std::vector<std::size_t> steps;
  std::vector<PNorm> norms;
  CombinationPolicy policy = CombinationPolicy::pairs;
  std::size_t max_subset = 2;  // all_subsets_up_to_k only
  std::vector<std::vector<std::size_t>> encoders;  // hidden+feature dims
  std::vector<std::size_t> epochs;                 // epoch checkpoints
};

struct ExperimentConfig {
  SynthSpec dataset;
  std::string dataset_path;  // overrides inline spec when set
  std::vector<std::size_t> encoder;  // hidden+feature dims (input dim from data)
  std::vector<double> weights;       // per dataset task, empty = uniform
  TrainConfig train;
  std::vector<AttackConfig> attacks;
  SweepAxes sweep;
  std::string output_dir = "out";
  std::uint64_t seed = 0;

  void validate() const;

  // Flat dotted key=value text, or the JSON equivalent of the same schema
  // (detected by a leading '{' or a .json suffix).
  static ExperimentConfig from_file(const std::string& path);
  static ExperimentConfig from_text(const std::string& text);
  static ExperimentConfig from_json(const std::string& text);
};

struct RunStats {
  std::size_t training_steps = 0;  // SGD updates actually performed
  std::size_t cache_hits = 0;
  std::size_t cells = 0;
  std::size_t error_rows = 0;
};

struct RunResult {
  SweepTable table;
  RunStats stats;
};

// Trains every model the sweep needs (content-hash cache under
// <output_dir>/cache), runs each attack at each sweep point and collects
// one row per metric. Deterministic for a fixed config and seed; row-level
// failures become error rows and the run continues.
RunResult run_experiment(const ExperimentConfig& cfg);

// One model trained on all tasks; the attacked set grows along `order`.
// Rows are tagged by the enabled prefix (main task + auxiliary_set).
RunResult incremental_task_sweep(const ExperimentConfig& cfg,
                                 const std::vector<std::string>& order);

// Pairs metric values of the two tables joined on
// (main_task, auxiliary_set, attack key, metric), ignoring encoder and
// epoch axes; values are averaged over seeds within a key first.
StatResult surrogate_correlation(const SweepTable& target,
                                 const SweepTable& surrogate,
                                 const std::string& statistic);

// results.csv (fixed column order, sorted rows) plus one SVG chart per
// declared sweep axis. Returns the files written.
std::vector<std::string> emit_outputs(const SweepTable& table,
                                      const std::string& dir,
                                      const SweepAxes& axes = {});

std::size_t worker_count();  // MTADVLAB_THREADS, default hardware concurrency

}  // namespace mtadv
