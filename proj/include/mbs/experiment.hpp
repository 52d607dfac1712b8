#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mbs/config.hpp"
#include "mbs/engine.hpp"
#include "mbs/memory.hpp"
#include "mbs/stream.hpp"

namespace mbs {

/// Environment variable that re-roots relative output directories.
inline constexpr const char* kOutputRootEnv = "MBS_OUTPUT_ROOT";

struct RunOptions {
  /// Overrides kOutputRootEnv when set.
  std::optional<std::filesystem::path> output_root;
  /// Allow writing into a directory that already holds a run.
  bool overwrite = false;
};

std::filesystem::path resolve_output_dir(const ExperimentConfig& config, const RunOptions& options);

/// Memory side of a config: the analytic estimate, the simulated budget (none when capacity is 0),
/// the micro-batch size MBS will use, and whether the plain mini-batch fits.
struct MemoryPlan {
  MemoryEstimate estimate;
  std::optional<MemoryBudget> budget;
  std::optional<std::uint64_t> max_micro_batch;
  std::size_t micro_batch_size = 0;
  bool baseline_fits = true;
};

/// Throws ModelDoesNotFitError when even the chosen (or a single-sample) micro-batch exceeds capacity.
MemoryPlan resolve_memory(const ExperimentConfig& config);

/// Bytes streamed per sample: its input plus its target.
std::uint64_t transfer_bytes_per_sample(const ExperimentConfig& config);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  EvalResult eval;
  std::uint64_t step_count = 0;
  std::size_t mini_batches = 0;
  std::size_t micro_batches = 0;
  double sim_seconds = 0.0;
};

struct SeedRun {
  std::uint64_t seed = 0;
  std::vector<EpochRecord> epochs;
  double final_metric = 0.0;
  double best_metric = 0.0;
  double wall_seconds = 0.0;
  double sim_seconds = 0.0;
};

struct VariantRun {
  std::string name;  // "mbs" or "baseline"
  bool failed = false;
  bool skipped = false;
  std::size_t micro_batch_size = 0;
  std::vector<SeedRun> seeds;
  double mean_best_metric = 0.0;
  double std_best_metric = 0.0;  // population standard deviation across seeds
  double sim_seconds = 0.0;
  double mean_wall_seconds = 0.0;
};

struct RunResult {
  std::filesystem::path dir;
  ExperimentConfig resolved;
  MemoryPlan memory;
  std::string metric_name;
  VariantRun mbs;
  VariantRun baseline;
  OverheadReport overhead;
};

inline constexpr const char* kMetricsHeader =
    "variant,seed,epoch,row,mini_batch_index,samples,micro_batches,loss,eval_loss,accuracy,iou,iou_micro,dice,"
    "step_count,sim_makespan_seconds";

/// Trains the MBS variant and, when the mini-batch fits the simulated capacity, the plain
/// mini-batch baseline (otherwise recorded as Failed). Writes into the run directory:
/// config.txt (resolved), metrics.csv, timing.csv, summary.json, memory.json, stream.csv,
/// stream_summary.json.
RunResult run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

struct CompareRow {
  std::string name;
  std::string metric;
  std::size_t batch_size = 0;
  std::size_t micro_batch_size = 0;
  bool baseline_failed = false;
  double metric_without = 0.0, metric_without_std = 0.0;
  double metric_with = 0.0, metric_with_std = 0.0;
  double time_without = 0.0, time_with = 0.0;  // simulated seconds
  double wall_without = 0.0, wall_with = 0.0;  // informational
};

struct CompareTable {
  std::vector<CompareRow> rows;
  std::string csv() const;
  std::string text() const;
};

/// Reads summary.json from each run directory. Throws ArgumentError for fewer than two runs or
/// mixed metric kinds.
CompareTable compare_report(const std::vector<std::filesystem::path>& run_dirs);

/// One run per mini-batch size under <output_dir>/mini_<n>, then compare.csv / compare.txt in <output_dir>.
std::vector<RunResult> sweep(const ExperimentConfig& config, const std::vector<std::size_t>& mini_batch_sizes,
                             const RunOptions& options = {});

struct MemoryFitRow {
  std::size_t mini_batch_size = 0;
  bool fits_without_mbs = true;
  std::optional<std::size_t> micro_batch_size;  // nullopt when even MBS cannot fit
};

std::vector<MemoryFitRow> memory_fit_table(const ExperimentConfig& config, const std::vector<std::size_t>& sizes);
std::string format_memory_fit_table(const std::vector<MemoryFitRow>& rows);

struct StreamReport {
  MicroBatchPlan plan;
  StreamSchedule schedule;
  std::optional<StreamSchedule> baseline;
  OverheadReport overhead;
  std::string summary_json() const;
};

/// Schedule for one full mini-batch of the config under its memory plan.
StreamReport simulate_config_stream(const ExperimentConfig& config);

}  // namespace mbs
