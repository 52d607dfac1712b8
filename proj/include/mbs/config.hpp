#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mbs/data.hpp"
#include "mbs/engine.hpp"
#include "mbs/losses.hpp"
#include "mbs/model.hpp"
#include "mbs/optim.hpp"
#include "mbs/stream.hpp"

namespace mbs {

/// Everything needed to reproduce a run. Serialized as flat `key = value` lines with dotted
/// section prefixes; see serialize_config for the full key list.
struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 0;
  /// When non-empty, the run repeats once per seed and `seed` is ignored.
  std::vector<std::uint64_t> seeds;
  std::size_t epochs = 1;
  std::string output_dir = "runs/experiment";

  ModelSpec model;
  DatasetSpec dataset;
  /// Dataset seed follows the run seed unless pinned.
  bool dataset_seed_pinned = false;
  LossSpec loss;

  OptimizerConfig optim;
  LrSchedule lr_schedule = LrSchedule::constant;
  LrScheduleUnit lr_schedule_unit = LrScheduleUnit::update;

  std::size_t mini_batch_size = 16;
  /// nullopt means "auto": the largest micro-batch fit_micro_batch allows.
  std::optional<std::size_t> micro_batch_size;
  NormalizationMode normalization_mode = NormalizationMode::paper_faithful;
  NormalizationSite normalization_site = NormalizationSite::loss;
  bool prefetch = false;
  bool run_baseline = true;

  /// 0 disables the simulated capacity limit.
  std::uint64_t capacity_bytes = 0;
  std::uint64_t fixed_overhead_bytes = 0;

  CostModel cost;
  bool stream_overlap = false;

  double threshold = 0.5;

  std::vector<std::uint64_t> run_seeds() const { return seeds.empty() ? std::vector<std::uint64_t>{seed} : seeds; }

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// `dense(in=2, out=1, bias=true)`, `relu`, `conv2d(in_ch=1, out_ch=4, kernel=3, stride=1, padding=1)`, ...
std::string format_layer(const LayerSpec& layer);
LayerSpec parse_layer(const std::string& text);

std::string format_shape(const Shape& shape);
Shape parse_shape(const std::string& text);

/// Throws ConfigError naming the line on malformed input, unknown or duplicate keys.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Every key, in a fixed order, with shortest round-trip float formatting.
std::string serialize_config(const ExperimentConfig& config);

/// Cross-field checks (model composes on the dataset shape, loss suits the task, sizes positive).
void validate_config(const ExperimentConfig& config);

}  // namespace mbs
