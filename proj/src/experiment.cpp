#include "mbs/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include <json.hpp>

#include "mbs/data.hpp"
#include "mbs/errors.hpp"
#include "mbs/format.hpp"

namespace mbs {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

fs::path resolve_output_dir(const ExperimentConfig& config, const RunOptions& options) {
  fs::path dir = config.output_dir;
  if (dir.is_absolute()) return dir;
  if (options.output_root) return *options.output_root / dir;
  if (const char* root = std::getenv(kOutputRootEnv); root && *root) return fs::path(root) / dir;
  return dir;
}

MemoryPlan resolve_memory(const ExperimentConfig& config) {
  MemoryPlan m;
  m.estimate = estimate_memory(config.model, config.dataset.input_shape, 1, config.optim.kind);
  const std::size_t mini = config.mini_batch_size;
  if (config.capacity_bytes == 0) {
    m.micro_batch_size = std::min(config.micro_batch_size.value_or(mini), mini);
    return m;
  }
  m.budget = make_budget(m.estimate, config.capacity_bytes, config.fixed_overhead_bytes);
  m.max_micro_batch = fit_micro_batch(*m.budget);
  if (config.micro_batch_size) {
    m.micro_batch_size = std::min(*config.micro_batch_size, mini);
    if (!m.budget->fits(m.micro_batch_size)) {
      throw ModelDoesNotFitError("micro-batch size " + std::to_string(m.micro_batch_size) +
                                 " exceeds the largest fitting size " + std::to_string(*m.max_micro_batch));
    }
  } else {
    m.micro_batch_size = static_cast<std::size_t>(std::min<std::uint64_t>(*m.max_micro_batch, mini));
  }
  m.baseline_fits = m.budget->fits(mini);
  return m;
}

std::uint64_t transfer_bytes_per_sample(const ExperimentConfig& config) {
  const std::vector<Shape> shapes = infer_shapes(config.model, config.dataset.input_shape);
  const std::uint64_t target = config.dataset.kind == DatasetKind::synthetic_segmentation
                                   ? shape_numel(config.dataset.mask_shape)
                                   : 1;
  return kBytesPerElement * (shape_numel(shapes.front()) + target);
}

namespace {

std::string metric_name_for(const LossSpec& loss) {
  return metric_for(loss) == MetricKind::iou ? "iou" : "accuracy";
}

double headline_metric(const LossSpec& loss, const EvalResult& e) {
  return metric_for(loss) == MetricKind::iou ? e.iou : e.accuracy;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << content;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArgumentError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Simulated makespans per (n_b, n_mu), memoized.
class MakespanCache {
 public:
  MakespanCache(const CostModel& cost, std::uint64_t bytes, bool overlap) : cost_(cost), bytes_(bytes), overlap_(overlap) {}
  double operator()(std::size_t n_b, std::size_t n_mu) {
    const auto key = std::make_pair(n_b, n_mu);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    const double v = simulate_stream(plan_split(n_b, n_mu), cost_, bytes_, n_mu < n_b && overlap_).makespan;
    cache_.emplace(key, v);
    return v;
  }

 private:
  CostModel cost_;
  std::uint64_t bytes_;
  bool overlap_;
  std::map<std::pair<std::size_t, std::size_t>, double> cache_;
};

struct VariantSpec {
  std::string name;
  std::size_t micro_batch_size;
};

std::string csv_opt(bool present, double v) { return present ? format_g17(v) : std::string(); }

SeedRun train_seed(const ExperimentConfig& config, const VariantSpec& variant, std::uint64_t seed,
                   MakespanCache& makespan, std::ostringstream& csv) {
  DatasetSpec ds_spec = config.dataset;
  if (!config.dataset_seed_pinned) ds_spec.seed = seed;
  const Dataset data = make_dataset(ds_spec);
  if (data.size() == 0) throw ConfigError("dataset is empty");

  BuiltModel built = build_model(config.model, config.dataset.input_shape, seed);
  OptimizerState optimizer(config.optim, built.params);

  const std::size_t per_epoch = (data.size() + config.mini_batch_size - 1) / config.mini_batch_size;
  EpochConfig ec;
  ec.mini_batch_size = config.mini_batch_size;
  ec.micro_batch_size = variant.micro_batch_size;
  ec.mode = config.normalization_mode;
  ec.loss = config.loss;
  ec.seed = seed;
  ec.lr = {config.lr_schedule, config.lr_schedule_unit, config.optim.lr, per_epoch * config.epochs, config.epochs};
  ec.options = {config.normalization_site, config.prefetch};
  ec.threshold = config.threshold;

  const MetricKind metric = metric_for(config.loss);
  const bool is_acc = metric == MetricKind::accuracy;
  const bool is_iou = metric == MetricKind::iou;

  SeedRun run;
  run.seed = seed;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    ec.epoch = epoch;
    const EpochStats stats = train_epoch(built.model, built.params, data, optimizer, ec);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = stats.mean_loss;
    rec.step_count = stats.step_count;
    rec.mini_batches = stats.mini_batches.size();
    rec.micro_batches = stats.micro_batch_count;
    for (std::size_t i = 0; i < stats.mini_batches.size(); ++i) {
      const MiniBatchSummary& mb = stats.mini_batches[i];
      const double sim = makespan(mb.size, std::min(variant.micro_batch_size, mb.size));
      rec.sim_seconds += sim;
      csv << variant.name << ',' << seed << ',' << epoch << ",mini_batch," << i << ',' << mb.size << ',' << mb.n_s_mu
          << ',' << format_g17(mb.loss) << ",," << csv_opt(is_acc, mb.metric) << ',' << csv_opt(is_iou, mb.metric)
          << ",,," << mb.step_count << ',' << format_g17(sim) << '\n';
    }
    rec.eval = evaluate(built.model, built.params, data, config.loss, config.threshold);
    csv << variant.name << ',' << seed << ',' << epoch << ",epoch,," << data.size() << ',' << rec.micro_batches << ','
        << format_g17(rec.train_loss) << ',' << format_g17(rec.eval.loss) << ','
        << csv_opt(is_acc, rec.eval.accuracy) << ',' << csv_opt(is_iou, rec.eval.iou) << ','
        << csv_opt(is_iou, rec.eval.iou_micro) << ',' << csv_opt(is_iou, rec.eval.dice) << ',' << rec.step_count
        << ',' << format_g17(rec.sim_seconds) << '\n';
    run.sim_seconds += rec.sim_seconds;
    run.epochs.push_back(rec);
  }
  run.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  run.final_metric = headline_metric(config.loss, run.epochs.back().eval);
  run.best_metric = run.final_metric;
  for (const EpochRecord& r : run.epochs) run.best_metric = std::max(run.best_metric, headline_metric(config.loss, r.eval));
  return run;
}

void summarize(VariantRun& v) {
  if (v.seeds.empty()) return;
  double sum = 0.0, wall = 0.0;
  for (const SeedRun& s : v.seeds) {
    sum += s.best_metric;
    wall += s.wall_seconds;
  }
  const double n = static_cast<double>(v.seeds.size());
  v.mean_best_metric = sum / n;
  double var = 0.0;
  for (const SeedRun& s : v.seeds) var += (s.best_metric - v.mean_best_metric) * (s.best_metric - v.mean_best_metric);
  v.std_best_metric = std::sqrt(var / n);
  v.sim_seconds = v.seeds.front().sim_seconds;
  v.mean_wall_seconds = wall / n;
}

json variant_json(const VariantRun& v) {
  json j;
  j["status"] = v.failed ? "Failed" : (v.skipped ? "skipped" : "completed");
  j["micro_batch_size"] = v.micro_batch_size;
  if (v.failed || v.skipped) return j;
  j["mean_best_metric"] = v.mean_best_metric;
  j["std_best_metric"] = v.std_best_metric;
  j["sim_seconds"] = v.sim_seconds;
  j["mean_wall_seconds"] = v.mean_wall_seconds;
  json seeds = json::array();
  for (const SeedRun& s : v.seeds) {
    seeds.push_back({{"seed", s.seed},
                     {"final_metric", s.final_metric},
                     {"best_metric", s.best_metric},
                     {"final_train_loss", s.epochs.back().train_loss},
                     {"final_eval_loss", s.epochs.back().eval.loss},
                     {"step_count", s.epochs.back().step_count},
                     {"sim_seconds", s.sim_seconds},
                     {"wall_seconds", s.wall_seconds}});
  }
  j["per_seed"] = seeds;
  return j;
}

json overhead_json(const OverheadReport& r) {
  json j;
  j["mbs_makespan"] = r.mbs_makespan;
  j["baseline"] = r.baseline_failed ? json("Failed") : json(*r.baseline_makespan);
  j["absolute_overhead"] = r.absolute_overhead ? json(*r.absolute_overhead) : json(nullptr);
  j["percent_overhead"] = r.percent_overhead ? json(*r.percent_overhead) : json(nullptr);
  return j;
}

json memory_json(const MemoryPlan& m) {
  json j;
  j["param_count"] = m.estimate.param_count;
  j["param_bytes"] = m.estimate.param_bytes;
  j["data_bytes_per_sample"] = m.estimate.data_bytes_per_sample;
  j["workspace_bytes"] = m.estimate.workspace_bytes;
  if (m.budget) {
    j["capacity_bytes"] = m.budget->capacity_bytes;
    j["fixed_overhead_bytes"] = m.budget->fixed_overhead_bytes;
    j["max_micro_batch"] = *m.max_micro_batch;
  } else {
    j["capacity_bytes"] = nullptr;
  }
  j["micro_batch_size"] = m.micro_batch_size;
  j["baseline_fits"] = m.baseline_fits;
  return j;
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& config, const RunOptions& options) {
  validate_config(config);
  RunResult result;
  result.memory = resolve_memory(config);
  result.metric_name = metric_name_for(config.loss);
  result.resolved = config;
  result.resolved.micro_batch_size = result.memory.micro_batch_size;

  result.dir = resolve_output_dir(config, options);
  if (fs::exists(result.dir / "metrics.csv") && !options.overwrite) {
    throw ConfigError("output directory " + result.dir.string() + " already holds a run");
  }
  fs::create_directories(result.dir);

  const std::uint64_t bytes = transfer_bytes_per_sample(config);
  MakespanCache makespan(config.cost, bytes, config.stream_overlap);

  std::ostringstream csv;
  csv << kMetricsHeader << '\n';
  std::ostringstream timing;
  timing << "variant,seed,wall_seconds\n";

  result.mbs.name = "mbs";
  result.mbs.micro_batch_size = result.memory.micro_batch_size;
  result.baseline.name = "baseline";
  result.baseline.micro_batch_size = config.mini_batch_size;
  result.baseline.failed = !result.memory.baseline_fits;
  result.baseline.skipped = !config.run_baseline && !result.baseline.failed;

  for (std::uint64_t seed : config.run_seeds()) {
    result.mbs.seeds.push_back(train_seed(config, {"mbs", result.mbs.micro_batch_size}, seed, makespan, csv));
    timing << "mbs," << seed << ',' << format_g17(result.mbs.seeds.back().wall_seconds) << '\n';
    if (!result.baseline.failed && !result.baseline.skipped) {
      result.baseline.seeds.push_back(
          train_seed(config, {"baseline", config.mini_batch_size}, seed, makespan, csv));
      timing << "baseline," << seed << ',' << format_g17(result.baseline.seeds.back().wall_seconds) << '\n';
    }
  }
  summarize(result.mbs);
  summarize(result.baseline);

  // Per-mini-batch stream overhead (full-size mini-batch).
  const StreamSchedule mbs_schedule = simulate_stream(plan_split(config.mini_batch_size, result.memory.micro_batch_size),
                                                      config.cost, bytes, config.stream_overlap);
  std::optional<StreamSchedule> baseline_schedule;
  if (result.memory.baseline_fits) baseline_schedule = simulate_baseline(config.mini_batch_size, config.cost, bytes);
  result.overhead = overhead_report(mbs_schedule, baseline_schedule);

  ExperimentConfig resolved = result.resolved;
  write_file(result.dir / "config.txt", serialize_config(resolved));
  write_file(result.dir / "metrics.csv", csv.str());
  write_file(result.dir / "timing.csv", timing.str());
  write_file(result.dir / "stream.csv", schedule_csv(mbs_schedule));

  const MicroBatchPlan plan = plan_split(config.mini_batch_size, result.memory.micro_batch_size);
  json summary;
  summary["name"] = config.name;
  summary["metric"] = result.metric_name;
  summary["mini_batch_size"] = config.mini_batch_size;
  summary["micro_batch_size"] = result.memory.micro_batch_size;
  summary["n_s_mu"] = plan.n_s_mu;
  summary["normalization_mode"] = to_string(config.normalization_mode);
  summary["epochs"] = config.epochs;
  summary["seeds"] = config.run_seeds();
  summary["memory"] = memory_json(result.memory);
  summary["variants"] = {{"mbs", variant_json(result.mbs)}, {"baseline", variant_json(result.baseline)}};
  summary["stream_overhead_per_mini_batch"] = overhead_json(result.overhead);
  summary["batchnorm_micro_batch_statistics"] = has_batchnorm(config.model);
  write_file(result.dir / "summary.json", summary.dump(2) + "\n");
  write_file(result.dir / "memory.json", memory_json(result.memory).dump(2) + "\n");

  StreamReport sr{plan, mbs_schedule, baseline_schedule, result.overhead};
  write_file(result.dir / "stream_summary.json", sr.summary_json() + "\n");
  return result;
}

// ---- Compare ----

CompareTable compare_report(const std::vector<fs::path>& run_dirs) {
  if (run_dirs.size() < 2) throw ArgumentError("compare needs at least two run directories");
  CompareTable table;
  for (const fs::path& dir : run_dirs) {
    json s;
    try {
      s = json::parse(read_file(dir / "summary.json"));
    } catch (const json::exception& e) {
      throw ArgumentError("bad summary in " + dir.string() + ": " + e.what());
    }
    CompareRow row;
    row.name = s.at("name").get<std::string>();
    row.metric = s.at("metric").get<std::string>();
    if (!table.rows.empty() && row.metric != table.rows.front().metric) {
      throw ArgumentError("cannot compare metric '" + row.metric + "' with '" + table.rows.front().metric + "'");
    }
    row.batch_size = s.at("mini_batch_size").get<std::size_t>();
    row.micro_batch_size = s.at("micro_batch_size").get<std::size_t>();
    const json& mbs = s.at("variants").at("mbs");
    const json& base = s.at("variants").at("baseline");
    row.metric_with = mbs.at("mean_best_metric").get<double>();
    row.metric_with_std = mbs.at("std_best_metric").get<double>();
    row.time_with = mbs.at("sim_seconds").get<double>();
    row.wall_with = mbs.at("mean_wall_seconds").get<double>();
    row.baseline_failed = base.at("status") != "completed";
    if (!row.baseline_failed) {
      row.metric_without = base.at("mean_best_metric").get<double>();
      row.metric_without_std = base.at("std_best_metric").get<double>();
      row.time_without = base.at("sim_seconds").get<double>();
      row.wall_without = base.at("mean_wall_seconds").get<double>();
    }
    table.rows.push_back(row);
  }
  return table;
}

std::string CompareTable::csv() const {
  std::ostringstream os;
  os << "name,batch_size,micro_batch_size,metric,metric_wo_mbs,metric_wo_mbs_std,metric_w_mbs,metric_w_mbs_std,"
        "time_wo_mbs,time_w_mbs,wall_wo_mbs,wall_w_mbs,delta_metric_vs_first,delta_time_vs_first\n";
  for (const CompareRow& r : rows) {
    const CompareRow& f = rows.front();
    auto wo = [&](double v) { return r.baseline_failed ? std::string("Failed") : format_g17(v); };
    os << r.name << ',' << r.batch_size << ',' << r.micro_batch_size << ',' << r.metric << ',' << wo(r.metric_without)
       << ',' << wo(r.metric_without_std) << ',' << format_g17(r.metric_with) << ',' << format_g17(r.metric_with_std)
       << ',' << wo(r.time_without) << ',' << format_g17(r.time_with) << ',' << wo(r.wall_without) << ','
       << format_g17(r.wall_with) << ',' << format_g17(r.metric_with - f.metric_with) << ','
       << format_g17(r.time_with - f.time_with) << '\n';
  }
  return os.str();
}

std::string CompareTable::text() const {
  const std::vector<std::string> header{"Model", "Batch size", "u-batch size", "Metric w/o MBS", "Metric w/ MBS",
                                        "Time w/o MBS (sim s)", "Time w/ MBS (sim s)"};
  std::vector<std::vector<std::string>> cells{header};
  auto pm = [](double m, double s) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << 100.0 * m << " +-" << 100.0 * s;
    return os.str();
  };
  auto secs = [](double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(3) << v;
    return os.str();
  };
  for (const CompareRow& r : rows) {
    cells.push_back({r.name, std::to_string(r.batch_size), std::to_string(r.micro_batch_size),
                     r.baseline_failed ? "Failed" : pm(r.metric_without, r.metric_without_std),
                     pm(r.metric_with, r.metric_with_std), r.baseline_failed ? "Failed" : secs(r.time_without),
                     secs(r.time_with)});
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : cells)
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  std::ostringstream os;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (std::size_t i = 0; i < cells[r].size(); ++i) {
      if (i) os << "  ";
      os << std::setw(static_cast<int>(width[i])) << (i == 0 ? std::left : std::right) << cells[r][i];
    }
    os << '\n';
    if (r == 0) {
      std::size_t total = 0;
      for (std::size_t w : width) total += w + 2;
      os << std::string(total - 2, '-') << '\n';
    }
  }
  return os.str();
}

std::vector<RunResult> sweep(const ExperimentConfig& config, const std::vector<std::size_t>& mini_batch_sizes,
                             const RunOptions& options) {
  if (mini_batch_sizes.empty()) throw ConfigError("sweep needs at least one mini-batch size");
  std::vector<RunResult> results;
  std::vector<fs::path> dirs;
  for (std::size_t n : mini_batch_sizes) {
    ExperimentConfig c = config;
    c.mini_batch_size = n;
    c.output_dir = (fs::path(config.output_dir) / ("mini_" + std::to_string(n))).string();
    results.push_back(run_experiment(c, options));
    dirs.push_back(results.back().dir);
  }
  const fs::path base = resolve_output_dir(config, options);
  if (dirs.size() >= 2) {
    const CompareTable t = compare_report(dirs);
    write_file(base / "compare.csv", t.csv());
    write_file(base / "compare.txt", t.text());
  }
  return results;
}

// ---- Simulation reports ----

std::vector<MemoryFitRow> memory_fit_table(const ExperimentConfig& config, const std::vector<std::size_t>& sizes) {
  const MemoryEstimate est = estimate_memory(config.model, config.dataset.input_shape, 1, config.optim.kind);
  std::vector<MemoryFitRow> rows;
  for (std::size_t n : sizes) {
    MemoryFitRow row;
    row.mini_batch_size = n;
    if (config.capacity_bytes == 0) {
      row.micro_batch_size = std::min(config.micro_batch_size.value_or(n), n);
      rows.push_back(row);
      continue;
    }
    const MemoryBudget budget = make_budget(est, config.capacity_bytes, config.fixed_overhead_bytes);
    row.fits_without_mbs = budget.fits(n);
    try {
      const std::uint64_t max_mu = fit_micro_batch(budget);
      const std::size_t mu = config.micro_batch_size ? std::min(*config.micro_batch_size, n)
                                                     : static_cast<std::size_t>(std::min<std::uint64_t>(max_mu, n));
      if (budget.fits(mu)) row.micro_batch_size = mu;
    } catch (const ModelDoesNotFitError&) {
    }
    rows.push_back(row);
  }
  return rows;
}

std::string format_memory_fit_table(const std::vector<MemoryFitRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(12) << "mini-batch" << std::setw(10) << "w/o MBS" << "u-batch (w/ MBS)\n";
  for (const MemoryFitRow& r : rows) {
    os << std::left << std::setw(12) << r.mini_batch_size << std::setw(10) << (r.fits_without_mbs ? "fits" : "Failed")
       << (r.micro_batch_size ? std::to_string(*r.micro_batch_size) : std::string("Failed")) << '\n';
  }
  return os.str();
}

std::string StreamReport::summary_json() const {
  json j;
  j["n_b"] = plan.n_b;
  j["n_mu"] = plan.n_mu;
  j["n_s_mu"] = plan.n_s_mu;
  j["overlap"] = schedule.overlap_enabled;
  j["makespan"] = schedule.makespan;
  j["events"] = schedule.events.size();
  j["baseline_makespan"] = baseline ? json(baseline->makespan) : json("Failed");
  j["overhead"] = overhead_json(overhead);
  return j.dump(2);
}

StreamReport simulate_config_stream(const ExperimentConfig& config) {
  validate_config(config);
  const MemoryPlan m = resolve_memory(config);
  const std::uint64_t bytes = transfer_bytes_per_sample(config);
  StreamReport r;
  r.plan = plan_split(config.mini_batch_size, m.micro_batch_size);
  r.schedule = simulate_stream(r.plan, config.cost, bytes, config.stream_overlap);
  if (m.baseline_fits) r.baseline = simulate_baseline(config.mini_batch_size, config.cost, bytes);
  r.overhead = overhead_report(r.schedule, r.baseline);
  return r;
}

}  // namespace mbs
