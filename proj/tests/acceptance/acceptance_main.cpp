// Acceptance suite: one PASS/FAIL line per criterion. Tolerances are fixed below.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "mbs/autograd.hpp"
#include "mbs/data.hpp"
#include "mbs/engine.hpp"
#include "mbs/errors.hpp"
#include "mbs/experiment.hpp"
#include "mbs/losses.hpp"
#include "mbs/stream.hpp"
#include "oracles/mask_oracle.hpp"
#include "oracles/stream_oracle.hpp"
#include "support.hpp"

using namespace mbs;
namespace fs = std::filesystem;

namespace {

constexpr double kGradTol = 1e-10;
constexpr double kFdTol = 1e-5;
constexpr double kFdEps = 1e-6;
constexpr double kKinkMargin = 1e-4;
// Central differences carry ~1e-10 absolute rounding noise at eps=1e-6, so a tensor is never
// measured against a scale below this fraction of the largest gradient in the set.
constexpr double kFdScaleFloor = 1e-3;
constexpr double kRaggedMinDeviation = 1e-6;
constexpr double kEpochLossTol = 1e-8;
constexpr double kLn2Tol = 1e-12;
constexpr double kEquivalenceBudgetSeconds = 120.0;
constexpr double kEndToEndBudgetSeconds = 60.0;
constexpr int kRandomModels = 150;
constexpr int kFdPairs = 120;
constexpr int kStreamInstances = 200;
constexpr int kMaskInstances = 2000;

fs::path g_out;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct EquivCase {
  testing::Instance inst;
  MicroBatchPlan plan;
};

std::vector<EquivCase> equivalence_cases() {
  CounterRng rng(20240601);
  std::vector<EquivCase> cases;
  testing::InstanceOptions opt;
  opt.min_batch = 4;
  opt.max_batch = 64;
  while (static_cast<int>(cases.size()) < kRandomModels) {
    EquivCase c{testing::random_instance(rng, opt), {}};
    const std::size_t n_b = c.inst.batch.size();
    const std::size_t n_mu = testing::random_proper_divisor(rng, n_b);
    c.plan = plan_split(n_b, n_mu);
    cases.push_back(std::move(c));
  }
  return cases;
}

Outcome criterion_equivalence(NormalizationMode mode) {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  int splits = 0;
  for (const EquivCase& c : equivalence_cases()) {
    BuiltModel m = build_model(c.inst.spec, c.inst.input_shape, c.inst.seed);
    const MiniBatchStats s = accumulate_mini_batch(m.model, m.params, c.inst.batch, c.plan, mode, c.inst.loss);
    GradientSet full = full_batch_gradient(m.model, m.params, c.inst.batch, c.inst.loss);
    if (mode == NormalizationMode::off) full = scaled(full, static_cast<double>(c.plan.n_s_mu));
    worst = std::max(worst, max_relative_error(s.accumulated, full));
    if (c.plan.n_s_mu > 1) ++splits;
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = worst <= kGradTol && secs <= kEquivalenceBudgetSeconds && splits >= kRandomModels * 3 / 4;
  o.detail = std::to_string(kRandomModels) + " models (" + std::to_string(splits) + " with N_Smu>1), worst rel err " +
             fmt("%.3g", worst) + " (tol " + fmt("%.0e", kGradTol) + "), " + fmt("%.2f", secs) + " s";
  return o;
}

Outcome criterion_ragged() {
  // exact_weighted on random models with N_B=10, N_mu=8
  CounterRng rng(77);
  testing::InstanceOptions opt;
  opt.min_batch = 10;
  opt.max_batch = 10;
  double worst = 0.0;
  const MicroBatchPlan plan = plan_split(10, 8);
  for (int i = 0; i < 50; ++i) {
    const testing::Instance inst = testing::random_instance(rng, opt);
    BuiltModel m = build_model(inst.spec, inst.input_shape, inst.seed);
    const MiniBatchStats s =
        accumulate_mini_batch(m.model, m.params, inst.batch, plan, NormalizationMode::exact_weighted, inst.loss);
    worst = std::max(worst, max_relative_error(s.accumulated,
                                               full_batch_gradient(m.model, m.params, inst.batch, inst.loss)));
  }
  // Asymmetric batch on y = w x: the 8-sample head fits exactly, the 2-sample tail does not.
  BuiltModel m = build_model(ModelSpec{{DenseSpec{1, 1, false}}}, {1}, 0);
  m.params.at("0.weight")[0] = 1.0;
  Batch b{Tensor({10, 1}), Tensor({10, 1})};
  for (std::size_t i = 0; i < 10; ++i) {
    b.inputs[i] = 1.0 + static_cast<double>(i);
    b.targets[i] = i < 8 ? b.inputs[i] : 0.0;
  }
  const GradientSet full = full_batch_gradient(m.model, m.params, b, {LossKind::mse});
  const MiniBatchStats pf =
      accumulate_mini_batch(m.model, m.params, b, plan, NormalizationMode::paper_faithful, {LossKind::mse});
  const double deviation = max_relative_error(pf.accumulated, full);
  Outcome o;
  o.pass = worst <= kGradTol && deviation > kRaggedMinDeviation;
  o.detail = "exact_weighted worst rel err " + fmt("%.3g", worst) + " over 50 models; paper_faithful deviation " +
             fmt("%.4g", deviation) + " (full grad " + fmt("%.6g", full.at("0.weight")[0]) + ", paper_faithful " +
             fmt("%.6g", pf.accumulated.at("0.weight")[0]) + ")";
  return o;
}

Outcome criterion_finite_differences() {
  CounterRng rng(4242);
  testing::InstanceOptions opt;
  opt.min_batch = 1;
  opt.max_batch = 6;
  opt.allow_bce = true;
  opt.min_kink_margin = kKinkMargin;
  double worst = 0.0, worst_raw = 0.0;
  for (int i = 0; i < kFdPairs; ++i) {
    const testing::Instance inst = testing::random_instance(rng, opt);
    BuiltModel m = build_model(inst.spec, inst.input_shape, inst.seed);
    ForwardResult fr = forward(m.model, m.params, inst.batch.inputs, Mode::train);
    attach_loss(fr.tape, inst.loss, inst.batch.targets);
    const GradientSet g = backward(fr.tape);
    const GradientSet fd =
        finite_difference_gradients(m.model, m.params, make_loss_fn(inst.loss), inst.batch, kFdEps);
    double global = 0.0;
    for (const std::string& n : g.names())
      for (double v : g.at(n).data()) global = std::max(global, std::abs(v));
    worst = std::max(worst, max_relative_error(g, fd, kFdScaleFloor * global));
    worst_raw = std::max(worst_raw, max_relative_error(g, fd));
  }
  Outcome o;
  o.pass = worst <= kFdTol;
  o.detail = std::to_string(kFdPairs) + " model/batch pairs, eps " + fmt("%.0e", kFdEps) + ", worst rel err " +
             fmt("%.3g", worst) + " (tol " + fmt("%.0e", kFdTol) + "), without scale floor " + fmt("%.3g", worst_raw);
  return o;
}

ExperimentConfig mlp_config(const std::string& name) {
  ExperimentConfig c;
  c.name = name;
  c.seed = 11;
  c.epochs = 20;
  c.output_dir = name;
  c.model.layers = {DenseSpec{10, 32, true}, ReluSpec{}, DenseSpec{32, 16, true}, ReluSpec{}, DenseSpec{16, 4, true}};
  c.dataset.kind = DatasetKind::synthetic_classification;
  c.dataset.n_samples = 256;
  c.dataset.input_shape = {10};
  c.dataset.n_classes = 4;
  c.dataset.separation = 1.0;
  c.loss.kind = LossKind::cross_entropy;
  c.optim.lr = 0.02;
  c.mini_batch_size = 32;
  c.micro_batch_size = 8;
  c.normalization_mode = NormalizationMode::exact_weighted;
  c.cost.transfer_seconds_per_byte = 1e-9;
  c.cost.forward_seconds_per_sample = 1e-4;
  c.cost.backward_seconds_per_sample = 2e-4;
  c.cost.transfer_latency_seconds = 1e-4;
  c.cost.compute_launch_seconds = 5e-5;
  return c;
}

Outcome criterion_end_to_end() {
  const auto t0 = std::chrono::steady_clock::now();
  const RunResult r = run_experiment(mlp_config("end_to_end"), {g_out, true});
  const double secs = seconds_since(t0);
  const SeedRun& with = r.mbs.seeds.at(0);
  const SeedRun& without = r.baseline.seeds.at(0);
  double worst = 0.0;
  for (std::size_t e = 0; e < with.epochs.size(); ++e) {
    const double a = with.epochs[e].train_loss, b = without.epochs[e].train_loss;
    worst = std::max(worst, std::abs(a - b) / std::max(std::abs(a), std::abs(b)));
  }
  const double acc_with = with.epochs.back().eval.accuracy, acc_without = without.epochs.back().eval.accuracy;
  const std::size_t n_s_mu = plan_split(32, r.memory.micro_batch_size).n_s_mu;
  Outcome o;
  o.pass = n_s_mu == 4 && with.epochs.size() == 20 && worst <= kEpochLossTol && acc_with == acc_without &&
           secs <= kEndToEndBudgetSeconds;
  o.detail = "N_Smu=" + std::to_string(n_s_mu) + ", 20 epochs, worst per-epoch loss rel diff " + fmt("%.3g", worst) +
             ", final accuracy " + fmt("%.4f", acc_with) + " vs " + fmt("%.4f", acc_without) + ", " +
             fmt("%.2f", secs) + " s";
  return o;
}

Outcome criterion_deferred_update() {
  std::size_t checks = 0, violations = 0;
  // every equivalence case, one update each
  for (const EquivCase& c : equivalence_cases()) {
    BuiltModel m = build_model(c.inst.spec, c.inst.input_shape, c.inst.seed);
    OptimizerState opt(OptimizerConfig{}, m.params);
    for (NormalizationMode mode : {NormalizationMode::paper_faithful, NormalizationMode::exact_weighted,
                                   NormalizationMode::off}) {
      const std::uint64_t before = opt.step_count();
      train_mini_batch(m.model, m.params, c.inst.batch, c.plan, mode, c.inst.loss, opt);
      ++checks;
      if (opt.step_count() != before + 1) ++violations;
    }
  }
  // epochs over a grid of dataset / mini / micro sizes and both optimizers
  for (std::size_t n : {1u, 7u, 33u, 64u}) {
    DatasetSpec ds_spec;
    ds_spec.n_samples = n;
    ds_spec.input_shape = {3};
    ds_spec.n_classes = 2;
    ds_spec.seed = n;
    const Dataset ds = gen_synthetic_classification(ds_spec);
    for (std::size_t mini : {1u, 4u, 16u, 100u}) {
      for (std::size_t micro : {1u, 3u, 16u}) {
        for (OptimizerKind kind : {OptimizerKind::sgd, OptimizerKind::adam}) {
          BuiltModel m = build_model(ModelSpec{{DenseSpec{3, 4, true}, ReluSpec{}, DenseSpec{4, 2, true}}}, {3}, 1);
          OptimizerConfig oc;
          oc.kind = kind;
          OptimizerState opt(oc, m.params);
          EpochConfig ec;
          ec.mini_batch_size = mini;
          ec.micro_batch_size = micro;
          ec.loss = {LossKind::cross_entropy};
          std::size_t minis = 0, micros = 0;
          for (std::size_t e = 0; e < 2; ++e) {
            ec.epoch = e;
            const EpochStats st = train_epoch(m.model, m.params, ds, opt, ec);
            minis += st.mini_batches.size();
            micros += st.micro_batch_count;
            ++checks;
            if (st.step_count != minis || opt.step_count() != minis) ++violations;
          }
          if (micros > minis && opt.step_count() == micros) ++violations;
        }
      }
    }
  }
  Outcome o;
  o.pass = violations == 0;
  o.detail = std::to_string(checks) + " checks, " + std::to_string(violations) + " violations";
  return o;
}

ExperimentConfig failed_pattern_config() {
  ExperimentConfig c = mlp_config("failed_pattern");
  c.epochs = 10;
  c.optim.lr = 0.1;
  c.dataset.n_samples = 512;
  c.mini_batch_size = 256;
  c.micro_batch_size = 16;
  c.normalization_mode = NormalizationMode::paper_faithful;
  c.fixed_overhead_bytes = 4096;
  const MemoryEstimate e = estimate_memory(c.model, c.dataset.input_shape, 1, c.optim.kind);
  c.capacity_bytes = e.param_bytes + c.fixed_overhead_bytes + 100 * e.data_bytes_per_sample;
  return c;
}

Outcome criterion_failed_pattern() {
  const ExperimentConfig c = failed_pattern_config();
  const RunResult r = run_experiment(c, {g_out, true});
  const auto& epochs = r.mbs.seeds.at(0).epochs;
  const double first = epochs.front().train_loss, last = epochs.back().train_loss;
  const bool sane = std::isfinite(last) && last < first && last < std::log(4.0);

  const std::vector<std::size_t> sizes{16, 32, 64, 128, 256};
  auto boundary = [&] {
    std::string s;
    for (const MemoryFitRow& row : memory_fit_table(c, sizes))
      s += std::to_string(row.mini_batch_size) + (row.fits_without_mbs ? ":fits " : ":Failed ");
    return s;
  };
  const std::string b1 = boundary(), b2 = boundary();
  const std::string expected = "16:fits 32:fits 64:fits 128:Failed 256:Failed ";

  ExperimentConfig sweep_cfg = c;
  sweep_cfg.epochs = 1;
  sweep_cfg.output_dir = "failed_pattern_sweep";
  const auto runs = sweep(sweep_cfg, sizes, {g_out, true});
  std::string swept;
  for (const RunResult& run : runs)
    swept += std::to_string(run.resolved.mini_batch_size) + (run.baseline.failed ? ":Failed " : ":fits ");
  bool mbs_all_completed = true;
  for (const RunResult& run : runs) mbs_all_completed = mbs_all_completed && !run.mbs.failed && !run.mbs.seeds.empty();

  Outcome o;
  o.pass = r.baseline.failed && !r.mbs.failed && r.memory.micro_batch_size == 16 && sane && b1 == expected &&
           b2 == expected && swept == expected && mbs_all_completed;
  o.detail = "baseline " + std::string(r.baseline.failed ? "Failed" : "ran") + ", MBS loss " + fmt("%.4f", first) +
             " -> " + fmt("%.4f", last) + "; sweep " + swept;
  return o;
}

Outcome criterion_stream() {
  CounterRng rng(8);
  std::size_t overlap_violations = 0, closed_form_mismatches = 0, oracle_mismatches = 0, structure = 0;
  for (int i = 0; i < kStreamInstances; ++i) {
    const MicroBatchPlan plan = plan_split(1 + rng.below(128), 1 + rng.below(64));
    CostModel c;
    c.transfer_seconds_per_byte = double(rng.below(256)) / 65536.0;
    c.forward_seconds_per_sample = double(rng.below(256)) / 256.0;
    c.backward_seconds_per_sample = double(rng.below(256)) / 256.0;
    c.update_seconds = double(rng.below(64)) / 8.0;
    c.transfer_latency_seconds = double(rng.below(16)) / 16.0;
    c.compute_launch_seconds = double(rng.below(16)) / 16.0;
    const std::uint64_t bytes = 1 + rng.below(512);
    const StreamSchedule seq = simulate_stream(plan, c, bytes, false);
    const StreamSchedule ovl = simulate_stream(plan, c, bytes, true);
    if (ovl.makespan > seq.makespan) ++overlap_violations;
    double sum = 0.0;
    for (std::size_t n : plan.sizes) sum += c.transfer(n, bytes) + c.forward(n) + c.backward(n);
    sum += c.update_seconds;
    if (seq.makespan != sum) ++closed_form_mismatches;
    oracle::OracleCosts oc;
    for (std::size_t n : plan.sizes) {
      oc.transfer.push_back(c.transfer_latency_seconds + double(n) * double(bytes) * c.transfer_seconds_per_byte);
      oc.forward.push_back(c.compute_launch_seconds + double(n) * c.forward_seconds_per_sample);
      oc.backward.push_back(c.compute_launch_seconds + double(n) * c.backward_seconds_per_sample);
    }
    oc.update = c.update_seconds;
    if (oracle::simulate_pipeline(oc, 1).makespan != seq.makespan) ++oracle_mismatches;
    if (oracle::simulate_pipeline(oc, 2).makespan != ovl.makespan) ++oracle_mismatches;
    if (!check_schedule(seq, plan.n_s_mu).empty() || !check_schedule(ovl, plan.n_s_mu).empty()) ++structure;
  }
  // overhead vs N_Smu at a fixed mini-batch
  CostModel c;
  c.transfer_seconds_per_byte = 1e-9;
  c.forward_seconds_per_sample = 1e-3;
  c.backward_seconds_per_sample = 2e-3;
  c.update_seconds = 1e-2;
  c.transfer_latency_seconds = 1e-3;
  c.compute_launch_seconds = 5e-4;
  bool monotone = true;
  double prev = -1.0;
  std::string trend;
  const StreamSchedule base = simulate_baseline(256, c, 3072);
  for (std::size_t n_mu : {256u, 128u, 64u, 32u, 16u, 8u}) {
    const StreamSchedule s = simulate_stream(plan_split(256, n_mu), c, 3072, false);
    const double pct = *overhead_report(s, base).percent_overhead;
    monotone = monotone && pct >= prev;
    prev = pct;
    trend += fmt("%.2f%% ", pct);
  }
  Outcome o;
  o.pass = overlap_violations == 0 && closed_form_mismatches == 0 && oracle_mismatches == 0 && structure == 0 &&
           monotone && prev > 0.0;
  o.detail = std::to_string(kStreamInstances) + " instances: overlap>seq " + std::to_string(overlap_violations) +
             ", closed-form mismatches " + std::to_string(closed_form_mismatches) + ", oracle mismatches " +
             std::to_string(oracle_mismatches) + "; overhead for N_Smu 1..32: " + trend;
  return o;
}

Outcome criterion_metrics() {
  CounterRng rng(99);
  std::size_t mismatches = 0;
  for (int i = 0; i < kMaskInstances; ++i) {
    const std::size_t images = 1 + rng.below(3), pixels = 1 + rng.below(16);
    std::vector<double> g(images * pixels), p(images * pixels);
    const double density = rng.uniform();
    for (std::size_t j = 0; j < g.size(); ++j) {
      g[j] = rng.uniform() < density ? 1.0 : 0.0;
      p[j] = rng.uniform();
    }
    const MaskPair pair{Tensor({images, pixels}, p), Tensor({images, pixels}, g)};
    double dice_ref = 0.0, iou_ref = 0.0;
    for (std::size_t im = 0; im < images; ++im) {
      const std::vector<double> gi(g.begin() + im * pixels, g.begin() + (im + 1) * pixels);
      const std::vector<double> pi(p.begin() + im * pixels, p.begin() + (im + 1) * pixels);
      const auto a = oracle::to_set(gi, 0.5), b = oracle::to_set(pi, 0.5);
      dice_ref += oracle::set_dice(a, b);
      iou_ref += oracle::set_iou(a, b);
    }
    dice_ref /= static_cast<double>(images);
    iou_ref /= static_cast<double>(images);
    if (dice_coefficient(pair) != dice_ref || iou(pair) != iou_ref) ++mismatches;
  }
  const Tensor half({4, 8}, 0.5);
  Tensor target({4, 8});
  for (std::size_t j = 0; j < target.numel(); ++j) target[j] = rng.uniform() < 0.5 ? 0.0 : 1.0;
  const double bce = mean_loss(LossSpec{LossKind::bce, false}, half, target).value;
  const double bce_pair = bce_loss(MaskPair{half, target}).value;
  const double err = std::max(std::abs(bce - std::log(2.0)), std::abs(bce_pair - std::log(2.0)));
  Outcome o;
  o.pass = mismatches == 0 && err <= kLn2Tol;
  o.detail = std::to_string(kMaskInstances) + " masks, " + std::to_string(mismatches) +
             " mismatches vs set oracle; |BCE(0.5) - ln 2| = " + fmt("%.3g", err);
  return o;
}

Outcome criterion_reproducibility() {
  std::vector<ExperimentConfig> configs;
  ExperimentConfig a = mlp_config("repro_mlp");
  a.epochs = 4;
  a.seeds = {1, 2};
  configs.push_back(a);
  ExperimentConfig b = mlp_config("repro_adam");
  b.epochs = 3;
  b.optim.kind = OptimizerKind::adam;
  b.lr_schedule = LrSchedule::linear;
  b.micro_batch_size = 5;
  b.normalization_mode = NormalizationMode::paper_faithful;
  configs.push_back(b);
  ExperimentConfig seg;
  seg.name = "repro_seg";
  seg.seed = 5;
  seg.epochs = 3;
  seg.output_dir = "repro_seg";
  seg.model.layers = {Conv2dSpec{1, 4, 3, 1, 1}, BatchNormSpec{4}, ReluSpec{}, Conv2dSpec{4, 1, 1, 1, 0}};
  seg.dataset.kind = DatasetKind::synthetic_segmentation;
  seg.dataset.n_samples = 24;
  seg.dataset.input_shape = {1, 8, 8};
  seg.dataset.mask_shape = {1, 8, 8};
  seg.loss.kind = LossKind::bce_dice;
  seg.mini_batch_size = 8;
  seg.micro_batch_size = 3;
  configs.push_back(seg);

  std::size_t identical = 0;
  for (const ExperimentConfig& cfg : configs) {
    const RunResult first = run_experiment(cfg, {g_out / "repro_first", true});
    ExperimentConfig rerun = load_config(first.dir / "config.txt");
    const RunResult second = run_experiment(rerun, {g_out / "repro_second", true});
    ExperimentConfig pre = cfg;
    pre.prefetch = true;
    const RunResult prefetched = run_experiment(pre, {g_out / "repro_prefetch", true});
    const std::string m1 = slurp(first.dir / "metrics.csv");
    if (!m1.empty() && m1 == slurp(second.dir / "metrics.csv") && m1 == slurp(prefetched.dir / "metrics.csv"))
      ++identical;
  }
  Outcome o;
  o.pass = identical == configs.size();
  o.detail = std::to_string(identical) + "/" + std::to_string(configs.size()) +
             " configs bit-identical across rerun-from-embedded-config and prefetch on/off";
  return o;
}

Outcome criterion_batchnorm(const fs::path& readme) {
  const ModelSpec spec{{Conv2dSpec{1, 3, 3, 1, 1}, BatchNormSpec{3}, ReluSpec{}, FlattenSpec{},
                        DenseSpec{3 * 6 * 6, 2, true}}};
  BuiltModel m = build_model(spec, {1, 6, 6}, 21);
  CounterRng rng(21);
  const Batch batch{testing::random_tensor(rng, {16, 1, 6, 6}), testing::random_targets(rng, {LossKind::mse}, 16, {2})};
  Model full_model = m.model, micro_model = m.model;
  const Tensor full = forward(full_model, m.params, batch.inputs, Mode::train).output;
  const MiniBatchStats mbs = accumulate_mini_batch(micro_model, m.params, batch, plan_split(16, 4),
                                                   NormalizationMode::paper_faithful, {LossKind::mse});
  double diff = 0.0;
  for (std::size_t i = 0; i < full.numel(); ++i) diff = std::max(diff, std::abs(full[i] - mbs.outputs[i]));
  const GradientSet g_full = full_batch_gradient(m.model, m.params, batch, {LossKind::mse});
  const double grad_gap = max_relative_error(mbs.accumulated, g_full);
  const std::string doc = slurp(readme);
  const bool documented = doc.find("Batch normalization under micro-batching") != std::string::npos;
  Outcome o;
  o.pass = diff > 0.0 && documented;
  o.detail = "max train-output difference " + fmt("%.4g", diff) + ", gradient rel gap " + fmt("%.4g", grad_gap) +
             ", README note " + (documented ? "present" : "missing");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  g_out = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "mbs_acceptance";
  const fs::path readme = fs::path(MBS_SOURCE_DIR) / "README.md";
  fs::create_directories(g_out);

  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "gradient equivalence (paper_faithful, equal splits)",
       [] { return criterion_equivalence(NormalizationMode::paper_faithful); }},
      {2, "scaling law (normalization off)", [] { return criterion_equivalence(NormalizationMode::off); }},
      {3, "ragged split exactness", criterion_ragged},
      {4, "autograd vs finite differences", criterion_finite_differences},
      {5, "end-to-end training equivalence", criterion_end_to_end},
      {6, "deferred update contract", criterion_deferred_update},
      {7, "Failed pattern under simulated capacity", criterion_failed_pattern},
      {8, "streaming simulator", criterion_stream},
      {9, "metric correctness", criterion_metrics},
      {10, "reproducibility", criterion_reproducibility},
      {11, "batchnorm discrepancy is observable", [&] { return criterion_batchnorm(readme); }},
  };

  int failed = 0;
  for (const Criterion& c : criteria) {
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    if (!o.pass) ++failed;
    std::printf("[%s] %2d %s: %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
