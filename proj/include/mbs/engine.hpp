#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mbs/autograd.hpp"
#include "mbs/dataset.hpp"
#include "mbs/losses.hpp"
#include "mbs/model.hpp"
#include "mbs/optim.hpp"

namespace mbs {

struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  friend bool operator==(const IndexRange&, const IndexRange&) = default;
};

/// Ordered split of one mini-batch of n_b samples into n_s_mu contiguous micro-batches.
struct MicroBatchPlan {
  std::size_t n_b = 0;
  std::size_t n_mu = 0;
  std::size_t n_s_mu = 0;
  std::vector<std::size_t> sizes;
  std::vector<IndexRange> ranges;

  bool equal_split() const { return n_b % n_mu == 0; }
  /// Throws ArgumentError if any structural invariant is broken.
  void validate() const;
};

/// n_mu is clamped to n_b when larger; sizes are n_mu repeated plus a final remainder.
MicroBatchPlan plan_split(std::size_t n_b, std::size_t n_mu);

enum class NormalizationMode {
  paper_faithful,  // 1 / n_s_mu for every micro-batch
  exact_weighted,  // size_k / n_b
  off,             // 1
};

std::string to_string(NormalizationMode mode);
NormalizationMode parse_normalization_mode(const std::string& text);

double normalization_factor(const MicroBatchPlan& plan, std::size_t k, NormalizationMode mode);
/// Scales the loss value and records the factor in `scale`.
LossValue normalize_loss(const LossValue& loss, const MicroBatchPlan& plan, std::size_t k, NormalizationMode mode);

/// Running per-parameter gradient sum across one mini-batch's micro-batches, in plan order.
class GradientAccumulator {
 public:
  GradientAccumulator(const ParameterSet& params, std::size_t expected_micro_batches);

  /// Element-wise add; throws ArgumentError past the expected count, KeyMismatchError on layout mismatch.
  void accumulate(const GradientSet& grads);
  /// Zero the sums and start a new mini-batch.
  void reset(std::size_t expected_micro_batches);

  const GradientSet& sums() const noexcept { return sums_; }
  std::size_t micro_batches_seen() const noexcept { return seen_; }
  std::size_t expected() const noexcept { return expected_; }
  bool complete() const noexcept { return seen_ == expected_; }

 private:
  GradientSet sums_;
  std::size_t seen_ = 0;
  std::size_t expected_ = 0;
};

GradientAccumulator& accumulate(GradientAccumulator& acc, const GradientSet& grads);

/// Where the normalization factor enters the reverse pass. Both give identical gradients.
enum class NormalizationSite { loss, backward_seed };

struct TrainOptions {
  NormalizationSite site = NormalizationSite::loss;
  /// Slice the next micro-batch on a worker while the current one computes.
  bool prefetch = false;
};

struct MicroBatchStats {
  std::size_t index = 0;
  std::size_t size = 0;
  double raw_loss = 0.0;
  double factor = 1.0;
  double normalized_loss = 0.0;
};

struct MiniBatchStats {
  std::vector<MicroBatchStats> micro;
  /// Sample-weighted mean of the raw micro-batch losses: the mini-batch mean loss.
  double loss = 0.0;
  double grad_norm = 0.0;
  GradientSet accumulated;
  /// Model outputs of every micro-batch, concatenated in plan order.
  Tensor outputs;
  std::uint64_t step_count = 0;
};

/// forward -> mean_loss -> normalize -> backward -> accumulate for every micro-batch, no update.
MiniBatchStats accumulate_mini_batch(Model& model, const ParameterSet& params, const Batch& batch,
                                     const MicroBatchPlan& plan, NormalizationMode mode, const LossSpec& loss,
                                     const TrainOptions& options = {});

/// accumulate_mini_batch followed by exactly one optimizer step on the accumulated gradient.
MiniBatchStats train_mini_batch(Model& model, ParameterSet& params, const Batch& batch, const MicroBatchPlan& plan,
                                NormalizationMode mode, const LossSpec& loss, OptimizerState& optimizer,
                                const TrainOptions& options = {});

/// Gradient of the mean loss over the whole batch in one pass.
GradientSet full_batch_gradient(Model& model, const ParameterSet& params, const Batch& batch, const LossSpec& loss);

enum class MetricKind { none, accuracy, iou };
MetricKind metric_for(const LossSpec& loss);

struct LrPolicy {
  LrSchedule schedule = LrSchedule::constant;
  LrScheduleUnit unit = LrScheduleUnit::update;
  double initial_lr = 0.01;
  std::uint64_t total_updates = 1;
  std::size_t total_epochs = 1;

  double lr_at(std::uint64_t update, std::size_t epoch) const;
};

struct EpochConfig {
  std::size_t mini_batch_size = 16;
  std::size_t micro_batch_size = 16;
  NormalizationMode mode = NormalizationMode::paper_faithful;
  LossSpec loss;
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
  LrPolicy lr;
  TrainOptions options;
  double threshold = 0.5;
};

struct MiniBatchSummary {
  std::size_t size = 0;
  std::size_t n_s_mu = 0;
  double loss = 0.0;
  double metric = 0.0;  // accuracy or IoU of the training outputs; 0 when MetricKind::none
  double grad_norm = 0.0;
  std::uint64_t step_count = 0;
};

struct EpochStats {
  std::vector<MiniBatchSummary> mini_batches;
  /// Sample-weighted mean training loss over the epoch.
  double mean_loss = 0.0;
  std::uint64_t step_count = 0;
  std::size_t micro_batch_count = 0;
};

/// Shuffled sample order for an epoch, from the substream "shuffle/epoch/<e>".
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);

/// One pass over `data` in shuffled mini-batches; the last may be smaller and gets its own plan.
EpochStats train_epoch(Model& model, ParameterSet& params, const Dataset& data, OptimizerState& optimizer,
                       const EpochConfig& config);

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  double iou = 0.0;        // per-image mean
  double iou_micro = 0.0;  // pooled over all pixels
  double dice = 0.0;
};

/// Eval-mode pass over the whole dataset in chunks of `chunk` samples.
EvalResult evaluate(Model& model, const ParameterSet& params, const Dataset& data, const LossSpec& loss,
                    double threshold = 0.5, std::size_t chunk = 256);

}  // namespace mbs
