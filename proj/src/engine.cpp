#include "mbs/engine.hpp"

#include <algorithm>
#include <future>
#include <optional>

#include "mbs/errors.hpp"
#include "mbs/rng.hpp"

namespace mbs {

// ---- Plan ----

void MicroBatchPlan::validate() const {
  if (n_b == 0 || n_mu == 0 || n_mu > n_b) throw ArgumentError("plan needs 1 <= n_mu <= n_b");
  if (n_s_mu != (n_b + n_mu - 1) / n_mu) throw ArgumentError("plan micro-batch count is not ceil(n_b / n_mu)");
  if (sizes.size() != n_s_mu || ranges.size() != n_s_mu) throw ArgumentError("plan sizes/ranges length mismatch");
  std::size_t cursor = 0;
  for (std::size_t k = 0; k < n_s_mu; ++k) {
    if (sizes[k] == 0 || sizes[k] > n_mu) throw ArgumentError("plan micro-batch size out of range");
    if (ranges[k].begin != cursor || ranges[k].size() != sizes[k]) throw ArgumentError("plan ranges not contiguous");
    cursor = ranges[k].end;
  }
  if (cursor != n_b) throw ArgumentError("plan ranges do not cover the mini-batch");
}

MicroBatchPlan plan_split(std::size_t n_b, std::size_t n_mu) {
  if (n_b == 0 || n_mu == 0) throw ArgumentError("plan_split needs positive mini-batch and micro-batch sizes");
  if (n_b < n_mu) n_mu = n_b;
  MicroBatchPlan plan;
  plan.n_b = n_b;
  plan.n_mu = n_mu;
  plan.n_s_mu = (n_b + n_mu - 1) / n_mu;
  for (std::size_t begin = 0; begin < n_b; begin += n_mu) {
    const std::size_t end = std::min(begin + n_mu, n_b);
    plan.sizes.push_back(end - begin);
    plan.ranges.push_back({begin, end});
  }
  return plan;
}

std::string to_string(NormalizationMode mode) {
  switch (mode) {
    case NormalizationMode::paper_faithful: return "paper_faithful";
    case NormalizationMode::exact_weighted: return "exact_weighted";
    case NormalizationMode::off: return "off";
  }
  return "?";
}

NormalizationMode parse_normalization_mode(const std::string& text) {
  if (text == "paper_faithful") return NormalizationMode::paper_faithful;
  if (text == "exact_weighted") return NormalizationMode::exact_weighted;
  if (text == "off") return NormalizationMode::off;
  throw ArgumentError("unknown normalization mode '" + text + "'");
}

double normalization_factor(const MicroBatchPlan& plan, std::size_t k, NormalizationMode mode) {
  if (k >= plan.n_s_mu) throw ArgumentError("micro-batch index " + std::to_string(k) + " out of range");
  switch (mode) {
    case NormalizationMode::paper_faithful: return 1.0 / static_cast<double>(plan.n_s_mu);
    case NormalizationMode::exact_weighted:
      return static_cast<double>(plan.sizes[k]) / static_cast<double>(plan.n_b);
    case NormalizationMode::off: return 1.0;
  }
  return 1.0;
}

LossValue normalize_loss(const LossValue& loss, const MicroBatchPlan& plan, std::size_t k, NormalizationMode mode) {
  const double f = normalization_factor(plan, k, mode);
  return {loss.value * f, loss.n_samples, loss.scale * f};
}

// ---- Accumulator ----

GradientAccumulator::GradientAccumulator(const ParameterSet& params, std::size_t expected_micro_batches)
    : sums_(GradientSet::zeros_like(params)), expected_(expected_micro_batches) {}

void GradientAccumulator::accumulate(const GradientSet& grads) {
  require_same_layout(sums_, grads, "accumulate");
  if (seen_ >= expected_) {
    throw ArgumentError("accumulating micro-batch " + std::to_string(seen_ + 1) + " past the plan's " +
                        std::to_string(expected_));
  }
  for (std::size_t t = 0; t < sums_.size(); ++t) {
    auto dst = sums_[t].value.data();
    const auto src = grads[t].value.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
  ++seen_;
}

void GradientAccumulator::reset(std::size_t expected_micro_batches) {
  for (auto& e : sums_) e.value.fill(0.0);
  seen_ = 0;
  expected_ = expected_micro_batches;
}

GradientAccumulator& accumulate(GradientAccumulator& acc, const GradientSet& grads) {
  acc.accumulate(grads);
  return acc;
}

// ---- Training ----

MiniBatchStats accumulate_mini_batch(Model& model, const ParameterSet& params, const Batch& batch,
                                     const MicroBatchPlan& plan, NormalizationMode mode, const LossSpec& loss,
                                     const TrainOptions& options) {
  plan.validate();
  if (batch.size() != plan.n_b) {
    throw ArgumentError("batch has " + std::to_string(batch.size()) + " samples, plan expects " +
                        std::to_string(plan.n_b));
  }
  GradientAccumulator acc(params, plan.n_s_mu);
  MiniBatchStats stats;
  std::vector<Tensor> outputs;
  double weighted_loss = 0.0;

  // Two slots: the micro-batch being computed and, with prefetch, the next one being sliced.
  auto slice = [&batch, &plan](std::size_t k) { return batch.slice(plan.ranges[k].begin, plan.ranges[k].end); };
  std::optional<std::future<Batch>> next;
  Batch current = slice(0);

  for (std::size_t k = 0; k < plan.n_s_mu; ++k) {
    if (options.prefetch && k + 1 < plan.n_s_mu) next = std::async(std::launch::async, slice, k + 1);

    ForwardResult fr = forward(model, params, current.inputs, Mode::train);
    const LossValue raw = attach_loss(fr.tape, loss, current.targets);
    const LossValue norm = normalize_loss(raw, plan, k, mode);
    GradientSet grads;
    if (options.site == NormalizationSite::loss) {
      scale_loss(fr.tape, norm.scale);
      grads = backward(fr.tape, 1.0);
    } else {
      grads = backward(fr.tape, norm.scale);
    }
    acc.accumulate(grads);

    stats.micro.push_back({k, plan.sizes[k], raw.value, norm.scale, norm.value});
    weighted_loss += raw.value * static_cast<double>(plan.sizes[k]);
    outputs.push_back(std::move(fr.output));

    if (k + 1 < plan.n_s_mu) current = next ? next->get() : slice(k + 1);
    next.reset();
  }

  stats.loss = weighted_loss / static_cast<double>(plan.n_b);
  stats.accumulated = acc.sums();
  stats.grad_norm = l2_norm(stats.accumulated);
  stats.outputs = concat_rows(outputs);
  return stats;
}

MiniBatchStats train_mini_batch(Model& model, ParameterSet& params, const Batch& batch, const MicroBatchPlan& plan,
                                NormalizationMode mode, const LossSpec& loss, OptimizerState& optimizer,
                                const TrainOptions& options) {
  MiniBatchStats stats = accumulate_mini_batch(model, params, batch, plan, mode, loss, options);
  apply_update(params, stats.accumulated, optimizer);
  stats.step_count = optimizer.step_count();
  return stats;
}

GradientSet full_batch_gradient(Model& model, const ParameterSet& params, const Batch& batch, const LossSpec& loss) {
  ForwardResult fr = forward(model, params, batch.inputs, Mode::train);
  attach_loss(fr.tape, loss, batch.targets);
  return backward(fr.tape, 1.0);
}

MetricKind metric_for(const LossSpec& loss) {
  switch (loss.kind) {
    case LossKind::cross_entropy: return MetricKind::accuracy;
    case LossKind::bce:
    case LossKind::bce_dice: return MetricKind::iou;
    case LossKind::mse: return MetricKind::none;
  }
  return MetricKind::none;
}

double LrPolicy::lr_at(std::uint64_t update, std::size_t epoch) const {
  if (schedule == LrSchedule::constant) return initial_lr;
  if (unit == LrScheduleUnit::update) return linear_lr(initial_lr, update, total_updates);
  return linear_lr(initial_lr, epoch, total_epochs);
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  CounterRng rng = CounterRng::substream(seed, "shuffle/epoch/" + std::to_string(epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

namespace {

Tensor mask_probabilities(const LossSpec& loss, const Tensor& output) {
  Tensor p = loss.from_logits ? sigmoid(output) : output;
  for (double& v : p.data()) v = std::clamp(v, 0.0, 1.0);
  return p;
}

double training_metric(const LossSpec& loss, const Tensor& outputs, const Tensor& targets, double threshold) {
  switch (metric_for(loss)) {
    case MetricKind::accuracy: return accuracy(outputs, targets);
    case MetricKind::iou: return iou(MaskPair{mask_probabilities(loss, outputs), targets}, threshold);
    case MetricKind::none: return 0.0;
  }
  return 0.0;
}

}  // namespace

EpochStats train_epoch(Model& model, ParameterSet& params, const Dataset& data, OptimizerState& optimizer,
                       const EpochConfig& config) {
  if (data.size() == 0) throw ArgumentError("train_epoch needs a non-empty dataset");
  if (config.mini_batch_size == 0 || config.micro_batch_size == 0) {
    throw ArgumentError("mini-batch and micro-batch sizes must be positive");
  }
  const std::vector<std::size_t> order = epoch_order(data.size(), config.seed, config.epoch);
  EpochStats stats;
  double loss_sum = 0.0;
  for (std::size_t begin = 0; begin < order.size(); begin += config.mini_batch_size) {
    const std::size_t end = std::min(begin + config.mini_batch_size, order.size());
    const Batch batch = data.gather(std::span(order).subspan(begin, end - begin));
    const MicroBatchPlan plan = plan_split(batch.size(), config.micro_batch_size);
    optimizer.set_lr(config.lr.lr_at(optimizer.step_count(), config.epoch));
    const MiniBatchStats mb =
        train_mini_batch(model, params, batch, plan, config.mode, config.loss, optimizer, config.options);

    MiniBatchSummary s;
    s.size = plan.n_b;
    s.n_s_mu = plan.n_s_mu;
    s.loss = mb.loss;
    s.metric = training_metric(config.loss, mb.outputs, batch.targets, config.threshold);
    s.grad_norm = mb.grad_norm;
    s.step_count = mb.step_count;
    stats.mini_batches.push_back(s);
    stats.micro_batch_count += plan.n_s_mu;
    loss_sum += mb.loss * static_cast<double>(plan.n_b);
  }
  stats.mean_loss = loss_sum / static_cast<double>(data.size());
  stats.step_count = optimizer.step_count();
  return stats;
}

EvalResult evaluate(Model& model, const ParameterSet& params, const Dataset& data, const LossSpec& loss,
                    double threshold, std::size_t chunk) {
  if (chunk == 0) throw ArgumentError("evaluation chunk must be positive");
  EvalResult r;
  std::vector<Tensor> outputs;
  double loss_sum = 0.0;
  for (std::size_t begin = 0; begin < data.size(); begin += chunk) {
    const std::size_t end = std::min(begin + chunk, data.size());
    Tensor out = forward(model, params, data.inputs.slice_rows(begin, end), Mode::eval).output;
    loss_sum += mean_loss(loss, out, data.targets.slice_rows(begin, end)).value * static_cast<double>(end - begin);
    outputs.push_back(std::move(out));
  }
  r.loss = loss_sum / static_cast<double>(data.size());
  const Tensor all = concat_rows(outputs);
  switch (metric_for(loss)) {
    case MetricKind::accuracy: r.accuracy = accuracy(all, data.targets); break;
    case MetricKind::iou: {
      const MaskPair pair{mask_probabilities(loss, all), data.targets};
      r.iou = iou(pair, threshold);
      r.iou_micro = iou_micro(pair, threshold);
      r.dice = dice_coefficient(pair, threshold);
      break;
    }
    case MetricKind::none: break;
  }
  return r;
}

}  // namespace mbs
