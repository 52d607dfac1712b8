#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "mbs/model.hpp"

namespace mbs {

enum class OptimizerKind { sgd, adam };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(const std::string& text);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

/// Hyperparameters plus per-parameter state. Weight decay is coupled (added to the gradient).
class OptimizerState {
 public:
  OptimizerState(OptimizerConfig config, const ParameterSet& params);

  const OptimizerConfig& config() const noexcept { return config_; }
  double lr() const noexcept { return config_.lr; }
  void set_lr(double lr);
  std::uint64_t step_count() const noexcept { return step_count_; }

  /// SGD velocity, or Adam first moment.
  const GradientSet& first() const noexcept { return first_; }
  /// Adam second moment (empty tensors for SGD).
  const GradientSet& second() const noexcept { return second_; }
  GradientSet& first() noexcept { return first_; }

 private:
  friend void sgd_step(ParameterSet&, const GradientSet&, OptimizerState&);
  friend void adam_step(ParameterSet&, const GradientSet&, OptimizerState&);
  OptimizerConfig config_;
  GradientSet first_;
  GradientSet second_;
  std::uint64_t step_count_ = 0;
};

/// g' = g + wd*w; v = momentum*v + g'; w -= lr*v.
void sgd_step(ParameterSet& params, const GradientSet& grads, OptimizerState& state);
/// Bias-corrected Adam on g' = g + wd*w.
void adam_step(ParameterSet& params, const GradientSet& grads, OptimizerState& state);
/// Dispatches on the configured kind. Increments step_count by exactly one.
void apply_update(ParameterSet& params, const GradientSet& grads, OptimizerState& state);

/// initial_lr * (1 - step/total_steps), clamped at 0.
double linear_lr(double initial_lr, std::uint64_t step, std::uint64_t total_steps);

enum class LrSchedule { constant, linear };
/// Whether the linear schedule advances per optimizer update or per epoch.
enum class LrScheduleUnit { update, epoch };

}  // namespace mbs
