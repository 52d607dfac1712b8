#include "mbs/optim.hpp"

#include <cmath>

#include "mbs/errors.hpp"

namespace mbs {

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::sgd ? "sgd" : "adam"; }

OptimizerKind parse_optimizer_kind(const std::string& text) {
  if (text == "sgd") return OptimizerKind::sgd;
  if (text == "adam") return OptimizerKind::adam;
  throw ArgumentError("unknown optimizer '" + text + "'");
}

OptimizerState::OptimizerState(OptimizerConfig config, const ParameterSet& params) : config_(config) {
  if (!(config_.lr >= 0.0) || config_.momentum < 0.0 || config_.weight_decay < 0.0) {
    throw ArgumentError("optimizer needs lr >= 0, momentum >= 0, weight_decay >= 0");
  }
  first_ = GradientSet::zeros_like(params);
  if (config_.kind == OptimizerKind::adam) second_ = GradientSet::zeros_like(params);
}

void OptimizerState::set_lr(double lr) {
  if (!(lr >= 0.0)) throw ArgumentError("learning rate must be non-negative");
  config_.lr = lr;
}

void sgd_step(ParameterSet& params, const GradientSet& grads, OptimizerState& state) {
  require_same_layout(params, grads, "sgd_step");
  const OptimizerConfig& c = state.config_;
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor& w = params[t].value;
    const Tensor& g = grads[t].value;
    Tensor& v = state.first_[t].value;
    for (std::size_t i = 0; i < w.numel(); ++i) {
      const double gd = g[i] + c.weight_decay * w[i];
      v[i] = c.momentum * v[i] + gd;
      w[i] -= c.lr * v[i];
    }
  }
  ++state.step_count_;
}

void adam_step(ParameterSet& params, const GradientSet& grads, OptimizerState& state) {
  require_same_layout(params, grads, "adam_step");
  if (state.second_.empty() && !params.empty()) throw ArgumentError("adam_step needs an Adam optimizer state");
  const OptimizerConfig& c = state.config_;
  const double t = static_cast<double>(state.step_count_ + 1);
  const double bc1 = 1.0 - std::pow(c.adam_beta1, t);
  const double bc2 = 1.0 - std::pow(c.adam_beta2, t);
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& w = params[p].value;
    const Tensor& g = grads[p].value;
    Tensor& m = state.first_[p].value;
    Tensor& v = state.second_[p].value;
    for (std::size_t i = 0; i < w.numel(); ++i) {
      const double gd = g[i] + c.weight_decay * w[i];
      m[i] = c.adam_beta1 * m[i] + (1.0 - c.adam_beta1) * gd;
      v[i] = c.adam_beta2 * v[i] + (1.0 - c.adam_beta2) * gd * gd;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= c.lr * mhat / (std::sqrt(vhat) + c.adam_eps);
    }
  }
  ++state.step_count_;
}

void apply_update(ParameterSet& params, const GradientSet& grads, OptimizerState& state) {
  if (state.config().kind == OptimizerKind::sgd) {
    sgd_step(params, grads, state);
  } else {
    adam_step(params, grads, state);
  }
}

double linear_lr(double initial_lr, std::uint64_t step, std::uint64_t total_steps) {
  if (total_steps == 0) throw ArgumentError("linear_lr needs total_steps > 0");
  if (step >= total_steps) return 0.0;
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  const double lr = initial_lr * (1.0 - frac);
  return lr < 0.0 ? 0.0 : lr;
}

}  // namespace mbs
