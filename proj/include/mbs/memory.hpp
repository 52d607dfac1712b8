#pragma once

#include <cstddef>
#include <cstdint>

#include "mbs/model.hpp"
#include "mbs/optim.hpp"

namespace mbs {

inline constexpr std::uint64_t kBytesPerElement = 8;

/// Analytic device-memory demand of a model, derived from shapes only.
struct MemoryEstimate {
  std::uint64_t param_count = 0;
  /// 8 * params * (1 value + 1 gradient + optimizer state: 1 for SGD, 2 for Adam).
  std::uint64_t param_bytes = 0;
  /// 8 * elements the forward tape retains per sample (inputs, x-hat, argmax, output, loss gradient).
  std::uint64_t data_bytes_per_sample = 0;
  /// Per-batch tape state independent of the batch size (batchnorm inverse std per feature).
  std::uint64_t workspace_bytes = 0;

  std::uint64_t data_bytes(std::uint64_t n_mu) const { return n_mu * data_bytes_per_sample + workspace_bytes; }
};

/// Estimate for a micro-batch of `n_mu` samples. The tape's retained_elements() equals
/// n_mu * data_bytes_per_sample / 8 + workspace_bytes / 8 for the same model and batch.
MemoryEstimate estimate_memory(const ModelSpec& spec, const Shape& input_shape, std::size_t n_mu,
                               OptimizerKind optimizer);

/// Simulated device split into model-parameter space and data space.
struct MemoryBudget {
  std::uint64_t capacity_bytes = 0;
  std::uint64_t param_bytes = 0;
  std::uint64_t data_bytes_per_sample = 0;
  std::uint64_t fixed_overhead_bytes = 0;

  /// Throws ArgumentError when the budget is malformed.
  void validate() const;
  /// True if `n` samples fit beside the parameters and fixed overhead.
  bool fits(std::uint64_t n) const;
};

/// Budget from an estimate; the estimate's workspace is folded into the fixed overhead.
MemoryBudget make_budget(const MemoryEstimate& estimate, std::uint64_t capacity_bytes,
                         std::uint64_t fixed_overhead_bytes);

/// Largest n with param + overhead + n * per_sample <= capacity. Throws ModelDoesNotFitError if n = 1 fails.
std::uint64_t fit_micro_batch(const MemoryBudget& budget);

}  // namespace mbs
