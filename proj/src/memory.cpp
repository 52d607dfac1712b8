#include "mbs/memory.hpp"

#include <string>

#include "mbs/errors.hpp"

namespace mbs {

MemoryEstimate estimate_memory(const ModelSpec& spec, const Shape& input_shape, std::size_t n_mu,
                               OptimizerKind optimizer) {
  if (n_mu == 0) throw ArgumentError("estimate_memory needs n_mu >= 1");
  const std::vector<Shape> shapes = infer_shapes(spec, input_shape);
  MemoryEstimate e;
  std::uint64_t per_sample = 0;
  std::uint64_t per_batch = 0;
  for (std::size_t k = 0; k < spec.layers.size(); ++k) {
    const std::uint64_t in = shape_numel(shapes[k]);
    const std::uint64_t out = shape_numel(shapes[k + 1]);
    per_sample += in;
    const LayerSpec& layer = spec.layers[k];
    if (const auto* d = std::get_if<DenseSpec>(&layer)) {
      e.param_count += d->in * d->out + (d->bias ? d->out : 0);
    } else if (const auto* c = std::get_if<Conv2dSpec>(&layer)) {
      e.param_count += c->out_ch * c->in_ch * c->kernel * c->kernel + c->out_ch;
    } else if (const auto* b = std::get_if<BatchNormSpec>(&layer)) {
      e.param_count += 2 * b->features;
      per_sample += in;
      per_batch += b->features;
    } else if (std::holds_alternative<MaxPool2dSpec>(layer)) {
      per_sample += out;
    }
  }
  // Output plus the loss gradient seeded from it.
  per_sample += 2 * shape_numel(shapes.back());

  const std::uint64_t state_copies = optimizer == OptimizerKind::adam ? 2 : 1;
  e.param_bytes = kBytesPerElement * e.param_count * (2 + state_copies);
  e.data_bytes_per_sample = kBytesPerElement * per_sample;
  e.workspace_bytes = kBytesPerElement * per_batch;
  return e;
}

void MemoryBudget::validate() const {
  if (capacity_bytes == 0) throw ArgumentError("memory capacity must be positive");
  if (data_bytes_per_sample == 0) throw ArgumentError("per-sample data bytes must be positive");
}

bool MemoryBudget::fits(std::uint64_t n) const {
  const std::uint64_t fixed = param_bytes + fixed_overhead_bytes;
  if (fixed > capacity_bytes) return false;
  // Division form avoids overflow for large n.
  return n <= (capacity_bytes - fixed) / data_bytes_per_sample;
}

MemoryBudget make_budget(const MemoryEstimate& estimate, std::uint64_t capacity_bytes,
                         std::uint64_t fixed_overhead_bytes) {
  return {capacity_bytes, estimate.param_bytes, estimate.data_bytes_per_sample,
          fixed_overhead_bytes + estimate.workspace_bytes};
}

std::uint64_t fit_micro_batch(const MemoryBudget& budget) {
  budget.validate();
  const std::uint64_t fixed = budget.param_bytes + budget.fixed_overhead_bytes;
  const std::uint64_t remaining = fixed <= budget.capacity_bytes ? budget.capacity_bytes - fixed : 0;
  if (fixed > budget.capacity_bytes || remaining < budget.data_bytes_per_sample) {
    throw ModelDoesNotFitError("model does not fit: capacity " + std::to_string(budget.capacity_bytes) +
                               " bytes < parameters " + std::to_string(budget.param_bytes) + " + overhead " +
                               std::to_string(budget.fixed_overhead_bytes) + " + one sample " +
                               std::to_string(budget.data_bytes_per_sample));
  }
  return remaining / budget.data_bytes_per_sample;
}

}  // namespace mbs
