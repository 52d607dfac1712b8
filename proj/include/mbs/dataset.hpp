#pragma once

#include <cstddef>
#include <span>

#include "mbs/model.hpp"
#include "mbs/tensor.hpp"

namespace mbs {

enum class TaskKind { classification, segmentation, regression };

/// In-memory samples. Classification targets are class indices of shape (N);
/// segmentation targets are binary masks shaped like the model output.
struct Dataset {
  Tensor inputs;
  Tensor targets;
  TaskKind task = TaskKind::classification;
  std::size_t n_classes = 0;

  std::size_t size() const { return inputs.dim(0); }
  Batch gather(std::span<const std::size_t> rows) const {
    return {inputs.gather_rows(rows), targets.gather_rows(rows)};
  }
};

}  // namespace mbs
