#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

#include "mbs/losses.hpp"
#include "mbs/model.hpp"
#include "mbs/tensor.hpp"

namespace mbs {

enum class Mode { train, eval };

/// Intermediates a batchnorm forward keeps for its backward.
struct BatchNormCache {
  Tensor normalized;             // x-hat, same shape as the input
  std::vector<double> inv_std;   // per feature
  Mode mode = Mode::train;
};

/// Train mode normalizes with the statistics of `x` itself and updates `running`
/// (biased variance for normalization, unbiased for the running estimate when the
/// reduction has more than one element). Eval mode uses `running`. A zero
/// variance with zero epsilon yields x-hat = 0 rather than a division by zero.
Tensor batchnorm_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta, RunningStats& running, Mode mode,
                         double epsilon = 1e-5, double momentum = 0.1, BatchNormCache* cache = nullptr);

/// Everything a single layer retained during forward.
struct LayerRecord {
  std::size_t layer = 0;
  Tensor input;
  std::optional<BatchNormCache> batchnorm;
  std::vector<std::size_t> argmax;  // maxpool2d: flat input index of each output element
};

/// Record of one forward pass, consumed by exactly one backward.
///
/// The tape points at the Model and ParameterSet it was produced from; both must outlive it and
/// stay unmodified until backward runs.
class Tape {
 public:
  const Tensor& output() const noexcept { return output_; }
  std::size_t batch_size() const noexcept { return output_.dim(0); }
  const std::vector<LayerRecord>& records() const noexcept { return records_; }
  bool consumed() const noexcept { return consumed_; }
  bool has_loss() const noexcept { return loss_grad_.has_value(); }
  double loss_scale() const noexcept { return loss_scale_; }

  /// Elements held by value: layer inputs, batchnorm x-hat and per-feature scales,
  /// maxpool argmax indices, the output, and the loss gradient once attached.
  std::size_t retained_elements() const;

  /// Smallest distance of any relu input from 0 and of any maxpool winner from its runner-up.
  /// Finite differences with step well below this margin never cross a kink.
  double min_kink_margin() const;

 private:
  friend struct TapeAccess;
  const Model* model_ = nullptr;
  const ParameterSet* params_ = nullptr;
  Mode mode_ = Mode::train;
  std::vector<LayerRecord> records_;
  Tensor output_;
  std::optional<Tensor> loss_grad_;
  double loss_scale_ = 1.0;
  bool consumed_ = false;
};

struct ForwardResult {
  Tensor output;
  Tape tape;
};

/// Runs every layer on `input` (N, input_shape...). Train mode updates batchnorm running stats.
/// Throws ShapeError on a mismatched input and OverflowError naming the layer on non-finite values.
ForwardResult forward(Model& model, const ParameterSet& params, const Tensor& input, Mode mode);

/// Reduces the tape's output to the scalar `mean_loss(spec, output, target)` and returns it.
LossValue attach_loss(Tape& tape, const LossSpec& spec, const Tensor& target);

/// Multiplies the tape's scalar loss by `factor` (a differentiable scaling node).
void scale_loss(Tape& tape, double factor);

/// Reverse pass. `seed` is dL/dL for the tape's scalar loss. Throws TapeError if no loss was
/// attached or the tape was already consumed.
GradientSet backward(Tape& tape, double seed = 1.0);

/// Loss of (output, target) used by the finite-difference oracle.
using LossFn = std::function<double(const Tensor& output, const Tensor& target)>;

/// Central differences (L(θ+eps) - L(θ-eps)) / (2 eps) for every scalar parameter. Forward passes run
/// on a copy of `model`, so running statistics are untouched; each parameter is restored bit-exactly.
GradientSet finite_difference_gradients(const Model& model, ParameterSet& params, const LossFn& loss_fn,
                                        const Batch& batch, double eps, Mode mode = Mode::train);

LossFn make_loss_fn(const LossSpec& spec);

}  // namespace mbs
