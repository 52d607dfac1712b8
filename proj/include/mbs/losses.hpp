#pragma once

#include <cstddef>
#include <string>

#include "mbs/tensor.hpp"

namespace mbs {

enum class LossKind { mse, cross_entropy, bce, bce_dice };

std::string to_string(LossKind kind);
LossKind parse_loss_kind(const std::string& text);

struct LossSpec {
  LossKind kind = LossKind::mse;
  /// bce / bce_dice: apply a sigmoid to the model output first.
  bool from_logits = true;
  /// Soft-dice smoothing constant.
  double dice_smoothing = 1.0;
  friend bool operator==(const LossSpec&, const LossSpec&) = default;
};

/// A batch-mean loss. `scale` is the product of all normalization factors already applied to `value`.
struct LossValue {
  double value = 0.0;
  std::size_t n_samples = 0;
  double scale = 1.0;
};

/// Probabilities are clamped to [kProbClamp, 1 - kProbClamp] before any log.
inline constexpr double kProbClamp = 1e-12;

/// (1/N) * sum of per-sample losses, N = leading dimension. Per-sample losses of
/// element-wise kinds are the mean over that sample's elements.
/// cross_entropy: output (N,C) logits, target (N) or (N,1) class indices.
LossValue mean_loss(const LossSpec& spec, const Tensor& output, const Tensor& target);
inline LossValue mean_loss(LossKind kind, const Tensor& output, const Tensor& target) {
  return mean_loss(LossSpec{kind}, output, target);
}

/// d mean_loss / d output, same shape as output.
Tensor mean_loss_grad(const LossSpec& spec, const Tensor& output, const Tensor& target);

Tensor sigmoid(const Tensor& x);

/// Prediction probabilities in [0,1] and binary ground truth of identical shape.
/// The leading axis indexes images; a rank-1 pair is a single image.
struct MaskPair {
  Tensor prediction;
  Tensor ground_truth;

  /// Throws ArgumentError if shapes differ, predictions leave [0,1], or ground truth is not binary.
  void validate() const;
  std::size_t images() const;
  std::size_t pixels_per_image() const;
};

/// 2|A∩B| / (|A|+|B|) on the thresholded prediction, averaged over images; 1 for two empty masks.
double dice_coefficient(const MaskPair& pair, double threshold = 0.5);
/// |A∩B| / |A∪B| per image, averaged over images; 1 for two empty masks.
double iou(const MaskPair& pair, double threshold = 0.5);
/// Intersection and union pooled across all images before dividing.
double iou_micro(const MaskPair& pair, double threshold = 0.5);

/// Per-image 1 - (2Σpg + s)/(Σp + Σg + s), mean over images. A zero denominator counts as DC=1.
LossValue dice_loss(const MaskPair& pair, double smoothing = 1.0);
LossValue bce_loss(const MaskPair& pair);
/// bce_loss + dice_loss.
LossValue combined_bce_dice(const MaskPair& pair, double smoothing = 1.0);

/// Fraction of rows whose argmax (lowest index on ties) equals the target class.
double accuracy(const Tensor& output, const Tensor& target);

}  // namespace mbs
