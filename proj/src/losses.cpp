#include "mbs/losses.hpp"

#include <algorithm>
#include <cmath>

#include "mbs/errors.hpp"

namespace mbs {

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::mse: return "mse";
    case LossKind::cross_entropy: return "cross_entropy";
    case LossKind::bce: return "bce";
    case LossKind::bce_dice: return "bce_dice";
  }
  return "?";
}

LossKind parse_loss_kind(const std::string& text) {
  if (text == "mse") return LossKind::mse;
  if (text == "cross_entropy") return LossKind::cross_entropy;
  if (text == "bce") return LossKind::bce;
  if (text == "bce_dice") return LossKind::bce_dice;
  throw ArgumentError("unknown loss kind '" + text + "'");
}

namespace {

std::size_t class_index(double t, std::size_t classes) {
  if (!(t >= 0.0) || t != std::floor(t) || t >= static_cast<double>(classes)) {
    throw ArgumentError("class index " + std::to_string(t) + " out of range for " + std::to_string(classes) +
                        " classes");
  }
  return static_cast<std::size_t>(t);
}

void check_same_shape(const Tensor& output, const Tensor& target, const char* what) {
  if (output.shape() != target.shape()) {
    throw ShapeError(std::string(what) + ": output " + shape_to_string(output.shape()) + " vs target " +
                     shape_to_string(target.shape()));
  }
}

void check_class_target(const Tensor& output, const Tensor& target) {
  if (output.rank() != 2) throw ShapeError("cross_entropy expects (N,C) logits, got " + shape_to_string(output.shape()));
  if (target.numel() != output.dim(0) || target.dim(0) != output.dim(0)) {
    throw ShapeError("cross_entropy expects one class index per row, got target " + shape_to_string(target.shape()));
  }
}

double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

double sigmoid1(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// Probabilities the bce-style losses see for `output`.
Tensor probabilities(const LossSpec& spec, const Tensor& output) {
  return spec.from_logits ? sigmoid(output) : output;
}

// Elementwise BCE on probabilities, mean over all elements (== mean of per-sample means).
double bce_value(const Tensor& p, const Tensor& g) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.numel(); ++i) {
    const double q = clamp_prob(p[i]);
    s += -(g[i] * std::log(q) + (1.0 - g[i]) * std::log(1.0 - q));
  }
  return s / static_cast<double>(p.numel());
}

// Per-image soft dice terms.
struct DiceSums {
  double inter = 0.0;
  double pred = 0.0;
  double truth = 0.0;
};

std::vector<DiceSums> dice_sums(const Tensor& p, const Tensor& g, std::size_t images) {
  const std::size_t m = p.numel() / images;
  std::vector<DiceSums> out(images);
  for (std::size_t n = 0; n < images; ++n) {
    for (std::size_t j = n * m; j < (n + 1) * m; ++j) {
      out[n].inter += p[j] * g[j];
      out[n].pred += p[j];
      out[n].truth += g[j];
    }
  }
  return out;
}

std::size_t image_count(const Tensor& t) { return t.rank() == 1 ? 1 : t.dim(0); }

double soft_dice_loss_value(const Tensor& p, const Tensor& g, double s) {
  const std::size_t images = image_count(p);
  double total = 0.0;
  for (const DiceSums& d : dice_sums(p, g, images)) {
    const double den = d.pred + d.truth + s;
    const double dc = den == 0.0 ? 1.0 : (2.0 * d.inter + s) / den;
    total += 1.0 - dc;
  }
  return total / static_cast<double>(images);
}

// d(soft dice loss)/dp.
Tensor soft_dice_loss_grad(const Tensor& p, const Tensor& g, double s) {
  const std::size_t images = image_count(p);
  const std::size_t m = p.numel() / images;
  const auto sums = dice_sums(p, g, images);
  Tensor grad(p.shape(), 0.0);
  for (std::size_t n = 0; n < images; ++n) {
    const double den = sums[n].pred + sums[n].truth + s;
    if (den == 0.0) continue;
    const double num = 2.0 * sums[n].inter + s;
    for (std::size_t j = n * m; j < (n + 1) * m; ++j) {
      const double d_dc = (2.0 * g[j] * den - num) / (den * den);
      grad[j] = -d_dc / static_cast<double>(images);
    }
  }
  return grad;
}

struct SetCounts {
  std::size_t inter = 0;
  std::size_t a = 0;
  std::size_t b = 0;
};

std::vector<SetCounts> set_counts(const MaskPair& pair, double threshold) {
  pair.validate();
  if (!(threshold > 0.0 && threshold < 1.0)) throw ArgumentError("threshold must be in (0,1)");
  const std::size_t images = pair.images();
  const std::size_t m = pair.pixels_per_image();
  std::vector<SetCounts> out(images);
  for (std::size_t n = 0; n < images; ++n) {
    for (std::size_t j = n * m; j < (n + 1) * m; ++j) {
      const bool in_b = pair.prediction[j] >= threshold;
      const bool in_a = pair.ground_truth[j] == 1.0;
      out[n].a += in_a;
      out[n].b += in_b;
      out[n].inter += in_a && in_b;
    }
  }
  return out;
}

}  // namespace

Tensor sigmoid(const Tensor& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = sigmoid1(x[i]);
  return out;
}

LossValue mean_loss(const LossSpec& spec, const Tensor& output, const Tensor& target) {
  const std::size_t n = output.dim(0);
  double value = 0.0;
  switch (spec.kind) {
    case LossKind::mse: {
      check_same_shape(output, target, "mse");
      // Per-sample means summed, then divided by N; same as the element mean for uniform rows.
      const std::size_t m = output.row_numel();
      for (std::size_t r = 0; r < n; ++r) {
        double s = 0.0;
        for (std::size_t j = r * m; j < (r + 1) * m; ++j) {
          const double d = output[j] - target[j];
          s += d * d;
        }
        value += s / static_cast<double>(m);
      }
      value /= static_cast<double>(n);
      break;
    }
    case LossKind::cross_entropy: {
      check_class_target(output, target);
      const std::size_t c = output.dim(1);
      for (std::size_t r = 0; r < n; ++r) {
        const std::size_t y = class_index(target[r], c);
        double mx = output[r * c];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, output[r * c + j]);
        double se = 0.0;
        for (std::size_t j = 0; j < c; ++j) se += std::exp(output[r * c + j] - mx);
        value += mx + std::log(se) - output[r * c + y];
      }
      value /= static_cast<double>(n);
      break;
    }
    case LossKind::bce: {
      check_same_shape(output, target, "bce");
      value = bce_value(probabilities(spec, output), target);
      break;
    }
    case LossKind::bce_dice: {
      check_same_shape(output, target, "bce_dice");
      const Tensor p = probabilities(spec, output);
      value = bce_value(p, target) + soft_dice_loss_value(p, target, spec.dice_smoothing);
      break;
    }
  }
  if (!std::isfinite(value)) throw OverflowError(0, "loss " + to_string(spec.kind) + " is not finite");
  return {value, n, 1.0};
}

Tensor mean_loss_grad(const LossSpec& spec, const Tensor& output, const Tensor& target) {
  const std::size_t n = output.dim(0);
  Tensor grad(output.shape(), 0.0);
  switch (spec.kind) {
    case LossKind::mse: {
      check_same_shape(output, target, "mse");
      const double k = 2.0 / static_cast<double>(output.numel());
      for (std::size_t i = 0; i < output.numel(); ++i) grad[i] = k * (output[i] - target[i]);
      break;
    }
    case LossKind::cross_entropy: {
      check_class_target(output, target);
      const std::size_t c = output.dim(1);
      for (std::size_t r = 0; r < n; ++r) {
        const std::size_t y = class_index(target[r], c);
        double mx = output[r * c];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, output[r * c + j]);
        double se = 0.0;
        for (std::size_t j = 0; j < c; ++j) se += std::exp(output[r * c + j] - mx);
        for (std::size_t j = 0; j < c; ++j) {
          const double softmax = std::exp(output[r * c + j] - mx) / se;
          grad[r * c + j] = (softmax - (j == y ? 1.0 : 0.0)) / static_cast<double>(n);
        }
      }
      break;
    }
    case LossKind::bce:
    case LossKind::bce_dice: {
      check_same_shape(output, target, to_string(spec.kind).c_str());
      const Tensor p = probabilities(spec, output);
      const double inv = 1.0 / static_cast<double>(output.numel());
      // d bce / dp, zero where the clamp is active.
      for (std::size_t i = 0; i < p.numel(); ++i) {
        if (p[i] <= kProbClamp || p[i] >= 1.0 - kProbClamp) continue;
        grad[i] = inv * (-(target[i] / p[i]) + (1.0 - target[i]) / (1.0 - p[i]));
      }
      if (spec.kind == LossKind::bce_dice) {
        const Tensor dd = soft_dice_loss_grad(p, target, spec.dice_smoothing);
        for (std::size_t i = 0; i < p.numel(); ++i) grad[i] += dd[i];
      }
      if (spec.from_logits) {
        for (std::size_t i = 0; i < p.numel(); ++i) grad[i] *= p[i] * (1.0 - p[i]);
      }
      break;
    }
  }
  return grad;
}

void MaskPair::validate() const {
  if (prediction.shape() != ground_truth.shape()) {
    throw ArgumentError("mask pair shapes differ: " + shape_to_string(prediction.shape()) + " vs " +
                        shape_to_string(ground_truth.shape()));
  }
  for (double p : prediction.data()) {
    if (!(p >= 0.0 && p <= 1.0)) throw ArgumentError("mask prediction outside [0,1]");
  }
  for (double g : ground_truth.data()) {
    if (g != 0.0 && g != 1.0) throw ArgumentError("mask ground truth must be binary");
  }
}

std::size_t MaskPair::images() const { return image_count(prediction); }
std::size_t MaskPair::pixels_per_image() const { return prediction.numel() / images(); }

double dice_coefficient(const MaskPair& pair, double threshold) {
  const auto counts = set_counts(pair, threshold);
  double total = 0.0;
  for (const SetCounts& c : counts) {
    total += (c.a + c.b == 0) ? 1.0 : 2.0 * static_cast<double>(c.inter) / static_cast<double>(c.a + c.b);
  }
  return total / static_cast<double>(counts.size());
}

double iou(const MaskPair& pair, double threshold) {
  const auto counts = set_counts(pair, threshold);
  double total = 0.0;
  for (const SetCounts& c : counts) {
    const std::size_t uni = c.a + c.b - c.inter;
    total += uni == 0 ? 1.0 : static_cast<double>(c.inter) / static_cast<double>(uni);
  }
  return total / static_cast<double>(counts.size());
}

double iou_micro(const MaskPair& pair, double threshold) {
  std::size_t inter = 0, uni = 0;
  for (const SetCounts& c : set_counts(pair, threshold)) {
    inter += c.inter;
    uni += c.a + c.b - c.inter;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

LossValue dice_loss(const MaskPair& pair, double smoothing) {
  pair.validate();
  if (smoothing < 0.0) throw ArgumentError("dice smoothing must be non-negative");
  return {soft_dice_loss_value(pair.prediction, pair.ground_truth, smoothing), pair.images(), 1.0};
}

LossValue bce_loss(const MaskPair& pair) {
  pair.validate();
  return {bce_value(pair.prediction, pair.ground_truth), pair.images(), 1.0};
}

LossValue combined_bce_dice(const MaskPair& pair, double smoothing) {
  const LossValue b = bce_loss(pair);
  const LossValue d = dice_loss(pair, smoothing);
  return {b.value + d.value, b.n_samples, 1.0};
}

double accuracy(const Tensor& output, const Tensor& target) {
  check_class_target(output, target);
  const std::size_t n = output.dim(0), c = output.dim(1);
  std::size_t correct = 0;
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j) {
      if (output[r * c + j] > output[r * c + best]) best = j;
    }
    correct += best == class_index(target[r], c);
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace mbs
