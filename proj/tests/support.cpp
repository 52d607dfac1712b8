#include "support.hpp"

#include <vector>

#include "mbs/config.hpp"

namespace mbs::testing {

Tensor random_tensor(CounterRng& rng, const Shape& shape, double lo, double hi) {
  Tensor t(shape);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

Tensor random_targets(CounterRng& rng, const LossSpec& loss, std::size_t n, const Shape& output_shape) {
  Shape full{n};
  full.insert(full.end(), output_shape.begin(), output_shape.end());
  switch (loss.kind) {
    case LossKind::cross_entropy: {
      Tensor t(Shape{n});
      for (double& v : t.data()) v = static_cast<double>(rng.below(output_shape.at(0)));
      return t;
    }
    case LossKind::bce:
    case LossKind::bce_dice: {
      Tensor t(full);
      for (double& v : t.data()) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
      return t;
    }
    case LossKind::mse:
      break;
  }
  return random_tensor(rng, full);
}

std::size_t random_proper_divisor(CounterRng& rng, std::size_t n) {
  std::vector<std::size_t> divisors;
  for (std::size_t d = 1; d < n; ++d)
    if (n % d == 0) divisors.push_back(d);
  if (divisors.empty()) return 1;
  return divisors[rng.below(divisors.size())];
}

std::string describe(const ModelSpec& spec) {
  std::string out;
  for (const LayerSpec& l : spec.layers) {
    if (!out.empty()) out += " -> ";
    out += format_layer(l);
  }
  return out;
}

namespace {

std::size_t pick(CounterRng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

/// Conv stack: (c, h, w) input, conv layers with optional relu / maxpool, then optionally
/// flatten + dense.
ModelSpec conv_spec(CounterRng& rng, std::size_t param_layers, bool allow_maxpool, Shape& input) {
  std::size_t c = pick(rng, 1, 2), h = pick(rng, 4, 7), w = pick(rng, 4, 7);
  input = {c, h, w};
  ModelSpec spec;
  const bool dense_head = param_layers > 1 && rng.uniform() < 0.7;
  const std::size_t convs = dense_head ? param_layers - 1 : param_layers;
  for (std::size_t i = 0; i < convs; ++i) {
    Conv2dSpec conv;
    conv.in_ch = c;
    conv.out_ch = pick(rng, 1, 3);
    conv.kernel = pick(rng, 1, std::min<std::size_t>(3, std::min(h, w)));
    conv.padding = pick(rng, 0, 1);
    conv.stride = pick(rng, 1, 2);
    const std::size_t oh = (h + 2 * conv.padding - conv.kernel) / conv.stride + 1;
    const std::size_t ow = (w + 2 * conv.padding - conv.kernel) / conv.stride + 1;
    spec.layers.push_back(conv);
    c = conv.out_ch, h = oh, w = ow;
    if (rng.uniform() < 0.6) spec.layers.push_back(ReluSpec{});
    if (allow_maxpool && h >= 2 && w >= 2 && rng.uniform() < 0.3) {
      spec.layers.push_back(MaxPool2dSpec{2, 2});
      h = (h - 2) / 2 + 1, w = (w - 2) / 2 + 1;
    }
  }
  if (dense_head) {
    spec.layers.push_back(FlattenSpec{});
    spec.layers.push_back(DenseSpec{c * h * w, pick(rng, 1, 4), rng.uniform() < 0.8});
  }
  return spec;
}

ModelSpec dense_spec(CounterRng& rng, std::size_t param_layers, Shape& input) {
  std::size_t width = pick(rng, 1, 6);
  input = {width};
  ModelSpec spec;
  for (std::size_t i = 0; i < param_layers; ++i) {
    const std::size_t out = pick(rng, 1, 6);
    spec.layers.push_back(DenseSpec{width, out, rng.uniform() < 0.8});
    width = out;
    if (i + 1 < param_layers && rng.uniform() < 0.8) spec.layers.push_back(ReluSpec{});
  }
  return spec;
}

LossSpec pick_loss(CounterRng& rng, const Shape& output, bool allow_bce) {
  const double u = rng.uniform();
  if (output.size() == 1 && output[0] >= 2 && u < 0.35) return {LossKind::cross_entropy};
  if (allow_bce && u > 0.75) return {LossKind::bce};
  return {LossKind::mse};
}

}  // namespace

Instance random_instance(CounterRng& rng, const InstanceOptions& options) {
  for (;;) {
    Instance inst;
    const std::size_t layers = pick(rng, options.min_param_layers, options.max_param_layers);
    inst.spec = rng.uniform() < 0.5 ? dense_spec(rng, layers, inst.input_shape)
                                    : conv_spec(rng, layers, options.allow_maxpool, inst.input_shape);
    Model model(inst.spec, inst.input_shape);
    inst.loss = pick_loss(rng, model.output_shape(), options.allow_bce);
    inst.seed = rng.next_u64();
    const std::size_t n = pick(rng, options.min_batch, options.max_batch);
    Shape full{n};
    full.insert(full.end(), inst.input_shape.begin(), inst.input_shape.end());
    inst.batch.inputs = random_tensor(rng, full);
    inst.batch.targets = random_targets(rng, inst.loss, n, model.output_shape());
    inst.description = describe(inst.spec) + " | loss=" + to_string(inst.loss.kind) + " | N=" + std::to_string(n);
    if (options.min_kink_margin > 0.0) {
      BuiltModel built = build_model(inst.spec, inst.input_shape, inst.seed);
      ForwardResult fr = forward(built.model, built.params, inst.batch.inputs, Mode::train);
      if (fr.tape.min_kink_margin() < options.min_kink_margin) continue;
    }
    return inst;
  }
}

}  // namespace mbs::testing
