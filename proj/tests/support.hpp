#pragma once

#include <cstdint>
#include <string>

#include "mbs/autograd.hpp"
#include "mbs/engine.hpp"
#include "mbs/losses.hpp"
#include "mbs/model.hpp"
#include "mbs/rng.hpp"

namespace mbs::testing {

/// A random batchnorm-free model with a batch drawn for it.
struct Instance {
  ModelSpec spec;
  Shape input_shape;
  LossSpec loss;
  std::uint64_t seed = 0;
  Batch batch;
  std::string description;
};

struct InstanceOptions {
  std::size_t min_param_layers = 1;
  std::size_t max_param_layers = 4;
  std::size_t min_batch = 4;
  std::size_t max_batch = 64;
  bool allow_maxpool = true;
  bool allow_bce = false;
  /// Redraw until every relu / maxpool decision is at least this far from its kink.
  double min_kink_margin = 0.0;
};

/// Deterministic in `rng`; redraws internally until the kink margin holds.
Instance random_instance(CounterRng& rng, const InstanceOptions& options);

/// Uniform targets suited to `loss` for a model with per-sample `output_shape`.
Tensor random_targets(CounterRng& rng, const LossSpec& loss, std::size_t n, const Shape& output_shape);

Tensor random_tensor(CounterRng& rng, const Shape& shape, double lo = -1.0, double hi = 1.0);

/// A divisor of n chosen uniformly among those below n (1 if n is prime).
std::size_t random_proper_divisor(CounterRng& rng, std::size_t n);

std::string describe(const ModelSpec& spec);

}  // namespace mbs::testing
