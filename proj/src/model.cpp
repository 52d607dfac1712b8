#include "mbs/model.hpp"

#include <algorithm>
#include <cmath>

#include "mbs/errors.hpp"
#include "mbs/rng.hpp"

namespace mbs {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::string at_layer(std::size_t k) { return "layer " + std::to_string(k) + ": "; }

}  // namespace

std::string layer_name(const LayerSpec& layer) {
  return std::visit(overloaded{
                        [](const DenseSpec&) { return std::string("dense"); },
                        [](const Conv2dSpec&) { return std::string("conv2d"); },
                        [](const ReluSpec&) { return std::string("relu"); },
                        [](const BatchNormSpec&) { return std::string("batchnorm"); },
                        [](const FlattenSpec&) { return std::string("flatten"); },
                        [](const MaxPool2dSpec&) { return std::string("maxpool2d"); },
                    },
                    layer);
}

bool has_batchnorm(const ModelSpec& spec) {
  return std::any_of(spec.layers.begin(), spec.layers.end(),
                     [](const LayerSpec& l) { return std::holds_alternative<BatchNormSpec>(l); });
}

Shape infer_layer_shape(const LayerSpec& layer, const Shape& in, std::size_t k) {
  return std::visit(
      overloaded{
          [&](const DenseSpec& d) -> Shape {
            if (d.in == 0 || d.out == 0) throw ShapeError(at_layer(k) + "dense sizes must be positive");
            if (in.size() != 1 || in[0] != d.in) {
              throw ShapeError(at_layer(k) + "dense expects (" + std::to_string(d.in) + ") per sample, got " +
                               shape_to_string(in));
            }
            return {d.out};
          },
          [&](const Conv2dSpec& c) -> Shape {
            if (c.in_ch == 0 || c.out_ch == 0 || c.kernel == 0 || c.stride == 0) {
              throw ShapeError(at_layer(k) + "conv2d sizes must be positive");
            }
            if (in.size() != 3 || in[0] != c.in_ch) {
              throw ShapeError(at_layer(k) + "conv2d expects (" + std::to_string(c.in_ch) +
                               ",H,W) per sample, got " + shape_to_string(in));
            }
            const std::size_t h = in[1] + 2 * c.padding;
            const std::size_t w = in[2] + 2 * c.padding;
            if (h < c.kernel || w < c.kernel) throw ShapeError(at_layer(k) + "conv2d kernel larger than padded input");
            return {c.out_ch, (h - c.kernel) / c.stride + 1, (w - c.kernel) / c.stride + 1};
          },
          [&](const ReluSpec&) -> Shape { return in; },
          [&](const BatchNormSpec& b) -> Shape {
            if (b.epsilon < 0.0 || b.momentum < 0.0 || b.momentum > 1.0) {
              throw ShapeError(at_layer(k) + "batchnorm needs epsilon >= 0 and momentum in [0,1]");
            }
            if ((in.size() != 1 && in.size() != 3) || in[0] != b.features) {
              throw ShapeError(at_layer(k) + "batchnorm expects " + std::to_string(b.features) +
                               " features/channels, got " + shape_to_string(in));
            }
            return in;
          },
          [&](const FlattenSpec&) -> Shape { return {shape_numel(in)}; },
          [&](const MaxPool2dSpec& p) -> Shape {
            if (p.kernel == 0 || p.stride == 0) throw ShapeError(at_layer(k) + "maxpool2d sizes must be positive");
            if (in.size() != 3) throw ShapeError(at_layer(k) + "maxpool2d expects (C,H,W), got " + shape_to_string(in));
            if (in[1] < p.kernel || in[2] < p.kernel) throw ShapeError(at_layer(k) + "maxpool2d kernel larger than input");
            return {in[0], (in[1] - p.kernel) / p.stride + 1, (in[2] - p.kernel) / p.stride + 1};
          },
      },
      layer);
}

std::vector<Shape> infer_shapes(const ModelSpec& spec, const Shape& sample_shape) {
  if (sample_shape.empty()) throw ShapeError("input shape must have at least one dimension");
  for (std::size_t d : sample_shape) {
    if (d == 0) throw ShapeError("input shape dimensions must be positive");
  }
  std::vector<Shape> shapes{sample_shape};
  for (std::size_t k = 0; k < spec.layers.size(); ++k) {
    shapes.push_back(infer_layer_shape(spec.layers[k], shapes.back(), k));
  }
  return shapes;
}

// ---- NamedTensors ----

void NamedTensors::add(std::string name, Tensor value) {
  if (find(name)) throw ArgumentError("duplicate tensor name '" + name + "'");
  entries_.push_back({std::move(name), std::move(value)});
}

const Tensor* NamedTensors::find(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return &e.value;
  }
  return nullptr;
}

Tensor* NamedTensors::find(const std::string& name) {
  for (auto& e : entries_) {
    if (e.name == name) return &e.value;
  }
  return nullptr;
}

const Tensor& NamedTensors::at(const std::string& name) const {
  if (const Tensor* t = find(name)) return *t;
  throw KeyMismatchError("no tensor named '" + name + "'");
}

Tensor& NamedTensors::at(const std::string& name) {
  if (Tensor* t = find(name)) return *t;
  throw KeyMismatchError("no tensor named '" + name + "'");
}

std::vector<std::string> NamedTensors::names() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) out.push_back(e.name);
  return out;
}

bool NamedTensors::same_layout(const NamedTensors& other) const {
  if (size() != other.size()) return false;
  for (std::size_t i = 0; i < size(); ++i) {
    if (entries_[i].name != other.entries_[i].name) return false;
    if (entries_[i].value.shape() != other.entries_[i].value.shape()) return false;
  }
  return true;
}

std::size_t NamedTensors::total_elements() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.numel();
  return n;
}

bool operator==(const NamedTensors& a, const NamedTensors& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].name != b[i].name || !(a[i].value == b[i].value)) return false;
  }
  return true;
}

GradientSet GradientSet::zeros_like(const ParameterSet& params) {
  GradientSet g;
  for (const auto& e : params) g.add(e.name, Tensor(e.value.shape(), 0.0));
  return g;
}

void require_same_layout(const NamedTensors& params, const NamedTensors& grads, const char* what) {
  if (!params.same_layout(grads)) {
    throw KeyMismatchError(std::string(what) + ": tensor names or shapes do not match the parameter set");
  }
}

double l2_norm(const NamedTensors& set) {
  double s = 0.0;
  for (const auto& e : set) {
    for (double x : e.value.data()) s += x * x;
  }
  return std::sqrt(s);
}

GradientSet scaled(const GradientSet& g, double factor) {
  GradientSet out = g;
  for (auto& e : out) {
    for (double& x : e.value.data()) x *= factor;
  }
  return out;
}

double max_relative_error(const NamedTensors& a, const NamedTensors& b, double scale_floor) {
  require_same_layout(a, b, "max_relative_error");
  double worst = 0.0;
  for (std::size_t t = 0; t < a.size(); ++t) {
    const auto da = a[t].value.data();
    const auto db = b[t].value.data();
    double scale = 0.0;
    double diff = 0.0;
    for (std::size_t i = 0; i < da.size(); ++i) {
      scale = std::max({scale, std::abs(da[i]), std::abs(db[i])});
      diff = std::max(diff, std::abs(da[i] - db[i]));
    }
    if (diff == 0.0) continue;
    worst = std::max(worst, diff / std::max(scale, scale_floor));
  }
  return worst;
}

// ---- Model ----

Model::Model(ModelSpec spec, Shape input_shape) : spec_(std::move(spec)) {
  shapes_ = infer_shapes(spec_, input_shape);
  buffers_.resize(spec_.layers.size());
  for (std::size_t k = 0; k < spec_.layers.size(); ++k) {
    if (const auto* bn = std::get_if<BatchNormSpec>(&spec_.layers[k])) {
      buffers_[k] = RunningStats{std::vector<double>(bn->features, 0.0), std::vector<double>(bn->features, 1.0)};
    }
  }
}

RunningStats& Model::running_stats(std::size_t layer) {
  if (layer >= buffers_.size() || !buffers_[layer]) {
    throw ArgumentError("layer " + std::to_string(layer) + " has no running statistics");
  }
  return *buffers_[layer];
}

const RunningStats& Model::running_stats(std::size_t layer) const {
  return const_cast<Model*>(this)->running_stats(layer);
}

std::string Model::param_name(std::size_t layer, const char* role) {
  return std::to_string(layer) + "." + role;
}

BuiltModel build_model(const ModelSpec& spec, const Shape& input_shape, std::uint64_t seed) {
  Model model(spec, input_shape);
  ParameterSet params;

  auto init_uniform = [&](std::size_t layer, const char* role, Shape shape, std::size_t fan_in) {
    const std::string name = Model::param_name(layer, role);
    CounterRng rng = CounterRng::substream(seed, "init/" + name);
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    Tensor t(std::move(shape));
    for (double& x : t.data()) x = rng.uniform(-bound, bound);
    t.set_grad_required(true);
    params.add(name, std::move(t));
  };
  auto init_const = [&](std::size_t layer, const char* role, std::size_t n, double v) {
    Tensor t({n}, v);
    t.set_grad_required(true);
    params.add(Model::param_name(layer, role), std::move(t));
  };

  for (std::size_t k = 0; k < spec.layers.size(); ++k) {
    const LayerSpec& layer = spec.layers[k];
    if (const auto* d = std::get_if<DenseSpec>(&layer)) {
      init_uniform(k, "weight", {d->out, d->in}, d->in);
      if (d->bias) init_uniform(k, "bias", {d->out}, d->in);
    } else if (const auto* c = std::get_if<Conv2dSpec>(&layer)) {
      const std::size_t fan_in = c->in_ch * c->kernel * c->kernel;
      init_uniform(k, "weight", {c->out_ch, c->in_ch, c->kernel, c->kernel}, fan_in);
      init_uniform(k, "bias", {c->out_ch}, fan_in);
    } else if (const auto* b = std::get_if<BatchNormSpec>(&layer)) {
      init_const(k, "gamma", b->features, 1.0);
      init_const(k, "beta", b->features, 0.0);
    }
  }
  return {std::move(params), std::move(model)};
}

}  // namespace mbs
