#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "mbs/tensor.hpp"

namespace mbs {

struct DenseSpec {
  std::size_t in = 0;
  std::size_t out = 0;
  bool bias = true;
  friend bool operator==(const DenseSpec&, const DenseSpec&) = default;
};

/// Square kernel; the layer always carries a per-output-channel bias.
struct Conv2dSpec {
  std::size_t in_ch = 0;
  std::size_t out_ch = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  friend bool operator==(const Conv2dSpec&, const Conv2dSpec&) = default;
};

struct ReluSpec {
  friend bool operator==(const ReluSpec&, const ReluSpec&) = default;
};

/// Normalizes over the batch (and spatial axes for 4-D input) per feature/channel.
struct BatchNormSpec {
  std::size_t features = 0;
  double epsilon = 1e-5;
  double momentum = 0.1;
  friend bool operator==(const BatchNormSpec&, const BatchNormSpec&) = default;
};

struct FlattenSpec {
  friend bool operator==(const FlattenSpec&, const FlattenSpec&) = default;
};

struct MaxPool2dSpec {
  std::size_t kernel = 2;
  std::size_t stride = 2;
  friend bool operator==(const MaxPool2dSpec&, const MaxPool2dSpec&) = default;
};

using LayerSpec = std::variant<DenseSpec, Conv2dSpec, ReluSpec, BatchNormSpec, FlattenSpec, MaxPool2dSpec>;

struct ModelSpec {
  std::vector<LayerSpec> layers;
  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

std::string layer_name(const LayerSpec& layer);
bool has_batchnorm(const ModelSpec& spec);

/// Per-sample output shape of one layer. Throws ShapeError naming `layer_index`.
Shape infer_layer_shape(const LayerSpec& layer, const Shape& sample_shape, std::size_t layer_index);
/// Per-sample shapes: element 0 is the input, element k+1 the output of layer k.
std::vector<Shape> infer_shapes(const ModelSpec& spec, const Shape& sample_shape);

/// Ordered (name, tensor) list with unique names.
class NamedTensors {
 public:
  struct Entry {
    std::string name;
    Tensor value;
  };

  void add(std::string name, Tensor value);
  const Tensor* find(const std::string& name) const;
  Tensor* find(const std::string& name);
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  std::vector<std::string> names() const;
  /// Same names in the same order with identical shapes.
  bool same_layout(const NamedTensors& other) const;
  std::size_t total_elements() const;

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  Entry& operator[](std::size_t i) { return entries_[i]; }
  const Entry& operator[](std::size_t i) const { return entries_[i]; }

  friend bool operator==(const NamedTensors& a, const NamedTensors& b);

 private:
  std::vector<Entry> entries_;
};

class ParameterSet : public NamedTensors {};

/// Per-parameter gradients, keyed and shaped like a ParameterSet.
class GradientSet : public NamedTensors {
 public:
  static GradientSet zeros_like(const ParameterSet& params);
};

/// Throws KeyMismatchError unless `grads` matches `params` name-for-name and shape-for-shape.
void require_same_layout(const NamedTensors& params, const NamedTensors& grads, const char* what);

double l2_norm(const NamedTensors& set);
GradientSet scaled(const GradientSet& g, double factor);

/// Max over tensors of max_i |a_i - b_i| / max_i max(|a_i|, |b_i|). Zero when both tensors are
/// identically zero. This is an element error measured against each tensor's own scale, which is
/// clamped below by scale_floor.
double max_relative_error(const NamedTensors& a, const NamedTensors& b, double scale_floor = 0.0);

struct RunningStats {
  std::vector<double> mean;
  std::vector<double> var;
};

/// Static structure of a sequential network plus its non-trainable buffers
/// (batchnorm running statistics). Trainable values live in a ParameterSet.
class Model {
 public:
  Model(ModelSpec spec, Shape input_shape);

  const ModelSpec& spec() const noexcept { return spec_; }
  const Shape& input_shape() const noexcept { return shapes_.front(); }
  const Shape& output_shape() const noexcept { return shapes_.back(); }
  /// Per-sample input shape of layer k (k == layer count gives the output shape).
  const Shape& shape_at(std::size_t k) const { return shapes_.at(k); }
  std::size_t layer_count() const noexcept { return spec_.layers.size(); }

  RunningStats& running_stats(std::size_t layer);
  const RunningStats& running_stats(std::size_t layer) const;

  static std::string param_name(std::size_t layer, const char* role);

 private:
  ModelSpec spec_;
  std::vector<Shape> shapes_;
  std::vector<std::optional<RunningStats>> buffers_;
};

struct BuiltModel {
  ParameterSet params;
  Model model;
};

/// Parameters are drawn uniform(-sqrt(1/fan_in), sqrt(1/fan_in)) from the named substream
/// "init/<param name>" of `seed`; batchnorm gamma=1, beta=0.
BuiltModel build_model(const ModelSpec& spec, const Shape& input_shape, std::uint64_t seed);

/// Inputs plus targets (class indices for cross entropy, dense tensors otherwise).
struct Batch {
  Tensor inputs;
  Tensor targets;

  std::size_t size() const { return inputs.dim(0); }
  Batch slice(std::size_t begin, std::size_t end) const {
    return {inputs.slice_rows(begin, end), targets.slice_rows(begin, end)};
  }
};

}  // namespace mbs
