#include "mbs/config.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

#include "mbs/errors.hpp"
#include "mbs/format.hpp"

namespace mbs {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::uint64_t parse_u64(const std::string& text, const std::string& what) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    throw ConfigError(what + ": expected a non-negative integer, got '" + text + "'");
  }
  return v;
}

double parse_f64(const std::string& text, const std::string& what) {
  double v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    throw ConfigError(what + ": expected a number, got '" + text + "'");
  }
  return v;
}

bool parse_bool(const std::string& text, const std::string& what) {
  if (text == "true") return true;
  if (text == "false") return false;
  throw ConfigError(what + ": expected true or false, got '" + text + "'");
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

std::string fmt_u64_list(const std::vector<std::uint64_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

/// Key/value pairs with their source lines; consumed keys are removed so leftovers can be reported.
class Entries {
 public:
  void add(std::string key, std::string value, std::size_t line) {
    if (map_.count(key)) throw ConfigError("line " + std::to_string(line) + ": duplicate key '" + key + "'");
    map_.emplace(std::move(key), Item{std::move(value), line});
  }

  std::optional<std::string> take(const std::string& key) {
    auto it = map_.find(key);
    if (it == map_.end()) return std::nullopt;
    std::string v = it->second.value;
    last_line_ = it->second.line;
    map_.erase(it);
    return v;
  }

  std::string where(const std::string& key) const {
    return "line " + std::to_string(last_line_) + " (" + key + ")";
  }

  void take_u64(const std::string& key, std::uint64_t& out) {
    if (auto v = take(key)) out = parse_u64(*v, where(key));
  }
  void take_size(const std::string& key, std::size_t& out) {
    if (auto v = take(key)) out = static_cast<std::size_t>(parse_u64(*v, where(key)));
  }
  void take_f64(const std::string& key, double& out) {
    if (auto v = take(key)) out = parse_f64(*v, where(key));
  }
  void take_bool(const std::string& key, bool& out) {
    if (auto v = take(key)) out = parse_bool(*v, where(key));
  }
  void take_string(const std::string& key, std::string& out) {
    if (auto v = take(key)) out = *v;
  }
  template <class F>
  void take_with(const std::string& key, F&& f) {
    if (auto v = take(key)) {
      try {
        f(*v);
      } catch (const ConfigError&) {
        throw;
      } catch (const Error& e) {
        throw ConfigError(where(key) + ": " + e.what());
      }
    }
  }

  /// Remaining keys starting with `prefix`, in key order.
  std::vector<std::string> keys_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& [k, _] : map_) {
      if (k.rfind(prefix, 0) == 0) out.push_back(k);
    }
    return out;
  }

  void require_empty() const {
    if (!map_.empty()) {
      const auto& [k, item] = *map_.begin();
      throw ConfigError("line " + std::to_string(item.line) + ": unknown key '" + k + "'");
    }
  }

 private:
  struct Item {
    std::string value;
    std::size_t line;
  };
  std::map<std::string, Item> map_;
  std::size_t last_line_ = 0;
};

}  // namespace

std::string format_shape(const Shape& shape) {
  std::string out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out;
}

Shape parse_shape(const std::string& text) {
  Shape s;
  if (trim(text).empty()) return s;
  for (const std::string& part : split(text, ',')) {
    const std::uint64_t d = parse_u64(part, "shape");
    if (d == 0) throw ConfigError("shape dimensions must be positive: '" + text + "'");
    s.push_back(static_cast<std::size_t>(d));
  }
  return s;
}

std::string format_layer(const LayerSpec& layer) {
  std::ostringstream os;
  if (const auto* d = std::get_if<DenseSpec>(&layer)) {
    os << "dense(in=" << d->in << ", out=" << d->out << ", bias=" << fmt_bool(d->bias) << ")";
  } else if (const auto* c = std::get_if<Conv2dSpec>(&layer)) {
    os << "conv2d(in_ch=" << c->in_ch << ", out_ch=" << c->out_ch << ", kernel=" << c->kernel
       << ", stride=" << c->stride << ", padding=" << c->padding << ")";
  } else if (const auto* b = std::get_if<BatchNormSpec>(&layer)) {
    os << "batchnorm(features=" << b->features << ", epsilon=" << format_shortest(b->epsilon)
       << ", momentum=" << format_shortest(b->momentum) << ")";
  } else if (const auto* p = std::get_if<MaxPool2dSpec>(&layer)) {
    os << "maxpool2d(kernel=" << p->kernel << ", stride=" << p->stride << ")";
  } else {
    os << layer_name(layer);
  }
  return os.str();
}

LayerSpec parse_layer(const std::string& raw) {
  const std::string text = trim(raw);
  const auto open = text.find('(');
  const std::string name = trim(text.substr(0, open));
  std::map<std::string, std::string> args;
  if (open != std::string::npos) {
    if (text.back() != ')') throw ConfigError("layer '" + text + "': missing ')'");
    const std::string inner = text.substr(open + 1, text.size() - open - 2);
    if (!trim(inner).empty()) {
      for (const std::string& kv : split(inner, ',')) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("layer '" + text + "': expected key=value, got '" + kv + "'");
        const std::string k = trim(kv.substr(0, eq));
        if (!args.emplace(k, trim(kv.substr(eq + 1))).second) {
          throw ConfigError("layer '" + text + "': duplicate field '" + k + "'");
        }
      }
    }
  }
  auto size_arg = [&](const char* key, std::optional<std::size_t> def = std::nullopt) -> std::size_t {
    auto it = args.find(key);
    if (it == args.end()) {
      if (def) return *def;
      throw ConfigError("layer '" + text + "': missing field '" + key + "'");
    }
    const std::size_t v = static_cast<std::size_t>(parse_u64(it->second, "layer field " + std::string(key)));
    args.erase(it);
    return v;
  };
  auto f64_arg = [&](const char* key, double def) {
    auto it = args.find(key);
    if (it == args.end()) return def;
    const double v = parse_f64(it->second, "layer field " + std::string(key));
    args.erase(it);
    return v;
  };
  auto bool_arg = [&](const char* key, bool def) {
    auto it = args.find(key);
    if (it == args.end()) return def;
    const bool v = parse_bool(it->second, "layer field " + std::string(key));
    args.erase(it);
    return v;
  };

  LayerSpec out;
  if (name == "dense") {
    DenseSpec d;
    d.in = size_arg("in");
    d.out = size_arg("out");
    d.bias = bool_arg("bias", true);
    out = d;
  } else if (name == "conv2d") {
    Conv2dSpec c;
    c.in_ch = size_arg("in_ch");
    c.out_ch = size_arg("out_ch");
    c.kernel = size_arg("kernel");
    c.stride = size_arg("stride", 1);
    c.padding = size_arg("padding", 0);
    out = c;
  } else if (name == "relu") {
    out = ReluSpec{};
  } else if (name == "batchnorm") {
    BatchNormSpec b;
    b.features = size_arg("features");
    b.epsilon = f64_arg("epsilon", 1e-5);
    b.momentum = f64_arg("momentum", 0.1);
    out = b;
  } else if (name == "flatten") {
    out = FlattenSpec{};
  } else if (name == "maxpool2d") {
    MaxPool2dSpec p;
    p.kernel = size_arg("kernel");
    p.stride = size_arg("stride", p.kernel);
    out = p;
  } else {
    throw ConfigError("unknown layer '" + name + "'");
  }
  if (!args.empty()) throw ConfigError("layer '" + text + "': unknown field '" + args.begin()->first + "'");
  return out;
}

ExperimentConfig parse_config(const std::string& text) {
  Entries entries;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    entries.add(key, trim(t.substr(eq + 1)), lineno);
  }

  ExperimentConfig c;
  entries.take_string("name", c.name);
  entries.take_u64("seed", c.seed);
  entries.take_with("seeds", [&](const std::string& v) {
    c.seeds.clear();
    if (v.empty()) return;
    for (const std::string& s : split(v, ',')) c.seeds.push_back(parse_u64(s, entries.where("seeds")));
  });
  entries.take_size("epochs", c.epochs);
  entries.take_string("output_dir", c.output_dir);

  // model.layers.<k>, contiguous from 0.
  const std::vector<std::string> layer_keys = entries.keys_with_prefix("model.layers.");
  for (std::size_t k = 0; k < layer_keys.size(); ++k) {
    const std::string key = "model.layers." + std::to_string(k);
    auto v = entries.take(key);
    if (!v) throw ConfigError("model layers must be numbered 0.." + std::to_string(layer_keys.size() - 1) +
                              " without gaps; missing " + key);
    try {
      c.model.layers.push_back(parse_layer(*v));
    } catch (const ConfigError& e) {
      throw ConfigError(entries.where(key) + ": " + e.what());
    }
  }

  entries.take_with("dataset.kind", [&](const std::string& v) { c.dataset.kind = parse_dataset_kind(v); });
  entries.take_size("dataset.n_samples", c.dataset.n_samples);
  entries.take_with("dataset.input_shape", [&](const std::string& v) { c.dataset.input_shape = parse_shape(v); });
  entries.take_size("dataset.n_classes", c.dataset.n_classes);
  entries.take_with("dataset.mask_shape", [&](const std::string& v) { c.dataset.mask_shape = parse_shape(v); });
  entries.take_with("dataset.seed", [&](const std::string& v) {
    c.dataset.seed = parse_u64(v, entries.where("dataset.seed"));
    c.dataset_seed_pinned = true;
  });
  entries.take_f64("dataset.separation", c.dataset.separation);
  entries.take_f64("dataset.spread", c.dataset.spread);
  entries.take_string("dataset.path", c.dataset.path);
  entries.take_string("dataset.labels_path", c.dataset.labels_path);

  entries.take_with("loss.kind", [&](const std::string& v) { c.loss.kind = parse_loss_kind(v); });
  entries.take_bool("loss.from_logits", c.loss.from_logits);
  entries.take_f64("loss.dice_smoothing", c.loss.dice_smoothing);

  entries.take_with("optim.kind", [&](const std::string& v) { c.optim.kind = parse_optimizer_kind(v); });
  entries.take_f64("optim.lr", c.optim.lr);
  entries.take_f64("optim.momentum", c.optim.momentum);
  entries.take_f64("optim.weight_decay", c.optim.weight_decay);
  entries.take_f64("optim.adam_beta1", c.optim.adam_beta1);
  entries.take_f64("optim.adam_beta2", c.optim.adam_beta2);
  entries.take_f64("optim.adam_eps", c.optim.adam_eps);
  entries.take_with("optim.lr_schedule", [&](const std::string& v) {
    if (v == "constant") c.lr_schedule = LrSchedule::constant;
    else if (v == "linear") c.lr_schedule = LrSchedule::linear;
    else throw ConfigError(entries.where("optim.lr_schedule") + ": expected constant or linear");
  });
  entries.take_with("optim.lr_schedule_unit", [&](const std::string& v) {
    if (v == "update") c.lr_schedule_unit = LrScheduleUnit::update;
    else if (v == "epoch") c.lr_schedule_unit = LrScheduleUnit::epoch;
    else throw ConfigError(entries.where("optim.lr_schedule_unit") + ": expected update or epoch");
  });

  entries.take_size("mbs.mini_batch_size", c.mini_batch_size);
  entries.take_with("mbs.micro_batch_size", [&](const std::string& v) {
    if (v == "auto") c.micro_batch_size.reset();
    else c.micro_batch_size = static_cast<std::size_t>(parse_u64(v, entries.where("mbs.micro_batch_size")));
  });
  entries.take_with("mbs.normalization_mode",
                    [&](const std::string& v) { c.normalization_mode = parse_normalization_mode(v); });
  entries.take_with("mbs.normalization_site", [&](const std::string& v) {
    if (v == "loss") c.normalization_site = NormalizationSite::loss;
    else if (v == "backward_seed") c.normalization_site = NormalizationSite::backward_seed;
    else throw ConfigError(entries.where("mbs.normalization_site") + ": expected loss or backward_seed");
  });
  entries.take_bool("mbs.prefetch", c.prefetch);
  entries.take_bool("mbs.run_baseline", c.run_baseline);

  entries.take_u64("memory.capacity_bytes", c.capacity_bytes);
  entries.take_u64("memory.fixed_overhead_bytes", c.fixed_overhead_bytes);

  entries.take_f64("cost.transfer_seconds_per_byte", c.cost.transfer_seconds_per_byte);
  entries.take_f64("cost.forward_seconds_per_sample", c.cost.forward_seconds_per_sample);
  entries.take_f64("cost.backward_seconds_per_sample", c.cost.backward_seconds_per_sample);
  entries.take_f64("cost.update_seconds", c.cost.update_seconds);
  entries.take_f64("cost.transfer_latency_seconds", c.cost.transfer_latency_seconds);
  entries.take_f64("cost.compute_launch_seconds", c.cost.compute_launch_seconds);
  entries.take_bool("cost.overlap", c.stream_overlap);

  entries.take_f64("metrics.threshold", c.threshold);

  entries.require_empty();
  if (!c.dataset_seed_pinned) c.dataset.seed = c.seed;
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const ExperimentConfig& c) {
  std::ostringstream os;
  auto kv = [&os](const std::string& k, const std::string& v) { os << k << " = " << v << '\n'; };
  auto f = [](double v) { return format_shortest(v); };
  kv("name", c.name);
  kv("seed", std::to_string(c.seed));
  kv("seeds", fmt_u64_list(c.seeds));
  kv("epochs", std::to_string(c.epochs));
  kv("output_dir", c.output_dir);
  for (std::size_t k = 0; k < c.model.layers.size(); ++k) {
    kv("model.layers." + std::to_string(k), format_layer(c.model.layers[k]));
  }
  kv("dataset.kind", to_string(c.dataset.kind));
  kv("dataset.n_samples", std::to_string(c.dataset.n_samples));
  kv("dataset.input_shape", format_shape(c.dataset.input_shape));
  kv("dataset.n_classes", std::to_string(c.dataset.n_classes));
  kv("dataset.mask_shape", format_shape(c.dataset.mask_shape));
  if (c.dataset_seed_pinned) kv("dataset.seed", std::to_string(c.dataset.seed));
  kv("dataset.separation", f(c.dataset.separation));
  kv("dataset.spread", f(c.dataset.spread));
  kv("dataset.path", c.dataset.path);
  kv("dataset.labels_path", c.dataset.labels_path);
  kv("loss.kind", to_string(c.loss.kind));
  kv("loss.from_logits", fmt_bool(c.loss.from_logits));
  kv("loss.dice_smoothing", f(c.loss.dice_smoothing));
  kv("optim.kind", to_string(c.optim.kind));
  kv("optim.lr", f(c.optim.lr));
  kv("optim.momentum", f(c.optim.momentum));
  kv("optim.weight_decay", f(c.optim.weight_decay));
  kv("optim.adam_beta1", f(c.optim.adam_beta1));
  kv("optim.adam_beta2", f(c.optim.adam_beta2));
  kv("optim.adam_eps", f(c.optim.adam_eps));
  kv("optim.lr_schedule", c.lr_schedule == LrSchedule::linear ? "linear" : "constant");
  kv("optim.lr_schedule_unit", c.lr_schedule_unit == LrScheduleUnit::epoch ? "epoch" : "update");
  kv("mbs.mini_batch_size", std::to_string(c.mini_batch_size));
  kv("mbs.micro_batch_size", c.micro_batch_size ? std::to_string(*c.micro_batch_size) : "auto");
  kv("mbs.normalization_mode", to_string(c.normalization_mode));
  kv("mbs.normalization_site", c.normalization_site == NormalizationSite::loss ? "loss" : "backward_seed");
  kv("mbs.prefetch", fmt_bool(c.prefetch));
  kv("mbs.run_baseline", fmt_bool(c.run_baseline));
  kv("memory.capacity_bytes", std::to_string(c.capacity_bytes));
  kv("memory.fixed_overhead_bytes", std::to_string(c.fixed_overhead_bytes));
  kv("cost.transfer_seconds_per_byte", f(c.cost.transfer_seconds_per_byte));
  kv("cost.forward_seconds_per_sample", f(c.cost.forward_seconds_per_sample));
  kv("cost.backward_seconds_per_sample", f(c.cost.backward_seconds_per_sample));
  kv("cost.update_seconds", f(c.cost.update_seconds));
  kv("cost.transfer_latency_seconds", f(c.cost.transfer_latency_seconds));
  kv("cost.compute_launch_seconds", f(c.cost.compute_launch_seconds));
  kv("cost.overlap", fmt_bool(c.stream_overlap));
  kv("metrics.threshold", f(c.threshold));
  return os.str();
}

void validate_config(const ExperimentConfig& c) {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (c.model.layers.empty()) fail("model.layers: at least one layer is required");
  if (c.epochs == 0) fail("epochs must be >= 1");
  if (c.mini_batch_size == 0) fail("mbs.mini_batch_size must be >= 1");
  if (c.micro_batch_size && *c.micro_batch_size == 0) fail("mbs.micro_batch_size must be >= 1 or auto");
  if (!(c.threshold > 0.0 && c.threshold < 1.0)) fail("metrics.threshold must be in (0,1)");
  if (c.dataset.kind != DatasetKind::idx_images && c.dataset.n_samples == 0) fail("dataset.n_samples must be >= 1");
  if (c.dataset.kind == DatasetKind::idx_images && (c.dataset.path.empty() || c.dataset.labels_path.empty())) {
    fail("idx_images needs dataset.path and dataset.labels_path");
  }
  try {
    c.cost.validate();
    OptimizerState probe(c.optim, ParameterSet{});
  } catch (const Error& e) {
    fail(e.what());
  }
  std::vector<Shape> shapes;
  try {
    shapes = infer_shapes(c.model, c.dataset.input_shape);
  } catch (const Error& e) {
    fail(std::string("model does not compose on dataset.input_shape: ") + e.what());
  }
  const Shape& out = shapes.back();
  switch (c.dataset.kind) {
    case DatasetKind::synthetic_classification:
    case DatasetKind::idx_images:
      if (c.loss.kind != LossKind::cross_entropy) fail("classification datasets need loss.kind cross_entropy");
      if (c.dataset.kind == DatasetKind::synthetic_classification && out != Shape{c.dataset.n_classes}) {
        fail("model output " + shape_to_string(out) + " does not match dataset.n_classes");
      }
      break;
    case DatasetKind::synthetic_segmentation:
      if (c.loss.kind != LossKind::bce && c.loss.kind != LossKind::bce_dice) {
        fail("segmentation datasets need loss.kind bce or bce_dice");
      }
      if (out != c.dataset.mask_shape) {
        fail("model output " + shape_to_string(out) + " does not match dataset.mask_shape");
      }
      break;
  }
}

}  // namespace mbs
