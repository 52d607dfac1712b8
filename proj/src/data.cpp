#include "mbs/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>

#include "mbs/errors.hpp"
#include "mbs/rng.hpp"

namespace mbs {

std::string to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::synthetic_classification: return "synthetic_classification";
    case DatasetKind::synthetic_segmentation: return "synthetic_segmentation";
    case DatasetKind::idx_images: return "idx_images";
  }
  return "?";
}

DatasetKind parse_dataset_kind(const std::string& text) {
  if (text == "synthetic_classification") return DatasetKind::synthetic_classification;
  if (text == "synthetic_segmentation") return DatasetKind::synthetic_segmentation;
  if (text == "idx_images") return DatasetKind::idx_images;
  throw ArgumentError("unknown dataset kind '" + text + "'");
}

Dataset gen_synthetic_classification(const DatasetSpec& spec) {
  if (spec.n_classes < 2) throw ShapeError("synthetic classification needs n_classes >= 2");
  if (spec.n_samples == 0) throw ShapeError("synthetic classification needs n_samples >= 1");
  if (spec.input_shape.empty() || shape_numel(spec.input_shape) == 0) {
    throw ShapeError("synthetic classification needs a non-degenerate input shape");
  }
  const std::size_t d = shape_numel(spec.input_shape);
  const std::size_t n = spec.n_samples;

  CounterRng means_rng = CounterRng::substream(spec.seed, "dataset/means");
  std::vector<double> means(spec.n_classes * d);
  for (double& m : means) m = spec.separation * means_rng.normal();

  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = i % spec.n_classes;
  CounterRng label_rng = CounterRng::substream(spec.seed, "dataset/labels");
  for (std::size_t i = n; i > 1; --i) std::swap(labels[i - 1], labels[label_rng.below(i)]);

  Shape in_shape{n};
  in_shape.insert(in_shape.end(), spec.input_shape.begin(), spec.input_shape.end());
  Dataset ds;
  ds.inputs = Tensor(in_shape);
  ds.targets = Tensor({n});
  ds.task = TaskKind::classification;
  ds.n_classes = spec.n_classes;
  CounterRng sample_rng = CounterRng::substream(spec.seed, "dataset/samples");
  for (std::size_t i = 0; i < n; ++i) {
    ds.targets[i] = static_cast<double>(labels[i]);
    for (std::size_t j = 0; j < d; ++j) {
      ds.inputs[i * d + j] = means[labels[i] * d + j] + spec.spread * sample_rng.normal();
    }
  }
  return ds;
}

std::vector<double> render_mask(std::size_t h, std::size_t w, std::span<const MaskPrimitive> primitives) {
  std::vector<double> mask(h * w, 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double py = static_cast<double>(y) + 0.5;
      const double px = static_cast<double>(x) + 0.5;
      for (const MaskPrimitive& p : primitives) {
        bool inside = false;
        if (p.kind == MaskPrimitive::Kind::rectangle) {
          inside = py >= p.top && py < p.bottom && px >= p.left && px < p.right;
        } else {
          inside = (py - p.cy) * (py - p.cy) + (px - p.cx) * (px - p.cx) <= p.radius * p.radius;
        }
        if (inside) {
          mask[y * w + x] = 1.0;
          break;
        }
      }
    }
  }
  return mask;
}

Dataset gen_synthetic_segmentation(const DatasetSpec& spec) {
  if (spec.n_samples == 0) throw ShapeError("synthetic segmentation needs n_samples >= 1");
  if (spec.input_shape.size() != 3) throw ShapeError("synthetic segmentation needs input_shape (C,H,W)");
  const std::size_t c = spec.input_shape[0], h = spec.input_shape[1], w = spec.input_shape[2];
  if (c == 0 || h == 0 || w == 0) throw ShapeError("synthetic segmentation input shape is degenerate");
  if (spec.mask_shape != Shape{1, h, w}) {
    throw ShapeError("mask shape " + shape_to_string(spec.mask_shape) + " must be (1," + std::to_string(h) + "," +
                     std::to_string(w) + ")");
  }
  const std::size_t n = spec.n_samples;
  Dataset ds;
  ds.inputs = Tensor({n, c, h, w});
  ds.targets = Tensor({n, 1, h, w});
  ds.task = TaskKind::segmentation;
  ds.n_classes = 2;

  CounterRng shape_rng = CounterRng::substream(spec.seed, "dataset/shapes");
  CounterRng noise_rng = CounterRng::substream(spec.seed, "dataset/noise");
  const double hh = static_cast<double>(h), ww = static_cast<double>(w);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<MaskPrimitive> prims(1 + shape_rng.below(3));
    for (MaskPrimitive& p : prims) {
      if (shape_rng.uniform() < 0.5) {
        p.kind = MaskPrimitive::Kind::rectangle;
        const double y0 = shape_rng.uniform(0.0, hh), y1 = shape_rng.uniform(0.0, hh);
        const double x0 = shape_rng.uniform(0.0, ww), x1 = shape_rng.uniform(0.0, ww);
        p.top = std::min(y0, y1);
        p.bottom = std::max(y0, y1);
        p.left = std::min(x0, x1);
        p.right = std::max(x0, x1);
      } else {
        p.kind = MaskPrimitive::Kind::disk;
        p.cy = shape_rng.uniform(0.0, hh);
        p.cx = shape_rng.uniform(0.0, ww);
        p.radius = shape_rng.uniform(1.0, 0.5 * static_cast<double>(std::min(h, w)));
      }
    }
    const std::vector<double> mask = render_mask(h, w, prims);
    std::copy(mask.begin(), mask.end(), ds.targets.data().begin() + static_cast<std::ptrdiff_t>(i * h * w));
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t j = 0; j < h * w; ++j) {
        ds.inputs[(i * c + ch) * h * w + j] = spec.separation * mask[j] + spec.spread * noise_rng.normal();
      }
    }
  }
  return ds;
}

Dataset make_dataset(const DatasetSpec& spec) {
  switch (spec.kind) {
    case DatasetKind::synthetic_classification: return gen_synthetic_classification(spec);
    case DatasetKind::synthetic_segmentation: return gen_synthetic_segmentation(spec);
    case DatasetKind::idx_images: return load_idx_dataset(spec.path, spec.labels_path);
  }
  throw ArgumentError("unknown dataset kind");
}

// ---- IDX ----

namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> b, std::size_t offset) {
  return (std::uint32_t{b[offset]} << 24) | (std::uint32_t{b[offset + 1]} << 16) |
         (std::uint32_t{b[offset + 2]} << 8) | std::uint32_t{b[offset + 3]};
}

std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08x", v);
  return buf;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open IDX file " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

IdxArray parse_idx(std::span<const std::uint8_t> bytes, std::uint32_t expected_magic) {
  if (bytes.size() < 4) {
    throw FormatError("truncated IDX header: expected at least 4 bytes, got " + std::to_string(bytes.size()));
  }
  const std::uint32_t magic = read_be32(bytes, 0);
  if (magic != expected_magic) {
    throw FormatError("bad IDX magic " + hex32(magic) + " at offset 0, expected " + hex32(expected_magic));
  }
  const std::size_t ndims = magic & 0xffu;
  const std::size_t header = 4 + 4 * ndims;
  if (bytes.size() < header) {
    throw FormatError("truncated IDX header: expected " + std::to_string(header) + " bytes, got " +
                      std::to_string(bytes.size()));
  }
  IdxArray out;
  std::uint64_t payload = 1;
  for (std::size_t d = 0; d < ndims; ++d) {
    out.dims.push_back(read_be32(bytes, 4 + 4 * d));
    payload *= out.dims.back();
  }
  const std::uint64_t expected = header + payload;
  if (bytes.size() < expected) {
    throw FormatError("truncated IDX payload: expected " + std::to_string(expected) + " bytes, got " +
                      std::to_string(bytes.size()));
  }
  out.values.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header),
                    bytes.begin() + static_cast<std::ptrdiff_t>(expected));
  return out;
}

Tensor load_idx_images(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  const IdxArray a = parse_idx(bytes, kIdxImagesMagic);
  if (a.dims[0] == 0 || a.dims[1] == 0 || a.dims[2] == 0) throw FormatError("IDX image file has a zero dimension");
  Tensor t({a.dims[0], 1, a.dims[1], a.dims[2]});
  for (std::size_t i = 0; i < a.values.size(); ++i) t[i] = static_cast<double>(a.values[i]) / 255.0;
  return t;
}

Tensor load_idx_labels(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  const IdxArray a = parse_idx(bytes, kIdxLabelsMagic);
  if (a.dims[0] == 0) throw FormatError("IDX label file is empty");
  Tensor t({a.dims[0]});
  for (std::size_t i = 0; i < a.values.size(); ++i) t[i] = static_cast<double>(a.values[i]);
  return t;
}

Dataset load_idx_dataset(const std::filesystem::path& images, const std::filesystem::path& labels) {
  Dataset ds;
  ds.inputs = load_idx_images(images);
  ds.targets = load_idx_labels(labels);
  if (ds.inputs.dim(0) != ds.targets.dim(0)) {
    throw FormatError("IDX image count " + std::to_string(ds.inputs.dim(0)) + " != label count " +
                      std::to_string(ds.targets.dim(0)));
  }
  ds.task = TaskKind::classification;
  double max_label = 0.0;
  for (double v : ds.targets.data()) max_label = std::max(max_label, v);
  ds.n_classes = std::max<std::size_t>(2, static_cast<std::size_t>(max_label) + 1);
  return ds;
}

}  // namespace mbs
