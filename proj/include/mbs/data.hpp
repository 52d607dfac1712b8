#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mbs/dataset.hpp"
#include "mbs/tensor.hpp"

namespace mbs {

enum class DatasetKind { synthetic_classification, synthetic_segmentation, idx_images };

std::string to_string(DatasetKind kind);
DatasetKind parse_dataset_kind(const std::string& text);

struct DatasetSpec {
  DatasetKind kind = DatasetKind::synthetic_classification;
  std::size_t n_samples = 0;
  /// Per-sample input shape.
  Shape input_shape;
  std::size_t n_classes = 2;
  /// Per-sample mask shape (segmentation): (1, H, W) matching the input's spatial size.
  Shape mask_shape;
  std::uint64_t seed = 0;
  /// Classification: scale of the class means. Segmentation: foreground/background contrast.
  double separation = 3.0;
  /// Classification: within-class standard deviation. Segmentation: pixel noise.
  double spread = 1.0;
  std::string path;
  std::string labels_path;

  friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

/// Gaussian clusters: class means ~ separation * N(0, I) ("dataset/means"), samples
/// mean + spread * N(0, I) ("dataset/samples"); labels i mod n_classes shuffled ("dataset/labels").
Dataset gen_synthetic_classification(const DatasetSpec& spec);

/// One filled rectangle or disk on an H x W grid. Rectangles cover rows [top, bottom) and columns
/// [left, right); disks cover pixel centers within `radius` of (cy, cx).
struct MaskPrimitive {
  enum class Kind { rectangle, disk } kind = Kind::rectangle;
  double top = 0, left = 0, bottom = 0, right = 0;
  double cy = 0, cx = 0, radius = 0;
};

/// Binary (H, W) mask of the union of `primitives`.
std::vector<double> render_mask(std::size_t h, std::size_t w, std::span<const MaskPrimitive> primitives);

/// Images of 1-3 seeded rectangles/disks plus noise; targets are the exact masks (N, 1, H, W).
Dataset gen_synthetic_segmentation(const DatasetSpec& spec);

/// Dispatches on spec.kind (idx_images reads spec.path and spec.labels_path).
Dataset make_dataset(const DatasetSpec& spec);

struct IdxArray {
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> values;
};

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Parses an unsigned-byte IDX buffer with the given magic. Throws FormatError on a bad magic
/// (naming offset 0) or a truncated header/payload (naming expected and actual byte counts).
IdxArray parse_idx(std::span<const std::uint8_t> bytes, std::uint32_t expected_magic);

/// Images scaled to [0,1], shape (N, 1, rows, cols).
Tensor load_idx_images(const std::filesystem::path& path);
/// Labels as class indices, shape (N).
Tensor load_idx_labels(const std::filesystem::path& path);
/// Images plus labels; throws FormatError when the counts differ.
Dataset load_idx_dataset(const std::filesystem::path& images, const std::filesystem::path& labels);

}  // namespace mbs
