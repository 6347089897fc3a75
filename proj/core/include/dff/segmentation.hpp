#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "dff/heatmap.hpp"

namespace dff {

/// Binary raster with values in {0, 1}.
struct Mask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> values;

  Mask() = default;
  Mask(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), values(h * w, fill) {}

  std::uint8_t& at(std::size_t y, std::size_t x) { return values[y * width + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
  std::size_t count() const noexcept;

  friend bool operator==(const Mask&, const Mask&) = default;
};

/// B(f, i) for every image i of the set, in set order.
struct BinaryMaskSet {
  std::size_t factor_id = 0;
  std::vector<Mask> masks;
};

/// Ground-truth P(p, i) for one part label, one mask per image in set order.
struct PartAnnotation {
  std::string label;
  std::vector<Mask> masks;
};

/// Inclusive pixel box.
struct BBox {
  int x_min = 0;
  int y_min = 0;
  int x_max = 0;
  int y_max = 0;

  long long area() const noexcept {
    return static_cast<long long>(x_max - x_min + 1) * (y_max - y_min + 1);
  }
  friend bool operator==(const BBox&, const BBox&) = default;
};

struct Components {
  /// 0 for background, 1..n for components in row-major first-encounter order.
  std::vector<int> labels;
  /// sizes[l - 1] is the pixel count of component l.
  std::vector<std::size_t> sizes;
};

/// Nearest-rank percentile: the ceil(p/100 * n)-th smallest value (1-based).
float nearest_rank_percentile(std::vector<float> values, double percentile);

/// Thresholds every map of one factor at the nearest-rank percentile of the
/// values pooled over the whole set; a pixel is foreground iff value >= tau.
BinaryMaskSet binarize_factor(std::span<const Grid> maps, double percentile = 75.0, std::size_t factor_id = 0);

/// Per-factor binarization of a set of stacks (all stacks share k).
std::vector<BinaryMaskSet> binarize_stacks(std::span<const HeatMapStack> stacks, double percentile = 75.0);

/// |sum_i B_i & P_i| / |sum_i P_i| over the whole set.
double coverage(const BinaryMaskSet& b, const PartAnnotation& p);

/// Parts whose coverage strictly exceeds `threshold`.
std::set<std::string> associate_parts(const std::map<std::string, double>& coverages, double threshold = 0.5);

/// Dataset-wide IoU of B against the per-image union of the given parts.
double dataset_iou(const BinaryMaskSet& b, std::span<const PartAnnotation> parts);

/// 8-connected labelling.
Components connected_components(const Mask& mask);

/// Tight box around the largest 8-connected component; ties go to the lower label.
BBox largest_component_bbox(const Mask& mask);

double box_iou(const BBox& a, const BBox& b);

/// Percentage of images whose predicted box has IoU > 0.5 with any ground-truth box.
double corloc(const std::map<std::string, BBox>& predictions,
              const std::map<std::string, std::vector<BBox>>& ground_truth);

/// Mean over factors of the best dataset IoU against a single part whose
/// label is not in `background_labels`.
double average_best_iou(std::span<const BinaryMaskSet> factors, std::span<const PartAnnotation> parts,
                        const std::set<std::string>& background_labels);

}  // namespace dff
