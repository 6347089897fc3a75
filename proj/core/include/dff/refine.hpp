#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "dff/heatmap.hpp"

namespace dff {

/// Knobs of the guided-filter mean-field refinement.
struct RefineConfig {
  int iterations = 10;
  int radius = 30;
  double epsilon = 1e-4;
  double pairwise_weight = 3.0;
  /// Unary score of the implicit background channel. When unset, the median
  /// of the max-normalized factor values over the whole image set is used.
  std::optional<double> background_level;

  void validate() const;
};

/// Grayscale guide in [0, 1] from Rec.601 luma.
Grid luma_guide(const RgbImage& image);

/// Guided filter with (2r+1)^2 box windows clamped at the borders:
///   a = cov(I, p) / (var(I) + eps),  b = mean(p) - a mean(I),
///   q = mean(a) I + mean(b).
Grid guided_filter(const Grid& guide, const Grid& src, int radius, double epsilon);

/// k+1 probability maps: softmax over (v_1/scale, ..., v_k/scale, background_level).
/// The background channel is last. `scale` <= 0 means "no normalization".
std::vector<Grid> softmax_unary(const HeatMapStack& stack, double background_level, double scale);

/// Same, normalizing by the stack's own maximum.
std::vector<Grid> softmax_unary(const HeatMapStack& stack, double background_level);

/// Maximum over every map of every stack (1 if all maps are zero).
double set_max(std::span<const HeatMapStack> stacks);

/// Median (nearest-rank) of all factor values after division by set_max.
double default_background_level(std::span<const HeatMapStack> stacks);

/// Called with the current k+1 channel distribution; iteration 0 is the unary.
using MeanFieldObserver = std::function<void(int iteration, std::span<const Grid> q)>;

/// Refines one image. Each iteration filters every channel of Q with the
/// guide and sets Q = softmax(log U + w * filtered Q). Returns the k factor
/// channels of the final distribution.
HeatMapStack meanfield_refine_image(const HeatMapStack& stack, const Grid& guide, const RefineConfig& cfg,
                                    double scale, double background_level,
                                    const MeanFieldObserver& observer = {});

/// Refines a whole set using set-wide normalization.
std::vector<HeatMapStack> meanfield_refine(std::span<const HeatMapStack> stacks, std::span<const Grid> guides,
                                           const RefineConfig& cfg, const MeanFieldObserver& observer = {});

}  // namespace dff
