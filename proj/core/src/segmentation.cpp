#include "dff/segmentation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "dff/error.hpp"

namespace dff {
namespace {

void check_set(const BinaryMaskSet& b, const PartAnnotation& p) {
  if (b.masks.size() != p.masks.size())
    throw Error(ErrorCode::SizeMismatch, "part '" + p.label + "' covers " + std::to_string(p.masks.size()) +
                                             " images, masks cover " + std::to_string(b.masks.size()));
  for (std::size_t i = 0; i < b.masks.size(); ++i)
    if (b.masks[i].height != p.masks[i].height || b.masks[i].width != p.masks[i].width)
      throw Error(ErrorCode::SizeMismatch, "part '" + p.label + "' mask " + std::to_string(i) +
                                               " does not match the image size");
}

}  // namespace

std::size_t Mask::count() const noexcept {
  return static_cast<std::size_t>(std::count(values.begin(), values.end(), std::uint8_t{1}));
}

float nearest_rank_percentile(std::vector<float> values, double percentile) {
  if (values.empty()) throw Error(ErrorCode::EmptySet, "no values to threshold");
  if (!(percentile > 0.0 && percentile < 100.0))
    throw Error(ErrorCode::InvalidArgument, "percentile must lie in (0, 100)");
  const auto n = static_cast<double>(values.size());
  auto rank = static_cast<std::size_t>(std::ceil(percentile / 100.0 * n));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(rank - 1), values.end());
  return values[rank - 1];
}

BinaryMaskSet binarize_factor(std::span<const Grid> maps, double percentile, std::size_t factor_id) {
  std::vector<float> pooled;
  for (const auto& g : maps) pooled.insert(pooled.end(), g.values.begin(), g.values.end());
  if (pooled.empty()) throw Error(ErrorCode::EmptySet, "factor has no heat map values");
  const float tau = nearest_rank_percentile(std::move(pooled), percentile);

  BinaryMaskSet out{factor_id, {}};
  out.masks.reserve(maps.size());
  for (const auto& g : maps) {
    Mask m(g.height, g.width);
    for (std::size_t p = 0; p < g.values.size(); ++p) m.values[p] = g.values[p] >= tau ? 1 : 0;
    out.masks.push_back(std::move(m));
  }
  return out;
}

std::vector<BinaryMaskSet> binarize_stacks(std::span<const HeatMapStack> stacks, double percentile) {
  if (stacks.empty()) throw Error(ErrorCode::EmptySet, "no heat maps to binarize");
  const std::size_t k = stacks.front().k();
  std::vector<BinaryMaskSet> out;
  out.reserve(k);
  std::vector<Grid> maps;
  for (std::size_t f = 0; f < k; ++f) {
    maps.clear();
    for (const auto& s : stacks) {
      if (s.k() != k) throw Error(ErrorCode::ShapeMismatch, "stacks disagree on factor count");
      maps.push_back(s.maps[f]);
    }
    out.push_back(binarize_factor(maps, percentile, f));
  }
  return out;
}

double coverage(const BinaryMaskSet& b, const PartAnnotation& p) {
  check_set(b, p);
  std::size_t inter = 0, part = 0;
  for (std::size_t i = 0; i < b.masks.size(); ++i) {
    const auto& bm = b.masks[i].values;
    const auto& pm = p.masks[i].values;
    for (std::size_t q = 0; q < bm.size(); ++q) {
      part += pm[q];
      inter += bm[q] & pm[q];
    }
  }
  if (part == 0) throw Error(ErrorCode::EmptyPart, "part '" + p.label + "' has no pixels in the set");
  return static_cast<double>(inter) / static_cast<double>(part);
}

std::set<std::string> associate_parts(const std::map<std::string, double>& coverages, double threshold) {
  std::set<std::string> out;
  for (const auto& [label, cov] : coverages)
    if (cov > threshold) out.insert(label);
  return out;
}

double dataset_iou(const BinaryMaskSet& b, std::span<const PartAnnotation> parts) {
  for (const auto& p : parts) check_set(b, p);
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < b.masks.size(); ++i) {
    const auto& bm = b.masks[i].values;
    for (std::size_t q = 0; q < bm.size(); ++q) {
      std::uint8_t in_part = 0;
      for (const auto& p : parts) in_part |= p.masks[i].values[q];
      inter += bm[q] & in_part;
      uni += bm[q] | in_part;
    }
  }
  if (uni == 0) throw Error(ErrorCode::EmptyUnion, "masks and parts are empty over the whole set");
  return static_cast<double>(inter) / static_cast<double>(uni);
}

Components connected_components(const Mask& mask) {
  const std::size_t h = mask.height, w = mask.width;
  Components out;
  out.labels.assign(h * w, 0);
  std::vector<std::size_t> stack;
  int next = 0;
  for (std::size_t start = 0; start < h * w; ++start) {
    if (!mask.values[start] || out.labels[start]) continue;
    ++next;
    std::size_t size = 0;
    out.labels[start] = next;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      ++size;
      const std::size_t y = p / w, x = p % w;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          if (dy == 0 && dx == 0) continue;
          const auto ny = static_cast<long long>(y) + dy;
          const auto nx = static_cast<long long>(x) + dx;
          if (ny < 0 || nx < 0 || ny >= static_cast<long long>(h) || nx >= static_cast<long long>(w)) continue;
          const std::size_t q = static_cast<std::size_t>(ny) * w + static_cast<std::size_t>(nx);
          if (mask.values[q] && !out.labels[q]) {
            out.labels[q] = next;
            stack.push_back(q);
          }
        }
    }
    out.sizes.push_back(size);
  }
  return out;
}

BBox largest_component_bbox(const Mask& mask) {
  const Components cc = connected_components(mask);
  if (cc.sizes.empty()) throw Error(ErrorCode::NoForeground, "mask has no foreground pixels");
  // max_element returns the first maximum, i.e. the lowest label
  const int label = static_cast<int>(std::max_element(cc.sizes.begin(), cc.sizes.end()) - cc.sizes.begin()) + 1;
  BBox box{std::numeric_limits<int>::max(), std::numeric_limits<int>::max(), -1, -1};
  for (std::size_t p = 0; p < cc.labels.size(); ++p) {
    if (cc.labels[p] != label) continue;
    const int y = static_cast<int>(p / mask.width), x = static_cast<int>(p % mask.width);
    box.x_min = std::min(box.x_min, x);
    box.y_min = std::min(box.y_min, y);
    box.x_max = std::max(box.x_max, x);
    box.y_max = std::max(box.y_max, y);
  }
  return box;
}

double box_iou(const BBox& a, const BBox& b) {
  const int ix0 = std::max(a.x_min, b.x_min), iy0 = std::max(a.y_min, b.y_min);
  const int ix1 = std::min(a.x_max, b.x_max), iy1 = std::min(a.y_max, b.y_max);
  long long inter = 0;
  if (ix1 >= ix0 && iy1 >= iy0) inter = static_cast<long long>(ix1 - ix0 + 1) * (iy1 - iy0 + 1);
  const long long uni = a.area() + b.area() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double corloc(const std::map<std::string, BBox>& predictions,
              const std::map<std::string, std::vector<BBox>>& ground_truth) {
  if (predictions.empty()) throw Error(ErrorCode::EmptySet, "no predicted boxes");
  std::size_t correct = 0;
  for (const auto& [image, box] : predictions) {
    const auto it = ground_truth.find(image);
    if (it == ground_truth.end() || it->second.empty())
      throw Error(ErrorCode::MissingGroundTruth, "no ground-truth box for '" + image + "'");
    const bool hit = std::any_of(it->second.begin(), it->second.end(),
                                 [&](const BBox& gt) { return box_iou(box, gt) > 0.5; });
    correct += hit ? 1 : 0;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(predictions.size());
}

double average_best_iou(std::span<const BinaryMaskSet> factors, std::span<const PartAnnotation> parts,
                        const std::set<std::string>& background_labels) {
  std::vector<const PartAnnotation*> candidates;
  for (const auto& p : parts)
    if (!background_labels.contains(p.label)) candidates.push_back(&p);
  if (candidates.empty()) throw Error(ErrorCode::NoParts, "every part is labelled background");
  if (factors.empty()) throw Error(ErrorCode::EmptySet, "no factors to score");

  double total = 0.0;
  for (const auto& f : factors) {
    double best = 0.0;
    for (const PartAnnotation* p : candidates) {
      try {
        best = std::max(best, dataset_iou(f, std::span<const PartAnnotation>(p, 1)));
      } catch (const Error& e) {
        if (e.code() != ErrorCode::EmptyUnion) throw;
      }
    }
    total += best;
  }
  return total / static_cast<double>(factors.size());
}

}  // namespace dff
