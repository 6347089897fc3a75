#include "dff/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dff/error.hpp"

namespace dff {

float HeatMapStack::max_value() const {
  float m = 0.0f;
  for (const auto& g : maps)
    for (float v : g.values) m = std::max(m, v);
  return m;
}

std::vector<HeatMapStack> columns_to_heatmaps(const Matrix& h, const BatchLayout& layout) {
  if (static_cast<std::size_t>(h.rows()) != layout.total_rows())
    throw Error(ErrorCode::LayoutMismatch, "H has " + std::to_string(h.rows()) +
                                               " rows but the layout covers " +
                                               std::to_string(layout.total_rows()));
  const auto k = static_cast<std::size_t>(h.cols());
  std::vector<HeatMapStack> out;
  out.reserve(layout.size());
  for (const auto& e : layout.entries()) {
    HeatMapStack s{e.image_id, e.height, e.width, {}};
    s.maps.assign(k, Grid(e.height, e.width));
    for (std::size_t r = 0; r < e.rows(); ++r) {
      const auto row = static_cast<Eigen::Index>(e.row_offset + r);
      for (std::size_t j = 0; j < k; ++j) s.maps[j].values[r] = h(row, static_cast<Eigen::Index>(j));
    }
    out.push_back(std::move(s));
  }
  return out;
}

Matrix heatmaps_to_columns(std::span<const HeatMapStack> stacks) {
  if (stacks.empty()) throw Error(ErrorCode::EmptyBatch, "no heat maps");
  const std::size_t k = stacks.front().k();
  std::size_t rows = 0;
  for (const auto& s : stacks) {
    if (s.k() != k) throw Error(ErrorCode::ShapeMismatch, "stacks disagree on factor count");
    rows += s.height * s.width;
  }
  Matrix h(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(k));
  Eigen::Index offset = 0;
  for (const auto& s : stacks) {
    const std::size_t n = s.height * s.width;
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t r = 0; r < n; ++r)
        h(offset + static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = s.maps[j].values[r];
    offset += static_cast<Eigen::Index>(n);
  }
  return h;
}

Grid bilinear_upsample(const Grid& m, std::size_t target_h, std::size_t target_w) {
  if (m.height == 0 || m.width == 0 || target_h == 0 || target_w == 0)
    throw Error(ErrorCode::InvalidArgument, "bilinear_upsample needs non-empty source and target");
  if (m.height == target_h && m.width == target_w) return m;

  auto axis_scale = [](std::size_t src, std::size_t dst) {
    return (src == 1 || dst == 1) ? 0.0 : static_cast<double>(src - 1) / static_cast<double>(dst - 1);
  };
  const double sy = axis_scale(m.height, target_h);
  const double sx = axis_scale(m.width, target_w);

  // Precomputed column taps.
  std::vector<std::size_t> x0(target_w), x1(target_w);
  std::vector<double> fx(target_w);
  for (std::size_t X = 0; X < target_w; ++X) {
    const double cx = static_cast<double>(X) * sx;
    x0[X] = std::min(static_cast<std::size_t>(cx), m.width - 1);
    x1[X] = std::min(x0[X] + 1, m.width - 1);
    fx[X] = cx - static_cast<double>(x0[X]);
  }

  Grid out(target_h, target_w);
  for (std::size_t Y = 0; Y < target_h; ++Y) {
    const double cy = static_cast<double>(Y) * sy;
    const std::size_t y0 = std::min(static_cast<std::size_t>(cy), m.height - 1);
    const std::size_t y1 = std::min(y0 + 1, m.height - 1);
    const double fy = cy - static_cast<double>(y0);
    for (std::size_t X = 0; X < target_w; ++X) {
      const double top = (1.0 - fx[X]) * m.at(y0, x0[X]) + fx[X] * m.at(y0, x1[X]);
      const double bottom = (1.0 - fx[X]) * m.at(y1, x0[X]) + fx[X] * m.at(y1, x1[X]);
      out.at(Y, X) = static_cast<float>((1.0 - fy) * top + fy * bottom);
    }
  }
  return out;
}

HeatMapStack upsample_stack(const HeatMapStack& stack, std::size_t target_h, std::size_t target_w) {
  HeatMapStack out{stack.image_id, target_h, target_w, {}};
  out.maps.reserve(stack.k());
  for (const auto& g : stack.maps) out.maps.push_back(bilinear_upsample(g, target_h, target_w));
  return out;
}

std::vector<Color> default_palette(std::size_t k) {
  static constexpr Color kBase[] = {
      {230, 25, 75}, {60, 180, 75}, {0, 130, 200}, {255, 225, 25},
      {245, 130, 48}, {145, 30, 180}, {70, 240, 240}, {240, 50, 230},
  };
  std::vector<Color> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    if (i < std::size(kBase)) {
      out.push_back(kBase[i]);
      continue;
    }
    // golden-angle hue walk, full saturation and value
    const double hue = std::fmod(static_cast<double>(i) * 0.618033988749895, 1.0) * 6.0;
    const int sector = static_cast<int>(hue);
    const double f = hue - sector;
    const auto up = static_cast<std::uint8_t>(std::lround(255.0 * f));
    const auto down = static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - f)));
    switch (sector % 6) {
      case 0: out.push_back({255, up, 0}); break;
      case 1: out.push_back({down, 255, 0}); break;
      case 2: out.push_back({0, 255, up}); break;
      case 3: out.push_back({0, down, 255}); break;
      case 4: out.push_back({up, 0, 255}); break;
      default: out.push_back({255, 0, down}); break;
    }
  }
  return out;
}

RgbaImage render_overlay(const RgbImage& image, const HeatMapStack& stack, std::span<const Color> palette) {
  if (stack.height != image.height || stack.width != image.width)
    throw Error(ErrorCode::SizeMismatch, "heat maps must be upsampled to the image size before rendering");
  for (const auto& g : stack.maps)
    if (g.height != image.height || g.width != image.width)
      throw Error(ErrorCode::SizeMismatch, "heat map grid does not match the image size");
  if (palette.size() < stack.k())
    throw Error(ErrorCode::SizeMismatch, "palette has fewer colours than factors");

  const float gmax = stack.max_value();
  RgbaImage out(image.height, image.width);
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      const std::uint8_t* src = image.at(y, x);
      std::uint8_t* dst = out.at(y, x);
      std::size_t best = 0;
      float best_v = 0.0f;
      for (std::size_t j = 0; j < stack.k(); ++j) {
        const float v = stack.maps[j].at(y, x);
        if (v > best_v) {
          best_v = v;
          best = j;
        }
      }
      if (best_v <= 0.0f || gmax <= 0.0f) {
        std::copy(src, src + 3, dst);
      } else {
        const double alpha = std::min(1.0, static_cast<double>(best_v) / gmax);
        for (int c = 0; c < 3; ++c)
          dst[c] = static_cast<std::uint8_t>(
              std::lround((1.0 - alpha) * src[c] + alpha * palette[best][static_cast<std::size_t>(c)]));
      }
      dst[3] = 255;
    }
  }
  return out;
}

}  // namespace dff

namespace dff {

std::vector<std::vector<GrayImage>> scale_factor_maps(std::span<const HeatMapStack> stacks) {
  std::vector<std::vector<GrayImage>> out(stacks.size());
  if (stacks.empty()) return out;
  const std::size_t k = stacks.front().k();
  for (std::size_t f = 0; f < k; ++f) {
    float lo = std::numeric_limits<float>::max(), hi = std::numeric_limits<float>::lowest();
    for (const auto& s : stacks) {
      if (s.k() != k) throw Error(ErrorCode::ShapeMismatch, "stacks disagree on factor count");
      const auto [mn, mx] = std::minmax_element(s.maps[f].values.begin(), s.maps[f].values.end());
      lo = std::min(lo, *mn);
      hi = std::max(hi, *mx);
    }
    const double range = static_cast<double>(hi) - lo;
    for (std::size_t i = 0; i < stacks.size(); ++i) {
      const Grid& g = stacks[i].maps[f];
      GrayImage img(g.height, g.width);
      if (range > 0.0)
        for (std::size_t p = 0; p < g.values.size(); ++p)
          img.pixels[p] = static_cast<std::uint8_t>(std::lround(255.0 * (g.values[p] - lo) / range));
      out[i].push_back(std::move(img));
    }
  }
  return out;
}

}  // namespace dff
