#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dff/nmf.hpp"
#include "dff/tensor.hpp"

namespace dff {

/// Dense single-channel real raster, row-major.
struct Grid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> values;

  Grid() = default;
  Grid(std::size_t h, std::size_t w, float fill = 0.0f) : height(h), width(w), values(h * w, fill) {}

  float& at(std::size_t y, std::size_t x) { return values[y * width + x]; }
  float at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
  std::size_t size() const noexcept { return values.size(); }

  friend bool operator==(const Grid&, const Grid&) = default;
};

/// 8-bit interleaved raster with `Channels` samples per pixel.
template <int Channels>
struct Raster {
  static constexpr int kChannels = Channels;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;

  Raster() = default;
  Raster(std::size_t h, std::size_t w) : height(h), width(w), pixels(h * w * Channels, 0) {}

  std::uint8_t* at(std::size_t y, std::size_t x) { return &pixels[(y * width + x) * Channels]; }
  const std::uint8_t* at(std::size_t y, std::size_t x) const { return &pixels[(y * width + x) * Channels]; }

  friend bool operator==(const Raster&, const Raster&) = default;
};

using RgbImage = Raster<3>;
using RgbaImage = Raster<4>;

using Color = std::array<std::uint8_t, 3>;

/// The k heat maps of one image, one per factor.
struct HeatMapStack {
  std::string image_id;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<Grid> maps;

  std::size_t k() const noexcept { return maps.size(); }
  float max_value() const;

  friend bool operator==(const HeatMapStack&, const HeatMapStack&) = default;
};

/// Splits the columns of H into per-image maps following `layout`:
/// stack i, factor j, (y, x) = H(offset_i + y * w_i + x, j).
std::vector<HeatMapStack> columns_to_heatmaps(const Matrix& h, const BatchLayout& layout);
inline std::vector<HeatMapStack> columns_to_heatmaps(const Factorization& f, const BatchLayout& layout) {
  return columns_to_heatmaps(f.h, layout);
}

/// Inverse of columns_to_heatmaps: stacks the maps back into an H matrix.
Matrix heatmaps_to_columns(std::span<const HeatMapStack> stacks);

/// Align-corners bilinear resampling. Output (Y, X) samples the source at
/// (Y (h-1)/(H-1), X (w-1)/(W-1)); a degenerate axis samples coordinate 0.
Grid bilinear_upsample(const Grid& m, std::size_t target_h, std::size_t target_w);

HeatMapStack upsample_stack(const HeatMapStack& stack, std::size_t target_h, std::size_t target_w);

/// k visually distinct colours; the first entries are fixed, later ones cycle hue.
std::vector<Color> default_palette(std::size_t k);

/// Blends, per pixel, the colour of the strongest factor over `image` with
/// opacity equal to that factor's value divided by the stack's global max.
/// Ties go to the lower factor index; all-zero pixels keep the image colour.
/// The output alpha channel is opaque.
RgbaImage render_overlay(const RgbImage& image, const HeatMapStack& stack, std::span<const Color> palette);

}  // namespace dff

namespace dff {

using GrayImage = Raster<1>;

/// 8-bit renderings of every factor map, min-max scaled per factor over the
/// whole set. Result is indexed [image][factor]. A factor that is constant
/// over the set renders as all zeros.
std::vector<std::vector<GrayImage>> scale_factor_maps(std::span<const HeatMapStack> stacks);

}  // namespace dff
