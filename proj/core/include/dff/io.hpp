#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "dff/heatmap.hpp"
#include "dff/nmf.hpp"
#include "dff/segmentation.hpp"
#include "dff/tensor.hpp"

namespace dff {

namespace fs = std::filesystem;

// ---- raster files -----------------------------------------------------------

RgbImage read_rgb(const fs::path& path);
void write_rgb_png(const fs::path& path, const RgbImage& image);
void write_rgba_png(const fs::path& path, const RgbaImage& image);
GrayImage read_gray_png(const fs::path& path);
void write_gray_png(const fs::path& path, const GrayImage& image);

/// Masks are stored as 8-bit PNG with 0 / 255; on read any value > 127 is foreground.
void write_mask_png(const fs::path& path, const Mask& mask);
Mask read_mask_png(const fs::path& path);

// ---- batch manifest -----------------------------------------------------------

/// {images: [{id, image_path, activation_path}], layer, model}
struct BatchManifest {
  struct Item {
    std::string id;
    fs::path image_path;
    fs::path activation_path;
  };
  std::vector<Item> images;
  std::string layer;
  std::string model;
};

/// Relative paths are resolved against the manifest's directory.
BatchManifest read_manifest(const fs::path& path);
/// Paths inside `dir` of the manifest are written relative to it.
void write_manifest(const fs::path& path, const BatchManifest& manifest);

/// Loads every activation file listed in the manifest, in order.
std::vector<ActivationTensor> load_manifest_activations(const BatchManifest& manifest);

// ---- factorization container -----------------------------------------------------

// DFFN container, little-endian:
//   "DFFN" | u16 version = 1 | u32 rows | u32 k | u32 cols | u32 iterations_run |
//   u32 trace_len | u32 n_images |
//   n_images x (u32 id_len | id bytes | u32 h | u32 w | u64 row_offset) |
//   H float32 rows*k row-major | W float32 k*cols row-major | trace float64
inline constexpr std::uint16_t kDffnVersion = 1;

struct StoredFactorization {
  Factorization factorization;
  BatchLayout layout;
};

std::string encode_factorization(const Factorization& f, const BatchLayout& layout);
StoredFactorization decode_factorization(std::string_view bytes);
void save_factorization(const fs::path& path, const Factorization& f, const BatchLayout& layout);
StoredFactorization load_factorization(const fs::path& path);

// ---- heat map stacks (stored as DFFA tensors with k channels) --------------------

void save_stack(const fs::path& path, const HeatMapStack& stack);
HeatMapStack load_stack(const fs::path& path, const std::string& image_id);

// ---- ground truth -------------------------------------------------------------------

/// {"background_labels": [...], "parts": {label: {image_id: mask_path}}}
struct PartsIndex {
  std::set<std::string> background_labels;
  std::map<std::string, std::map<std::string, fs::path>> parts;
};

PartsIndex read_parts_index(const fs::path& path);

struct ImageShape {
  std::string id;
  std::size_t height = 0;
  std::size_t width = 0;
};

/// One PartAnnotation per label (label order), masks in `images` order. An
/// image missing from a part gets an empty mask.
std::vector<PartAnnotation> load_part_annotations(const PartsIndex& index, std::span<const ImageShape> images);

/// {image_id: [[x_min, y_min, x_max, y_max], ...]}
std::map<std::string, std::vector<BBox>> read_boxes(const fs::path& path);
void write_boxes(const fs::path& path, const std::map<std::string, std::vector<BBox>>& boxes);

/// Manual factor -> part labels, {"0": ["head"], "2": ["leg", "tail"]}.
std::map<std::size_t, std::vector<std::string>> read_factor_map(const fs::path& path);

// ---- small helpers -----------------------------------------------------------------------

std::string read_text(const fs::path& path);
void write_text(const fs::path& path, const std::string& text);

/// Shortest decimal form that round-trips the double.
std::string format_number(double v);

}  // namespace dff
