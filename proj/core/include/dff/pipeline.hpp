#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dff/inference.hpp"
#include "dff/nmf.hpp"
#include "dff/refine.hpp"

namespace dff {

namespace fs = std::filesystem;

/// Everything a batch run needs. Every field can come from a JSON config
/// file (keys listed in README) and be overridden on the command line.
struct PipelineConfig {
  fs::path images;       ///< image list: {images: [{id, image_path}]}
  fs::path manifest;     ///< activation manifest; defaults to <output>/manifest.json
  ModelSpec model;
  NmfConfig nmf;
  RefineConfig refine;
  bool refine_enabled = true;
  double percentile = 75.0;
  double cov_threshold = 0.5;
  fs::path parts;       ///< parts index JSON, optional
  fs::path boxes;       ///< ground-truth boxes JSON, optional
  fs::path factor_map;  ///< manual factor -> parts map, optional
  std::string class_name = "object";
  std::size_t corloc_factor = 0;
  fs::path output = "dff_out";
  std::vector<int> ks;
  std::vector<std::string> layers;
  int sweep_seeds = 3;
  bool sweep_refine = false;
};

/// Reads a JSON config; relative paths are taken relative to the file.
PipelineConfig load_pipeline_config(const fs::path& path);
/// Applies the keys of a JSON object on top of `cfg`.
void apply_config_json(PipelineConfig& cfg, const std::string& json_text, const fs::path& base_dir);

/// Worker count for per-image stages: DFF_NUM_THREADS if set, else 1.
int thread_count();

/// Artifact locations below the output directory.
struct OutputLayout {
  fs::path root;
  fs::path manifest() const { return root / "manifest.json"; }
  fs::path activations() const { return root / "activations"; }
  fs::path factorization() const { return root / "factorization.dffn"; }
  fs::path heatmaps() const { return root / "heatmaps"; }
  fs::path masks() const { return root / "masks"; }
  fs::path boxes() const { return root / "boxes"; }
  fs::path metrics() const { return root / "metrics"; }
  fs::path render() const { return root / "render"; }
};

// Each stage reads its inputs from disk and writes its artifacts under
// cfg.output. Errors carry a "[stage]" prefix and keep their ErrorCode.
void stage_extract(const PipelineConfig& cfg);
void stage_factorize(const PipelineConfig& cfg);
/// Upsamples the heat maps to image resolution and, when enabled, refines them.
void stage_refine(const PipelineConfig& cfg);
void stage_segment(const PipelineConfig& cfg);
void stage_eval_parts(const PipelineConfig& cfg);
void stage_eval_corloc(const PipelineConfig& cfg);
void stage_render(const PipelineConfig& cfg);
void stage_sweep(const PipelineConfig& cfg);

/// extract -> factorize -> refine -> segment -> eval-parts -> eval-corloc -> render.
/// The evaluation stages run only when their ground truth is configured.
void run_pipeline(const PipelineConfig& cfg);

/// Checks that every configured input path exists (ConfigError otherwise).
void validate_paths(const PipelineConfig& cfg, bool need_images, bool need_model);

struct SweepRow {
  std::string layer;
  int k = 0;
  double mean_iou = 0.0;
  double std_iou = 0.0;
};

std::string sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace dff
