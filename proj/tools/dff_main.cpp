// Command-line front end: extract -> factorize -> refine -> segment ->
// evaluate -> render, plus layer/k sweeps.
//
// Exit status: 0 ok, 2 configuration error, 3 data error, 4 numeric failure.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "dff/error.hpp"
#include "dff/pipeline.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

// Flag values; only flags actually given override the config file.
struct Flags {
  std::string config;
  std::optional<std::string> images, manifest, model, layer, parts, boxes, factor_map, output, init, class_name;
  std::optional<int> input_size, k, max_iters, iterations, radius, sweep_seeds;
  std::optional<double> rel_tol, epsilon, pairwise_weight, background_level, percentile, cov_threshold;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> corloc_factor;
  std::vector<int> ks;
  std::vector<std::string> layers;
  bool no_refine = false;
  bool sweep_refine = false;
};

void add_flags(CLI::App* cmd, Flags& f) {
  cmd->add_option("-c,--config", f.config, "JSON config file (flags take precedence)");
  cmd->add_option("--images", f.images, "image list JSON {images: [{id, image_path}]}");
  cmd->add_option("--manifest", f.manifest, "activation manifest (default <output>/manifest.json)");
  cmd->add_option("--model", f.model, "ONNX model file");
  cmd->add_option("--layer", f.layer, "name of the post-ReLU layer to tap");
  cmd->add_option("--input-size", f.input_size, "square input resize, 0 keeps native size");
  cmd->add_option("-k,--k", f.k, "NMF rank");
  cmd->add_option("--max-iters", f.max_iters, "NMF iteration cap");
  cmd->add_option("--rel-tol", f.rel_tol, "NMF relative loss-change stopping threshold");
  cmd->add_option("--init", f.init, "NMF init: uniform | nndsvd");
  cmd->add_option("--seed", f.seed, "NMF seed");
  cmd->add_flag("--no-refine", f.no_refine, "skip guided-filter mean-field refinement");
  cmd->add_option("--iterations", f.iterations, "mean-field iterations");
  cmd->add_option("--radius", f.radius, "guided filter radius in pixels");
  cmd->add_option("--epsilon", f.epsilon, "guided filter regularizer");
  cmd->add_option("--pairwise-weight", f.pairwise_weight, "weight of the filtered message");
  cmd->add_option("--background-level", f.background_level, "unary score of the background channel");
  cmd->add_option("--percentile", f.percentile, "binarization percentile");
  cmd->add_option("--cov-threshold", f.cov_threshold, "part association coverage threshold");
  cmd->add_option("--parts", f.parts, "parts index JSON");
  cmd->add_option("--boxes", f.boxes, "ground-truth boxes JSON");
  cmd->add_option("--factor-map", f.factor_map, "manual factor -> parts JSON");
  cmd->add_option("--class", f.class_name, "class name for the CorLoc CSV");
  cmd->add_option("--corloc-factor", f.corloc_factor, "factor whose boxes are scored for CorLoc");
  cmd->add_option("-o,--output", f.output, "output directory");
  cmd->add_option("--ks", f.ks, "sweep: k values");
  cmd->add_option("--layers", f.layers, "sweep: layer names");
  cmd->add_option("--sweep-seeds", f.sweep_seeds, "sweep: NMF seeds per cell");
  cmd->add_flag("--sweep-refine", f.sweep_refine, "sweep: refine heat maps before scoring");
}

dff::PipelineConfig build_config(const Flags& f) {
  dff::PipelineConfig cfg;
  if (!f.config.empty()) cfg = dff::load_pipeline_config(f.config);
  if (f.images) cfg.images = *f.images;
  if (f.manifest) cfg.manifest = *f.manifest;
  if (f.model) cfg.model.model_path = *f.model;
  if (f.layer) cfg.model.layer_name = *f.layer;
  if (f.input_size) cfg.model.input_size = *f.input_size;
  if (f.k) cfg.nmf.k = *f.k;
  if (f.max_iters) cfg.nmf.max_iters = *f.max_iters;
  if (f.rel_tol) cfg.nmf.rel_tol = *f.rel_tol;
  if (f.init) dff::apply_config_json(cfg, R"({"init": ")" + *f.init + R"("})", ".");
  if (f.seed) cfg.nmf.seed = *f.seed;
  if (f.no_refine) cfg.refine_enabled = false;
  if (f.iterations) cfg.refine.iterations = *f.iterations;
  if (f.radius) cfg.refine.radius = *f.radius;
  if (f.epsilon) cfg.refine.epsilon = *f.epsilon;
  if (f.pairwise_weight) cfg.refine.pairwise_weight = *f.pairwise_weight;
  if (f.background_level) cfg.refine.background_level = *f.background_level;
  if (f.percentile) cfg.percentile = *f.percentile;
  if (f.cov_threshold) cfg.cov_threshold = *f.cov_threshold;
  if (f.parts) cfg.parts = *f.parts;
  if (f.boxes) cfg.boxes = *f.boxes;
  if (f.factor_map) cfg.factor_map = *f.factor_map;
  if (f.class_name) cfg.class_name = *f.class_name;
  if (f.corloc_factor) cfg.corloc_factor = *f.corloc_factor;
  if (f.output) cfg.output = *f.output;
  if (!f.ks.empty()) cfg.ks = f.ks;
  if (!f.layers.empty()) cfg.layers = f.layers;
  if (f.sweep_seeds) cfg.sweep_seeds = *f.sweep_seeds;
  if (f.sweep_refine) cfg.sweep_refine = true;
  return cfg;
}

int exit_code(const dff::Error& e) {
  switch (dff::category_of(e.code())) {
    case dff::ErrorCategory::Config: return kExitConfig;
    case dff::ErrorCategory::Numeric: return kExitNumeric;
    case dff::ErrorCategory::Data: break;
  }
  return kExitData;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep feature factorization: concept discovery and co-segmentation from CNN activations"};
  app.require_subcommand(1);

  Flags flags;
  struct Command {
    const char* name;
    const char* help;
    void (*run)(const dff::PipelineConfig&);
  };
  const Command commands[] = {
      {"extract", "run the network and write DFFA activations + manifest", dff::stage_extract},
      {"factorize", "NMF over the concatenated activations", dff::stage_factorize},
      {"refine", "upsample heat maps to image size and refine them", dff::stage_refine},
      {"segment", "binarize heat maps and fit boxes", dff::stage_segment},
      {"eval-parts", "coverage-based part association and dataset IoU", dff::stage_eval_parts},
      {"eval-corloc", "CorLoc of the predicted boxes", dff::stage_eval_corloc},
      {"render", "factor maps and colour overlays", dff::stage_render},
      {"sweep", "average best-match IoU over layers x k x seeds", dff::stage_sweep},
      {"run", "full pipeline", dff::run_pipeline},
  };
  std::vector<std::pair<CLI::App*, const Command*>> subs;
  for (const auto& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    add_flags(sub, flags);
    subs.emplace_back(sub, &c);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  for (const auto& [sub, cmd] : subs) {
    if (!sub->parsed()) continue;
    try {
      const dff::PipelineConfig cfg = build_config(flags);
      cmd->run(cfg);
      return 0;
    } catch (const dff::Error& e) {
      std::cerr << "dff " << cmd->name << ": " << e.what() << '\n';
      return exit_code(e);
    } catch (const std::exception& e) {
      std::cerr << "dff " << cmd->name << ": " << e.what() << '\n';
      return kExitData;
    }
  }
  return kExitConfig;
}
