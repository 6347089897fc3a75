#include "dff/pipeline.hpp"

#include <cmath>
#include <cstdlib>
#include <exception>
#include <map>
#include <numeric>
#include <sstream>
#include <thread>

#include <opencv2/core.hpp>

#include "json.hpp"

#include "dff/error.hpp"
#include "dff/heatmap.hpp"
#include "dff/io.hpp"
#include "dff/segmentation.hpp"

namespace dff {

using nlohmann::json;

namespace {

template <typename F>
void in_stage(const char* stage, F&& body) {
  try {
    body();
  } catch (const Error& e) {
    if (!e.stage().empty()) throw;
    throw e.in_stage(stage);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, e.what(), stage);
  } catch (const fs::filesystem_error& e) {
    throw Error(ErrorCode::IoError, e.what(), stage);
  } catch (const cv::Exception& e) {
    throw Error(ErrorCode::IoError, e.msg, stage);
  }
}

// Runs body(i) for i in [0, n) on up to thread_count() workers. Results must
// be written to per-index slots, so output does not depend on scheduling.
template <typename F>
void parallel_for(std::size_t n, F&& body) {
  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(thread_count()), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < workers; ++t)
      pool.emplace_back([&, t] {
        for (std::size_t i = t; i < n; i += workers) {
          try {
            body(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

fs::path manifest_path(const PipelineConfig& cfg) {
  return cfg.manifest.empty() ? OutputLayout{cfg.output}.manifest() : cfg.manifest;
}

fs::path factor_dir(const fs::path& root, std::size_t f) { return root / ("f" + std::to_string(f)); }

std::vector<ImageShape> image_shapes(const BatchManifest& m) {
  std::vector<ImageShape> out;
  for (const auto& it : m.images) {
    const RgbImage img = read_rgb(it.image_path);
    out.push_back({it.id, img.height, img.width});
  }
  return out;
}

std::vector<HeatMapStack> load_stacks(const PipelineConfig& cfg, const BatchManifest& m) {
  const OutputLayout out{cfg.output};
  std::vector<HeatMapStack> stacks;
  for (const auto& it : m.images) stacks.push_back(load_stack(out.heatmaps() / (it.id + ".dffa"), it.id));
  return stacks;
}

std::size_t stored_rank(const PipelineConfig& cfg) {
  return static_cast<std::size_t>(load_factorization(OutputLayout{cfg.output}.factorization()).factorization.rank());
}

std::vector<BinaryMaskSet> load_masks(const PipelineConfig& cfg, const BatchManifest& m) {
  const OutputLayout out{cfg.output};
  const std::size_t k = stored_rank(cfg);
  std::vector<BinaryMaskSet> sets;
  for (std::size_t f = 0; f < k; ++f) {
    BinaryMaskSet s{f, {}};
    for (const auto& it : m.images) s.masks.push_back(read_mask_png(factor_dir(out.masks(), f) / (it.id + ".png")));
    sets.push_back(std::move(s));
  }
  return sets;
}

PartAnnotation union_part(std::span<const PartAnnotation* const> parts, std::span<const ImageShape> shapes) {
  PartAnnotation u{"", {}};
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    Mask m(shapes[i].height, shapes[i].width);
    for (const PartAnnotation* p : parts)
      for (std::size_t q = 0; q < m.values.size(); ++q) m.values[q] |= p->masks[i].values[q];
    u.masks.push_back(std::move(m));
  }
  return u;
}

std::string join(const std::vector<std::string>& items, char sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}

// Upsampled (and optionally refined) stacks at image resolution.
std::vector<HeatMapStack> image_resolution_stacks(const Matrix& h, const BatchLayout& layout,
                                                  std::span<const RgbImage> images, const RefineConfig& refine,
                                                  bool refine_enabled) {
  std::vector<HeatMapStack> stacks = columns_to_heatmaps(h, layout);
  parallel_for(stacks.size(), [&](std::size_t i) {
    stacks[i] = upsample_stack(stacks[i], images[i].height, images[i].width);
  });
  if (!refine_enabled) return stacks;

  refine.validate();
  const double scale = set_max(stacks);
  const double bg = refine.background_level ? *refine.background_level : default_background_level(stacks);
  std::vector<HeatMapStack> refined(stacks.size());
  parallel_for(stacks.size(), [&](std::size_t i) {
    refined[i] = meanfield_refine_image(stacks[i], luma_guide(images[i]), refine, scale, bg);
  });
  return refined;
}

void require(const fs::path& p, const char* what) {
  if (p.empty()) throw Error(ErrorCode::ConfigError, std::string(what) + " is not configured");
  if (!fs::exists(p)) throw Error(ErrorCode::ConfigError, std::string(what) + " not found: " + p.string());
}

NmfInit parse_init(const std::string& s) {
  if (s == "uniform" || s == "seeded_uniform") return NmfInit::SeededUniform;
  if (s == "nndsvd") return NmfInit::Nndsvd;
  throw Error(ErrorCode::ConfigError, "unknown init '" + s + "' (expected uniform or nndsvd)");
}

}  // namespace

int thread_count() {
  if (const char* env = std::getenv("DFF_NUM_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) return static_cast<int>(std::min(v, 256L));
  }
  return 1;
}

void apply_config_json(PipelineConfig& cfg, const std::string& json_text, const fs::path& base_dir) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("malformed config: ") + e.what());
  }
  auto path_of = [&](const char* key, fs::path& dst) {
    if (j.contains(key) && !j[key].is_null()) {
      fs::path p = j[key].get<std::string>();
      dst = p.is_absolute() ? p : base_dir / p;
    }
  };
  try {
    path_of("images", cfg.images);
    path_of("manifest", cfg.manifest);
    path_of("model", cfg.model.model_path);
    path_of("parts", cfg.parts);
    path_of("boxes", cfg.boxes);
    path_of("factor_map", cfg.factor_map);
    path_of("output", cfg.output);
    if (j.contains("layer")) cfg.model.layer_name = j["layer"].get<std::string>();
    if (j.contains("input_size")) cfg.model.input_size = j["input_size"].get<int>();
    if (j.contains("mean")) cfg.model.mean = j["mean"].get<std::array<float, 3>>();
    if (j.contains("std")) cfg.model.std = j["std"].get<std::array<float, 3>>();
    if (j.contains("k")) cfg.nmf.k = j["k"].get<int>();
    if (j.contains("max_iters")) cfg.nmf.max_iters = j["max_iters"].get<int>();
    if (j.contains("rel_tol")) cfg.nmf.rel_tol = j["rel_tol"].get<double>();
    if (j.contains("init")) cfg.nmf.init = parse_init(j["init"].get<std::string>());
    if (j.contains("seed")) cfg.nmf.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("refine")) {
      const json& r = j["refine"];
      if (r.contains("enabled")) cfg.refine_enabled = r["enabled"].get<bool>();
      if (r.contains("iterations")) cfg.refine.iterations = r["iterations"].get<int>();
      if (r.contains("radius")) cfg.refine.radius = r["radius"].get<int>();
      if (r.contains("epsilon")) cfg.refine.epsilon = r["epsilon"].get<double>();
      if (r.contains("pairwise_weight")) cfg.refine.pairwise_weight = r["pairwise_weight"].get<double>();
      if (r.contains("background_level")) {
        if (r["background_level"].is_null())
          cfg.refine.background_level.reset();
        else
          cfg.refine.background_level = r["background_level"].get<double>();
      }
    }
    if (j.contains("percentile")) cfg.percentile = j["percentile"].get<double>();
    if (j.contains("cov_threshold")) cfg.cov_threshold = j["cov_threshold"].get<double>();
    if (j.contains("class")) cfg.class_name = j["class"].get<std::string>();
    if (j.contains("corloc_factor")) cfg.corloc_factor = j["corloc_factor"].get<std::size_t>();
    if (j.contains("ks")) cfg.ks = j["ks"].get<std::vector<int>>();
    if (j.contains("layers")) cfg.layers = j["layers"].get<std::vector<std::string>>();
    if (j.contains("sweep_seeds")) cfg.sweep_seeds = j["sweep_seeds"].get<int>();
    if (j.contains("sweep_refine")) cfg.sweep_refine = j["sweep_refine"].get<bool>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("bad config value: ") + e.what());
  }
}

PipelineConfig load_pipeline_config(const fs::path& path) {
  PipelineConfig cfg;
  if (!fs::exists(path)) throw Error(ErrorCode::ConfigError, "config file not found: " + path.string());
  apply_config_json(cfg, read_text(path), path.parent_path());
  return cfg;
}

void validate_paths(const PipelineConfig& cfg, bool need_images, bool need_model) {
  if (need_images) require(cfg.images, "image list");
  if (need_model) require(cfg.model.model_path, "model");
  if (!cfg.parts.empty()) require(cfg.parts, "parts index");
  if (!cfg.boxes.empty()) require(cfg.boxes, "ground-truth boxes");
  if (!cfg.factor_map.empty()) require(cfg.factor_map, "factor map");
  if (!(cfg.percentile > 0.0 && cfg.percentile < 100.0))
    throw Error(ErrorCode::ConfigError, "percentile must lie in (0, 100)");
  if (!(cfg.cov_threshold >= 0.0 && cfg.cov_threshold <= 1.0))
    throw Error(ErrorCode::ConfigError, "cov_threshold must lie in [0, 1]");
}

void stage_extract(const PipelineConfig& cfg) {
  in_stage("extract", [&] {
    validate_paths(cfg, true, true);
    cv::setNumThreads(thread_count());
    const BatchManifest list = read_manifest(cfg.images);
    if (list.images.empty()) throw Error(ErrorCode::EmptyBatch, "image list is empty");
    const OutputLayout out{cfg.output};
    fs::create_directories(out.activations());

    const ActivationExtractor extractor(cfg.model);
    BatchManifest manifest;
    manifest.layer = cfg.model.layer_name;
    manifest.model = fs::absolute(cfg.model.model_path).lexically_normal().string();
    manifest.images.resize(list.images.size());
    parallel_for(list.images.size(), [&](std::size_t i) {
      const auto& item = list.images[i];
      const ActivationTensor t = extractor.extract(item.id, read_rgb(item.image_path));
      const fs::path act = out.activations() / (item.id + ".dffa");
      save_activations(t, act);
      manifest.images[i] = {item.id, fs::absolute(item.image_path).lexically_normal(), act};
    });
    write_manifest(out.manifest(), manifest);
  });
}

void stage_factorize(const PipelineConfig& cfg) {
  in_stage("factorize", [&] {
    const fs::path mpath = manifest_path(cfg);
    require(mpath, "activation manifest");
    const BatchManifest manifest = read_manifest(mpath);
    const std::vector<ActivationTensor> tensors = load_manifest_activations(manifest);
    if (tensors.empty()) throw Error(ErrorCode::EmptyBatch, "manifest lists no images");
    const Batch batch = flatten_batch(tensors);
    const Factorization f = nmf_factorize(batch.matrix, cfg.nmf);
    save_factorization(OutputLayout{cfg.output}.factorization(), f, batch.layout);
  });
}

void stage_refine(const PipelineConfig& cfg) {
  in_stage("refine", [&] {
    const OutputLayout out{cfg.output};
    const BatchManifest manifest = read_manifest(manifest_path(cfg));
    const StoredFactorization stored = load_factorization(out.factorization());
    std::vector<RgbImage> images;
    for (const auto& it : manifest.images) images.push_back(read_rgb(it.image_path));
    if (stored.layout.size() != images.size())
      throw Error(ErrorCode::LayoutMismatch, "factorization and manifest list different image counts");
    for (std::size_t i = 0; i < images.size(); ++i)
      if (stored.layout.entries()[i].image_id != manifest.images[i].id)
        throw Error(ErrorCode::LayoutMismatch, "factorization and manifest disagree on image order");

    const auto stacks =
        image_resolution_stacks(stored.factorization.h, stored.layout, images, cfg.refine, cfg.refine_enabled);
    fs::create_directories(out.heatmaps());
    for (const auto& s : stacks) save_stack(out.heatmaps() / (s.image_id + ".dffa"), s);
  });
}

void stage_segment(const PipelineConfig& cfg) {
  in_stage("segment", [&] {
    const OutputLayout out{cfg.output};
    const BatchManifest manifest = read_manifest(manifest_path(cfg));
    const auto stacks = load_stacks(cfg, manifest);
    const auto sets = binarize_stacks(stacks, cfg.percentile);
    for (const auto& set : sets) {
      std::map<std::string, std::vector<BBox>> boxes;
      for (std::size_t i = 0; i < set.masks.size(); ++i) {
        const auto& id = manifest.images[i].id;
        write_mask_png(factor_dir(out.masks(), set.factor_id) / (id + ".png"), set.masks[i]);
        if (set.masks[i].count() > 0) boxes[id].push_back(largest_component_bbox(set.masks[i]));
      }
      write_boxes(out.boxes() / ("f" + std::to_string(set.factor_id) + ".json"), boxes);
    }
  });
}

void stage_eval_parts(const PipelineConfig& cfg) {
  in_stage("eval-parts", [&] {
    require(cfg.parts, "parts index");
    const OutputLayout out{cfg.output};
    const BatchManifest manifest = read_manifest(manifest_path(cfg));
    const auto shapes = image_shapes(manifest);
    const PartsIndex index = read_parts_index(cfg.parts);
    const auto parts = load_part_annotations(index, shapes);
    const auto sets = load_masks(cfg, manifest);
    std::map<std::size_t, std::vector<std::string>> manual;
    if (!cfg.factor_map.empty()) manual = read_factor_map(cfg.factor_map);

    std::ostringstream csv;
    csv << "factor,parts,coverage,iou\n";
    for (const auto& set : sets) {
      std::vector<std::string> labels;
      if (!cfg.factor_map.empty()) {
        if (auto it = manual.find(set.factor_id); it != manual.end()) labels = it->second;
      } else {
        std::map<std::string, double> cov;
        for (const auto& p : parts) {
          try {
            cov[p.label] = coverage(set, p);
          } catch (const Error& e) {
            if (e.code() != ErrorCode::EmptyPart) throw;
          }
        }
        const auto chosen = associate_parts(cov, cfg.cov_threshold);
        labels.assign(chosen.begin(), chosen.end());
      }
      std::vector<const PartAnnotation*> assoc;
      for (const auto& l : labels) {
        const auto it = std::find_if(parts.begin(), parts.end(), [&](const auto& p) { return p.label == l; });
        if (it == parts.end()) throw Error(ErrorCode::ConfigError, "factor map names unknown part '" + l + "'");
        assoc.push_back(&*it);
      }
      double cov_value = 0.0, iou_value = 0.0;
      if (!assoc.empty()) {
        const PartAnnotation u = union_part(assoc, shapes);
        if (std::any_of(u.masks.begin(), u.masks.end(), [](const Mask& m) { return m.count() > 0; }))
          cov_value = coverage(set, u);
        try {
          iou_value = dataset_iou(set, std::span<const PartAnnotation>(&u, 1));
        } catch (const Error& e) {
          if (e.code() != ErrorCode::EmptyUnion) throw;
        }
      }
      csv << set.factor_id << ',' << join(labels, ';') << ',' << format_number(cov_value) << ','
          << format_number(iou_value) << '\n';
    }
    write_text(out.metrics() / "parts.csv", csv.str());

    const double avg = average_best_iou(sets, parts, index.background_labels);
    write_text(out.metrics() / "summary.csv", "metric,value\naverage_best_iou," + format_number(avg) + "\n");
  });
}

void stage_eval_corloc(const PipelineConfig& cfg) {
  in_stage("eval-corloc", [&] {
    require(cfg.boxes, "ground-truth boxes");
    const OutputLayout out{cfg.output};
    const BatchManifest manifest = read_manifest(manifest_path(cfg));
    const auto gt = read_boxes(cfg.boxes);
    const auto pred_file = read_boxes(out.boxes() / ("f" + std::to_string(cfg.corloc_factor) + ".json"));

    std::map<std::string, BBox> preds;
    for (const auto& [id, list] : pred_file)
      if (!list.empty()) preds[id] = list.front();
    // images without any foreground count as misses
    double value = 0.0;
    if (!preds.empty())
      value = corloc(preds, gt) * static_cast<double>(preds.size()) / static_cast<double>(manifest.images.size());
    for (const auto& it : manifest.images)
      if (!gt.contains(it.id)) throw Error(ErrorCode::MissingGroundTruth, "no ground-truth box for '" + it.id + "'");
    write_text(out.metrics() / "corloc.csv", "class,corloc\n" + cfg.class_name + "," + format_number(value) + "\n");
  });
}

void stage_render(const PipelineConfig& cfg) {
  in_stage("render", [&] {
    const OutputLayout out{cfg.output};
    const BatchManifest manifest = read_manifest(manifest_path(cfg));
    const auto stacks = load_stacks(cfg, manifest);
    const auto gray = scale_factor_maps(stacks);
    const auto palette = default_palette(stacks.empty() ? 0 : stacks.front().k());
    parallel_for(stacks.size(), [&](std::size_t i) {
      const auto& id = manifest.images[i].id;
      for (std::size_t f = 0; f < gray[i].size(); ++f)
        write_gray_png(factor_dir(out.render() / "maps", f) / (id + ".png"), gray[i][f]);
      const RgbImage img = read_rgb(manifest.images[i].image_path);
      write_rgba_png(out.render() / "overlays" / (id + ".png"), render_overlay(img, stacks[i], palette));
    });
  });
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream csv;
  csv << "layer,k,mean_iou,std_iou\n";
  for (const auto& r : rows)
    csv << r.layer << ',' << r.k << ',' << format_number(r.mean_iou) << ',' << format_number(r.std_iou) << '\n';
  return csv.str();
}

void stage_sweep(const PipelineConfig& cfg) {
  in_stage("sweep", [&] {
    validate_paths(cfg, true, true);
    require(cfg.parts, "parts index");
    if (cfg.ks.empty()) throw Error(ErrorCode::ConfigError, "sweep needs a non-empty k list");
    if (cfg.sweep_seeds < 1) throw Error(ErrorCode::ConfigError, "sweep_seeds must be >= 1");
    cv::setNumThreads(thread_count());

    const BatchManifest list = read_manifest(cfg.images);
    std::vector<RgbImage> images;
    std::vector<ImageShape> shapes;
    for (const auto& it : list.images) {
      images.push_back(read_rgb(it.image_path));
      shapes.push_back({it.id, images.back().height, images.back().width});
    }
    const PartsIndex index = read_parts_index(cfg.parts);
    const auto parts = load_part_annotations(index, shapes);
    const std::vector<std::string> layers = cfg.layers.empty() ? std::vector{cfg.model.layer_name} : cfg.layers;

    std::vector<SweepRow> rows;
    for (const auto& layer : layers) {
      ModelSpec spec = cfg.model;
      spec.layer_name = layer;
      const ActivationExtractor extractor(spec);
      std::vector<ActivationTensor> tensors;
      for (std::size_t i = 0; i < images.size(); ++i) tensors.push_back(extractor.extract(list.images[i].id, images[i]));
      const Batch batch = flatten_batch(tensors);

      for (int k : cfg.ks) {
        std::vector<double> scores;
        for (int s = 0; s < cfg.sweep_seeds; ++s) {
          NmfConfig nmf = cfg.nmf;
          nmf.k = k;
          nmf.seed = cfg.nmf.seed + static_cast<std::uint64_t>(s);
          const Factorization f = nmf_factorize(batch.matrix, nmf);
          const auto stacks = image_resolution_stacks(f.h, batch.layout, images, cfg.refine, cfg.sweep_refine);
          const auto sets = binarize_stacks(stacks, cfg.percentile);
          scores.push_back(average_best_iou(sets, parts, index.background_labels));
        }
        const double mean = std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size());
        double var = 0.0;
        for (double v : scores) var += (v - mean) * (v - mean);
        rows.push_back({layer, k, mean, std::sqrt(var / static_cast<double>(scores.size()))});
      }
    }
    write_text(OutputLayout{cfg.output}.root / "sweep.csv", sweep_csv(rows));
  });
}

void run_pipeline(const PipelineConfig& cfg) {
  in_stage("config", [&] {
    validate_paths(cfg, true, true);
    cfg.nmf.validate();
    if (cfg.refine_enabled) cfg.refine.validate();
  });
  stage_extract(cfg);
  stage_factorize(cfg);
  stage_refine(cfg);
  stage_segment(cfg);
  if (!cfg.parts.empty()) stage_eval_parts(cfg);
  if (!cfg.boxes.empty()) stage_eval_corloc(cfg);
  stage_render(cfg);
}

}  // namespace dff
