#include "dff/io.hpp"

#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "json.hpp"

#include "dff/error.hpp"
#include "dff/inference.hpp"

namespace dff {

using nlohmann::json;

namespace {

json parse_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::IoError, "malformed JSON in " + path.string() + ": " + e.what());
  }
}

fs::path resolve(const fs::path& base, const fs::path& p) {
  return p.is_absolute() || p.empty() ? p : base / p;
}

fs::path relative_if_inside(const fs::path& dir, const fs::path& p) {
  if (p.empty()) return p;
  std::error_code ec;
  const auto abs_dir = fs::weakly_canonical(dir, ec);
  const auto abs_p = fs::weakly_canonical(p, ec);
  auto rel = abs_p.lexically_relative(abs_dir);
  if (!rel.empty() && *rel.begin() != "..") return rel;
  return p;
}

void write_png(const fs::path& path, const cv::Mat& mat) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), mat, {cv::IMWRITE_PNG_COMPRESSION, 6});
  } catch (const cv::Exception& e) {
    throw Error(ErrorCode::IoError, "cannot write " + path.string() + ": " + e.msg);
  }
  if (!ok) throw Error(ErrorCode::IoError, "cannot write " + path.string());
}

cv::Mat read_image_mat(const fs::path& path, int flags) {
  cv::Mat m = cv::imread(path.string(), flags);
  if (m.empty()) throw Error(ErrorCode::IoError, "cannot decode image " + path.string());
  return m;
}

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(std::string_view bytes, std::size_t& pos) {
  if (pos + sizeof(T) > bytes.size()) throw Error(ErrorCode::DimMismatch, "truncated DFFN container");
  T v;
  std::memcpy(&v, bytes.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

BBox box_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4) throw Error(ErrorCode::IoError, "box must be [x_min, y_min, x_max, y_max]");
  BBox b{j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
  if (b.x_min > b.x_max || b.y_min > b.y_max) throw Error(ErrorCode::InvalidArgument, "box with inverted extent");
  return b;
}

}  // namespace

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error(ErrorCode::IoError, "short write to " + path.string());
}

std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

RgbImage read_rgb(const fs::path& path) {
  cv::Mat bgr = read_image_mat(path, cv::IMREAD_COLOR);
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  RgbImage out(static_cast<std::size_t>(rgb.rows), static_cast<std::size_t>(rgb.cols));
  for (int y = 0; y < rgb.rows; ++y)
    std::memcpy(out.at(static_cast<std::size_t>(y), 0), rgb.ptr<std::uint8_t>(y), out.width * 3);
  return out;
}

void write_rgb_png(const fs::path& path, const RgbImage& image) {
  cv::Mat rgb(static_cast<int>(image.height), static_cast<int>(image.width), CV_8UC3,
              const_cast<std::uint8_t*>(image.pixels.data()));
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  write_png(path, bgr);
}

void write_rgba_png(const fs::path& path, const RgbaImage& image) {
  cv::Mat rgba(static_cast<int>(image.height), static_cast<int>(image.width), CV_8UC4,
               const_cast<std::uint8_t*>(image.pixels.data()));
  cv::Mat bgra;
  cv::cvtColor(rgba, bgra, cv::COLOR_RGBA2BGRA);
  write_png(path, bgra);
}

GrayImage read_gray_png(const fs::path& path) {
  cv::Mat g = read_image_mat(path, cv::IMREAD_GRAYSCALE);
  GrayImage out(static_cast<std::size_t>(g.rows), static_cast<std::size_t>(g.cols));
  for (int y = 0; y < g.rows; ++y)
    std::memcpy(out.at(static_cast<std::size_t>(y), 0), g.ptr<std::uint8_t>(y), out.width);
  return out;
}

void write_gray_png(const fs::path& path, const GrayImage& image) {
  cv::Mat g(static_cast<int>(image.height), static_cast<int>(image.width), CV_8UC1,
            const_cast<std::uint8_t*>(image.pixels.data()));
  write_png(path, g);
}

void write_mask_png(const fs::path& path, const Mask& mask) {
  GrayImage g(mask.height, mask.width);
  for (std::size_t p = 0; p < mask.values.size(); ++p) g.pixels[p] = mask.values[p] ? 255 : 0;
  write_gray_png(path, g);
}

Mask read_mask_png(const fs::path& path) {
  const GrayImage g = read_gray_png(path);
  Mask m(g.height, g.width);
  for (std::size_t p = 0; p < g.pixels.size(); ++p) m.values[p] = g.pixels[p] > 127 ? 1 : 0;
  return m;
}

BatchManifest read_manifest(const fs::path& path) {
  const json j = parse_json(path);
  const fs::path base = path.parent_path();
  BatchManifest m;
  try {
    m.layer = j.value("layer", "");
    m.model = j.value("model", "");
    for (const auto& item : j.at("images")) {
      BatchManifest::Item it;
      it.id = item.at("id").get<std::string>();
      it.image_path = resolve(base, item.value("image_path", ""));
      it.activation_path = resolve(base, item.value("activation_path", ""));
      m.images.push_back(std::move(it));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::IoError, "bad manifest " + path.string() + ": " + e.what());
  }
  return m;
}

void write_manifest(const fs::path& path, const BatchManifest& manifest) {
  const fs::path base = path.parent_path().empty() ? fs::path(".") : path.parent_path();
  json j;
  j["layer"] = manifest.layer;
  j["model"] = manifest.model;
  j["images"] = json::array();
  for (const auto& it : manifest.images) {
    j["images"].push_back({{"id", it.id},
                           {"image_path", relative_if_inside(base, it.image_path).generic_string()},
                           {"activation_path", relative_if_inside(base, it.activation_path).generic_string()}});
  }
  write_text(path, j.dump(1) + "\n");
}

std::vector<ActivationTensor> load_manifest_activations(const BatchManifest& manifest) {
  std::vector<ActivationTensor> out;
  out.reserve(manifest.images.size());
  for (const auto& it : manifest.images) out.push_back(load_activations(it.activation_path, it.id));
  return out;
}

std::string encode_factorization(const Factorization& f, const BatchLayout& layout) {
  const auto rows = static_cast<std::uint32_t>(f.h.rows());
  const auto k = static_cast<std::uint32_t>(f.h.cols());
  const auto cols = static_cast<std::uint32_t>(f.w.cols());
  if (f.w.rows() != f.h.cols()) throw Error(ErrorCode::ShapeMismatch, "H and W disagree on rank");
  if (layout.total_rows() != rows) throw Error(ErrorCode::LayoutMismatch, "layout does not cover H");

  std::string out;
  out.append("DFFN", 4);
  put<std::uint16_t>(out, kDffnVersion);
  put<std::uint32_t>(out, rows);
  put<std::uint32_t>(out, k);
  put<std::uint32_t>(out, cols);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(f.iterations_run));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(f.loss_trace.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(layout.size()));
  for (const auto& e : layout.entries()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.image_id.size()));
    out.append(e.image_id);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.height));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.width));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(e.row_offset));
  }
  out.append(reinterpret_cast<const char*>(f.h.data()), static_cast<std::size_t>(f.h.size()) * sizeof(float));
  out.append(reinterpret_cast<const char*>(f.w.data()), static_cast<std::size_t>(f.w.size()) * sizeof(float));
  out.append(reinterpret_cast<const char*>(f.loss_trace.data()), f.loss_trace.size() * sizeof(double));
  return out;
}

StoredFactorization decode_factorization(std::string_view bytes) {
  if (bytes.size() < 4 || bytes.substr(0, 4) != "DFFN") throw Error(ErrorCode::BadMagic, "not a DFFN container");
  std::size_t pos = 4;
  const auto version = take<std::uint16_t>(bytes, pos);
  if (version != kDffnVersion) throw Error(ErrorCode::VersionUnsupported, "DFFN version " + std::to_string(version));
  const auto rows = take<std::uint32_t>(bytes, pos);
  const auto k = take<std::uint32_t>(bytes, pos);
  const auto cols = take<std::uint32_t>(bytes, pos);
  const auto iterations = take<std::uint32_t>(bytes, pos);
  const auto trace_len = take<std::uint32_t>(bytes, pos);
  const auto n_images = take<std::uint32_t>(bytes, pos);

  std::vector<LayoutEntry> entries;
  for (std::uint32_t i = 0; i < n_images; ++i) {
    const auto len = take<std::uint32_t>(bytes, pos);
    if (pos + len > bytes.size()) throw Error(ErrorCode::DimMismatch, "truncated DFFN layout");
    LayoutEntry e;
    e.image_id = std::string(bytes.substr(pos, len));
    pos += len;
    e.height = take<std::uint32_t>(bytes, pos);
    e.width = take<std::uint32_t>(bytes, pos);
    e.row_offset = take<std::uint64_t>(bytes, pos);
    entries.push_back(std::move(e));
  }

  const std::size_t h_bytes = std::size_t{rows} * k * sizeof(float);
  const std::size_t w_bytes = std::size_t{k} * cols * sizeof(float);
  const std::size_t t_bytes = std::size_t{trace_len} * sizeof(double);
  if (bytes.size() - pos != h_bytes + w_bytes + t_bytes)
    throw Error(ErrorCode::DimMismatch, "DFFN payload size does not match its header");

  StoredFactorization out{Factorization{}, BatchLayout(std::move(entries))};
  auto& f = out.factorization;
  f.h.resize(rows, k);
  f.w.resize(k, cols);
  f.loss_trace.resize(trace_len);
  f.iterations_run = static_cast<int>(iterations);
  std::memcpy(f.h.data(), bytes.data() + pos, h_bytes);
  pos += h_bytes;
  std::memcpy(f.w.data(), bytes.data() + pos, w_bytes);
  pos += w_bytes;
  std::memcpy(f.loss_trace.data(), bytes.data() + pos, t_bytes);
  if (out.layout.total_rows() != rows) throw Error(ErrorCode::LayoutMismatch, "DFFN layout does not cover H");
  if ((f.h.array() < 0.0f).any() || (f.w.array() < 0.0f).any())
    throw Error(ErrorCode::NonNegativityViolated, "DFFN factors contain negative entries");
  return out;
}

void save_factorization(const fs::path& path, const Factorization& f, const BatchLayout& layout) {
  write_text(path, encode_factorization(f, layout));
}

StoredFactorization load_factorization(const fs::path& path) { return decode_factorization(read_text(path)); }

void save_stack(const fs::path& path, const HeatMapStack& stack) {
  const std::size_t k = stack.k();
  std::vector<float> data(stack.height * stack.width * k);
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t p = 0; p < stack.height * stack.width; ++p) data[p * k + j] = stack.maps[j].values[p];
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  save_activations(ActivationTensor(stack.image_id, stack.height, stack.width, k, std::move(data)), path);
}

HeatMapStack load_stack(const fs::path& path, const std::string& image_id) {
  const ActivationTensor t = load_activations(path, image_id);
  HeatMapStack s{image_id, t.height(), t.width(), {}};
  s.maps.assign(t.channels(), Grid(t.height(), t.width()));
  for (std::size_t p = 0; p < t.height() * t.width(); ++p)
    for (std::size_t j = 0; j < t.channels(); ++j) s.maps[j].values[p] = t.data()[p * t.channels() + j];
  return s;
}

PartsIndex read_parts_index(const fs::path& path) {
  const json j = parse_json(path);
  const fs::path base = path.parent_path();
  PartsIndex idx;
  try {
    for (const auto& b : j.value("background_labels", json::array())) idx.background_labels.insert(b.get<std::string>());
    for (const auto& [label, images] : j.at("parts").items())
      for (const auto& [image, file] : images.items())
        idx.parts[label][image] = resolve(base, file.get<std::string>());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::IoError, "bad parts index " + path.string() + ": " + e.what());
  }
  return idx;
}

std::vector<PartAnnotation> load_part_annotations(const PartsIndex& index, std::span<const ImageShape> images) {
  std::vector<PartAnnotation> out;
  for (const auto& [label, files] : index.parts) {
    PartAnnotation p{label, {}};
    for (const auto& img : images) {
      const auto it = files.find(img.id);
      if (it == files.end()) {
        p.masks.emplace_back(img.height, img.width);
        continue;
      }
      Mask m = read_mask_png(it->second);
      if (m.height != img.height || m.width != img.width)
        throw Error(ErrorCode::SizeMismatch, "part '" + label + "' mask for '" + img.id + "' is " +
                                                 std::to_string(m.height) + "x" + std::to_string(m.width) +
                                                 ", image is " + std::to_string(img.height) + "x" +
                                                 std::to_string(img.width));
      p.masks.push_back(std::move(m));
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::map<std::string, std::vector<BBox>> read_boxes(const fs::path& path) {
  const json j = parse_json(path);
  std::map<std::string, std::vector<BBox>> out;
  try {
    for (const auto& [image, list] : j.items()) {
      auto& v = out[image];
      for (const auto& b : list) v.push_back(box_from_json(b));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::IoError, "bad box file " + path.string() + ": " + e.what());
  }
  return out;
}

void write_boxes(const fs::path& path, const std::map<std::string, std::vector<BBox>>& boxes) {
  json j = json::object();
  for (const auto& [image, list] : boxes) {
    json arr = json::array();
    for (const auto& b : list) arr.push_back({b.x_min, b.y_min, b.x_max, b.y_max});
    j[image] = std::move(arr);
  }
  write_text(path, j.dump(1) + "\n");
}

std::map<std::size_t, std::vector<std::string>> read_factor_map(const fs::path& path) {
  const json j = parse_json(path);
  std::map<std::size_t, std::vector<std::string>> out;
  try {
    for (const auto& [key, labels] : j.items()) {
      std::size_t f = 0;
      const auto res = std::from_chars(key.data(), key.data() + key.size(), f);
      if (res.ec != std::errc{} || res.ptr != key.data() + key.size())
        throw Error(ErrorCode::ConfigError, "factor map key '" + key + "' is not a factor index");
      for (const auto& l : labels) out[f].push_back(l.get<std::string>());
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, "bad factor map " + path.string() + ": " + e.what());
  }
  return out;
}

}  // namespace dff
