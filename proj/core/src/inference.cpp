#include "dff/inference.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <mutex>
#include <sstream>

#include <opencv2/core.hpp>
#include <opencv2/dnn.hpp>
#include <opencv2/imgproc.hpp>

#include "dff/error.hpp"

namespace dff {

static_assert(std::endian::native == std::endian::little, "DFFA I/O assumes a little-endian host");

struct ActivationExtractor::Impl {
  ModelSpec spec;
  mutable cv::dnn::Net net;
  mutable std::mutex mutex;
};

ActivationExtractor::ActivationExtractor(ModelSpec spec) : impl_(std::make_unique<Impl>()) {
  impl_->spec = std::move(spec);
  const auto& s = impl_->spec;
  if (s.input_size < 0) throw Error(ErrorCode::InvalidArgument, "input_size must be >= 0");
  for (float v : s.std)
    if (!(v > 0.0f)) throw Error(ErrorCode::InvalidArgument, "normalization std must be > 0");
  if (!std::filesystem::exists(s.model_path))
    throw Error(ErrorCode::ModelLoadError, "model file not found: " + s.model_path.string());
  try {
    impl_->net = cv::dnn::readNetFromONNX(s.model_path.string());
  } catch (const cv::Exception& e) {
    throw Error(ErrorCode::ModelLoadError, "cannot load '" + s.model_path.string() + "': " + e.msg);
  }
  if (impl_->net.empty()) throw Error(ErrorCode::ModelLoadError, "empty network: " + s.model_path.string());
  impl_->net.setPreferableBackend(cv::dnn::DNN_BACKEND_OPENCV);
  impl_->net.setPreferableTarget(cv::dnn::DNN_TARGET_CPU);
  if (impl_->net.getLayerId(s.layer_name) < 0)
    throw Error(ErrorCode::LayerNotFound, "layer '" + s.layer_name + "' not in " + s.model_path.string());
}

ActivationExtractor::~ActivationExtractor() = default;
ActivationExtractor::ActivationExtractor(ActivationExtractor&&) noexcept = default;
ActivationExtractor& ActivationExtractor::operator=(ActivationExtractor&&) noexcept = default;

const ModelSpec& ActivationExtractor::spec() const noexcept { return impl_->spec; }

ActivationTensor ActivationExtractor::extract(const std::string& image_id, const RgbImage& image) const {
  const auto& s = impl_->spec;
  if (image.height == 0 || image.width == 0) throw Error(ErrorCode::InvalidArgument, "empty image");

  cv::Mat rgb(static_cast<int>(image.height), static_cast<int>(image.width), CV_8UC3,
              const_cast<std::uint8_t*>(image.pixels.data()));
  cv::Mat sized = rgb;
  const auto target = s.input_size;
  if (target > 0 && (rgb.rows != target || rgb.cols != target))
    cv::resize(rgb, sized, cv::Size(target, target), 0.0, 0.0, cv::INTER_LINEAR);

  const int h = sized.rows, w = sized.cols;
  int dims[4] = {1, 3, h, w};
  cv::Mat blob(4, dims, CV_32F);
  auto* out = blob.ptr<float>();
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y) {
      const auto* row = sized.ptr<std::uint8_t>(y);
      for (int x = 0; x < w; ++x)
        out[(c * h + y) * w + x] = (static_cast<float>(row[x * 3 + c]) / 255.0f - s.mean[c]) / s.std[c];
    }

  cv::Mat result;
  {
    std::lock_guard lock(impl_->mutex);
    try {
      impl_->net.setInput(blob);
      result = impl_->net.forward(s.layer_name).clone();
    } catch (const cv::Exception& e) {
      throw Error(ErrorCode::ModelLoadError, "forward pass failed: " + e.msg);
    }
  }
  if (result.dims != 4 || result.size[0] != 1)
    throw Error(ErrorCode::ShapeMismatch, "layer '" + s.layer_name + "' is not a 3-D feature map");

  const int c = result.size[1], lh = result.size[2], lw = result.size[3];
  std::vector<float> data(static_cast<std::size_t>(c) * lh * lw);
  const auto* in = result.ptr<float>();
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < lh; ++y)
      for (int x = 0; x < lw; ++x) {
        const float v = in[(ch * lh + y) * lw + x];
        if (v < 0.0f)
          throw Error(ErrorCode::NonNegativityViolated,
                      "layer '" + s.layer_name + "' produced negative activations (pre-ReLU tap?)");
        data[(static_cast<std::size_t>(y) * lw + x) * c + ch] = v;
      }
  return ActivationTensor(image_id, static_cast<std::size_t>(lh), static_cast<std::size_t>(lw),
                          static_cast<std::size_t>(c), std::move(data));
}

ActivationTensor extract_activations(const ModelSpec& spec, const std::string& image_id, const RgbImage& image) {
  return ActivationExtractor(spec).extract(image_id, image);
}

namespace {

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(std::string_view bytes, std::size_t& pos) {
  if (pos + sizeof(T) > bytes.size()) throw Error(ErrorCode::DimMismatch, "truncated DFFA header");
  T v;
  std::memcpy(&v, bytes.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

constexpr std::size_t kHeaderSize = 4 + 2 + 1 + 1 + 3 * 4;

}  // namespace

std::string encode_activations(const ActivationTensor& t) {
  std::string out;
  out.reserve(kHeaderSize + t.data().size() * sizeof(float));
  out.append("DFFA", 4);
  put<std::uint16_t>(out, kDffaVersion);
  put<std::uint8_t>(out, 1);
  put<std::uint8_t>(out, 3);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.height()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.width()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.channels()));
  out.append(reinterpret_cast<const char*>(t.data().data()), t.data().size() * sizeof(float));
  return out;
}

ActivationTensor decode_activations(std::string_view bytes, const std::string& image_id) {
  if (bytes.size() < 4 || bytes.substr(0, 4) != "DFFA") throw Error(ErrorCode::BadMagic, "not a DFFA container");
  std::size_t pos = 4;
  const auto version = take<std::uint16_t>(bytes, pos);
  if (version != kDffaVersion)
    throw Error(ErrorCode::VersionUnsupported, "DFFA version " + std::to_string(version));
  const auto dtype = take<std::uint8_t>(bytes, pos);
  if (dtype != 1) throw Error(ErrorCode::VersionUnsupported, "DFFA dtype " + std::to_string(dtype));
  const auto ndim = take<std::uint8_t>(bytes, pos);
  if (ndim != 3) throw Error(ErrorCode::DimMismatch, "DFFA ndim " + std::to_string(ndim) + ", expected 3");
  const auto h = take<std::uint32_t>(bytes, pos);
  const auto w = take<std::uint32_t>(bytes, pos);
  const auto c = take<std::uint32_t>(bytes, pos);
  const std::size_t payload = bytes.size() - pos;
  const std::size_t expected = static_cast<std::size_t>(h) * w * c;
  if (payload % sizeof(float) != 0 || payload / sizeof(float) != expected)
    throw Error(ErrorCode::DimMismatch, "header claims " + std::to_string(h) + "x" + std::to_string(w) + "x" +
                                            std::to_string(c) + " but payload holds " +
                                            std::to_string(payload / sizeof(float)) + " floats");
  std::vector<float> data(expected);
  std::memcpy(data.data(), bytes.data() + pos, payload);
  return ActivationTensor(image_id, h, w, c, std::move(data));
}

void save_activations(const ActivationTensor& t, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  const std::string bytes = encode_activations(t);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "short write to " + path.string());
}

ActivationTensor load_activations(const std::filesystem::path& path, const std::string& image_id) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_activations(bytes, image_id);
}

}  // namespace dff
