#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <string>

#include "dff/heatmap.hpp"
#include "dff/tensor.hpp"

namespace dff {

/// Which network to run and where to tap it.
struct ModelSpec {
  std::filesystem::path model_path;  ///< ONNX graph
  std::string layer_name;            ///< node output to read, must be post-ReLU
  int input_size = 224;              ///< square resize target; 0 keeps the native size
  std::array<float, 3> mean{0.485f, 0.456f, 0.406f};
  std::array<float, 3> std{0.229f, 0.224f, 0.225f};
};

/// Runs a convolutional network up to a named layer and returns the tap as
/// an h x w x c tensor. The loaded network is shared; calls to extract()
/// are serialized internally.
class ActivationExtractor {
 public:
  explicit ActivationExtractor(ModelSpec spec);
  ~ActivationExtractor();
  ActivationExtractor(ActivationExtractor&&) noexcept;
  ActivationExtractor& operator=(ActivationExtractor&&) noexcept;

  const ModelSpec& spec() const noexcept;

  /// Resizes (bilinear) to input_size unless the image already has that
  /// size, normalizes (x/255 - mean)/std per channel, and runs the network.
  ActivationTensor extract(const std::string& image_id, const RgbImage& image) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Convenience wrapper that loads the model for a single call.
ActivationTensor extract_activations(const ModelSpec& spec, const std::string& image_id, const RgbImage& image);

// DFFA container, little-endian:
//   "DFFA" | u16 version = 1 | u8 dtype = 1 (float32) | u8 ndim = 3 |
//   u32 h | u32 w | u32 c | h*w*c float32, row-major (h, w, c)
inline constexpr std::uint16_t kDffaVersion = 1;

void save_activations(const ActivationTensor& t, const std::filesystem::path& path);
/// The image id is not stored in the container and is taken from the caller.
ActivationTensor load_activations(const std::filesystem::path& path, const std::string& image_id = {});

std::string encode_activations(const ActivationTensor& t);
ActivationTensor decode_activations(std::string_view bytes, const std::string& image_id = {});

}  // namespace dff
