#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace dff {

/// Dense row-major single-precision matrix used throughout the library.
using Matrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Activations of one image at one layer, stored h-major, then w, then c.
/// Immutable once constructed; every value is finite and non-negative.
class ActivationTensor {
 public:
  ActivationTensor(std::string image_id, std::size_t height, std::size_t width,
                   std::size_t channels, std::vector<float> data);

  const std::string& image_id() const noexcept { return image_id_; }
  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t channels() const noexcept { return channels_; }
  std::span<const float> data() const noexcept { return data_; }

  float at(std::size_t y, std::size_t x, std::size_t c) const {
    return data_[(y * width_ + x) * channels_ + c];
  }

  /// Hands the payload over without copying; the tensor is left empty.
  std::vector<float> release() && { return std::move(data_); }

  friend bool operator==(const ActivationTensor&, const ActivationTensor&) = default;

 private:
  std::string image_id_;
  std::size_t height_;
  std::size_t width_;
  std::size_t channels_;
  std::vector<float> data_;
};

/// Non-negative matrix whose rows are c-dimensional feature vectors.
class FeatureMatrix {
 public:
  explicit FeatureMatrix(Matrix data);

  Eigen::Index rows() const noexcept { return data_.rows(); }
  Eigen::Index cols() const noexcept { return data_.cols(); }
  const Matrix& matrix() const noexcept { return data_; }

  friend bool operator==(const FeatureMatrix& a, const FeatureMatrix& b) {
    return a.data_.rows() == b.data_.rows() && a.data_.cols() == b.data_.cols() &&
           a.data_ == b.data_;
  }

 private:
  Matrix data_;
};

struct LayoutEntry {
  std::string image_id;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t row_offset = 0;

  std::size_t rows() const noexcept { return height * width; }
  friend bool operator==(const LayoutEntry&, const LayoutEntry&) = default;
};

/// Per-image row spans of a concatenated feature matrix, in concatenation order.
class BatchLayout {
 public:
  BatchLayout() = default;
  explicit BatchLayout(std::vector<LayoutEntry> entries);

  /// Builds a layout from (id, h, w) triples, computing the offsets.
  static BatchLayout from_shapes(std::span<const LayoutEntry> shapes);

  const std::vector<LayoutEntry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t total_rows() const noexcept;

  friend bool operator==(const BatchLayout&, const BatchLayout&) = default;

 private:
  std::vector<LayoutEntry> entries_;
};

/// A feature matrix together with the layout that makes it invertible.
struct Batch {
  FeatureMatrix matrix;
  BatchLayout layout;

  friend bool operator==(const Batch&, const Batch&) = default;
};

FeatureMatrix flatten_activations(const ActivationTensor& t);
FeatureMatrix flatten_activations(ActivationTensor&& t);

/// Wraps a single tensor as a one-image batch.
Batch make_batch(const ActivationTensor& t);

/// Vertically stacks batches; all must share the channel count.
Batch concat_batch(std::span<const Batch> parts);

/// Flattens and concatenates a list of tensors in order.
Batch flatten_batch(std::span<const ActivationTensor> tensors);

/// Inverse of flatten for the rows [offset, offset + h*w) of `m`.
ActivationTensor unflatten(const FeatureMatrix& m, const LayoutEntry& entry);
std::vector<ActivationTensor> unflatten(const Batch& batch);

}  // namespace dff
