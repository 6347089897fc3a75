#include "dff/tensor.hpp"

#include <cmath>
#include <utility>

#include "dff/error.hpp"

namespace dff {
namespace {

void check_values(std::span<const float> values) {
  for (float v : values) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFinite, "activation value is not finite");
    if (v < 0.0f) throw Error(ErrorCode::NonNegativityViolated, "negative activation value");
  }
}

}  // namespace

ActivationTensor::ActivationTensor(std::string image_id, std::size_t height, std::size_t width,
                                   std::size_t channels, std::vector<float> data)
    : image_id_(std::move(image_id)),
      height_(height),
      width_(width),
      channels_(channels),
      data_(std::move(data)) {
  if (height_ == 0 || width_ == 0 || channels_ == 0)
    throw Error(ErrorCode::InvalidArgument, "activation tensor dimensions must be positive");
  if (data_.size() != height_ * width_ * channels_)
    throw Error(ErrorCode::DimMismatch,
                "tensor payload has " + std::to_string(data_.size()) + " values, expected " +
                    std::to_string(height_ * width_ * channels_));
  check_values(data_);
}

FeatureMatrix::FeatureMatrix(Matrix data) : data_(std::move(data)) {
  check_values(std::span<const float>(data_.data(), static_cast<std::size_t>(data_.size())));
}

BatchLayout::BatchLayout(std::vector<LayoutEntry> entries) : entries_(std::move(entries)) {
  std::size_t expected = 0;
  for (const auto& e : entries_) {
    if (e.rows() == 0) throw Error(ErrorCode::InvalidArgument, "layout entry with zero rows");
    if (e.row_offset != expected)
      throw Error(ErrorCode::LayoutMismatch, "layout offsets are not contiguous at '" + e.image_id + "'");
    expected += e.rows();
  }
}

BatchLayout BatchLayout::from_shapes(std::span<const LayoutEntry> shapes) {
  std::vector<LayoutEntry> entries(shapes.begin(), shapes.end());
  std::size_t offset = 0;
  for (auto& e : entries) {
    e.row_offset = offset;
    offset += e.rows();
  }
  return BatchLayout(std::move(entries));
}

std::size_t BatchLayout::total_rows() const noexcept {
  if (entries_.empty()) return 0;
  return entries_.back().row_offset + entries_.back().rows();
}

FeatureMatrix flatten_activations(const ActivationTensor& t) {
  const auto rows = static_cast<Eigen::Index>(t.height() * t.width());
  const auto cols = static_cast<Eigen::Index>(t.channels());
  return FeatureMatrix(Eigen::Map<const Matrix>(t.data().data(), rows, cols));
}

FeatureMatrix flatten_activations(ActivationTensor&& t) {
  const auto rows = static_cast<Eigen::Index>(t.height() * t.width());
  const auto cols = static_cast<Eigen::Index>(t.channels());
  std::vector<float> data = std::move(t).release();
  return FeatureMatrix(Eigen::Map<const Matrix>(data.data(), rows, cols));
}

Batch make_batch(const ActivationTensor& t) {
  LayoutEntry e{t.image_id(), t.height(), t.width(), 0};
  return Batch{flatten_activations(t), BatchLayout({e})};
}

Batch concat_batch(std::span<const Batch> parts) {
  if (parts.empty()) throw Error(ErrorCode::EmptyBatch, "cannot concatenate an empty batch");
  const Eigen::Index cols = parts.front().matrix.cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.matrix.cols() != cols)
      throw Error(ErrorCode::ChannelMismatch, "channel counts differ: " + std::to_string(cols) +
                                                  " vs " + std::to_string(p.matrix.cols()));
    if (static_cast<std::size_t>(p.matrix.rows()) != p.layout.total_rows())
      throw Error(ErrorCode::LayoutMismatch, "batch layout does not cover its matrix");
    rows += p.matrix.rows();
  }

  Matrix stacked(rows, cols);
  std::vector<LayoutEntry> entries;
  Eigen::Index offset = 0;
  for (const auto& p : parts) {
    stacked.middleRows(offset, p.matrix.rows()) = p.matrix.matrix();
    for (auto e : p.layout.entries()) {
      e.row_offset += static_cast<std::size_t>(offset);
      entries.push_back(std::move(e));
    }
    offset += p.matrix.rows();
  }
  return Batch{FeatureMatrix(std::move(stacked)), BatchLayout(std::move(entries))};
}

Batch flatten_batch(std::span<const ActivationTensor> tensors) {
  std::vector<Batch> parts;
  parts.reserve(tensors.size());
  for (const auto& t : tensors) parts.push_back(make_batch(t));
  return concat_batch(parts);
}

ActivationTensor unflatten(const FeatureMatrix& m, const LayoutEntry& entry) {
  if (entry.row_offset + entry.rows() > static_cast<std::size_t>(m.rows()))
    throw Error(ErrorCode::LayoutMismatch, "layout entry '" + entry.image_id + "' exceeds matrix rows");
  const auto block = m.matrix().middleRows(static_cast<Eigen::Index>(entry.row_offset),
                                           static_cast<Eigen::Index>(entry.rows()));
  std::vector<float> data(static_cast<std::size_t>(block.size()));
  Eigen::Map<Matrix>(data.data(), block.rows(), block.cols()) = block;
  return ActivationTensor(entry.image_id, entry.height, entry.width,
                          static_cast<std::size_t>(m.cols()), std::move(data));
}

std::vector<ActivationTensor> unflatten(const Batch& batch) {
  if (batch.layout.total_rows() != static_cast<std::size_t>(batch.matrix.rows()))
    throw Error(ErrorCode::LayoutMismatch, "layout row count does not match matrix");
  std::vector<ActivationTensor> out;
  out.reserve(batch.layout.size());
  for (const auto& e : batch.layout.entries()) out.push_back(unflatten(batch.matrix, e));
  return out;
}

}  // namespace dff
