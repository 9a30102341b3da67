#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace adarelu {

using Index = Eigen::Index;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using MatrixRM = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Extent of a rank-4 (batch, channel, height, width) tensor.
struct Shape {
  Index n = 0;
  Index c = 0;
  Index h = 0;
  Index w = 0;

  Index size() const { return n * c * h * w; }
  Index plane() const { return h * w; }
  friend bool operator==(const Shape&, const Shape&) = default;
  std::string str() const;
};

/// Dense rank-4 tensor stored row-major in (n, c, h, w) order.
template <typename Scalar>
class Tensor {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using PlaneMap = Eigen::Map<Array>;
  using ConstPlaneMap = Eigen::Map<const Array>;

  Tensor() = default;
  explicit Tensor(const Shape& shape) : shape_(shape), data_(Array::Zero(shape.size())) {}
  Tensor(const Shape& shape, Array data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size()) {
      throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                  " does not match shape " + shape_.str());
    }
  }
  Tensor(const Shape& shape, std::initializer_list<Scalar> values) : Tensor(shape) {
    if (static_cast<Index>(values.size()) != shape.size()) {
      throw std::invalid_argument("initializer length does not match shape " + shape.str());
    }
    Index k = 0;
    for (Scalar v : values) data_[k++] = v;
  }

  static Tensor constant(const Shape& shape, Scalar value) {
    return Tensor(shape, Array::Constant(shape.size(), value));
  }

  const Shape& shape() const { return shape_; }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Array& array() { return data_; }
  const Array& array() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Scalar& operator[](Index k) { return data_[k]; }
  Scalar operator[](Index k) const { return data_[k]; }

  Index offset(Index n, Index c, Index y, Index x) const {
    return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }
  Scalar& operator()(Index n, Index c, Index y, Index x) { return data_[offset(n, c, y, x)]; }
  Scalar operator()(Index n, Index c, Index y, Index x) const { return data_[offset(n, c, y, x)]; }

  /// Contiguous h*w plane of one (sample, channel) pair.
  PlaneMap plane(Index n, Index c) {
    return PlaneMap(data_.data() + (n * shape_.c + c) * shape_.plane(), shape_.plane());
  }
  ConstPlaneMap plane(Index n, Index c) const {
    return ConstPlaneMap(data_.data() + (n * shape_.c + c) * shape_.plane(), shape_.plane());
  }

  /// One sample viewed as a (c x h*w) row-major matrix.
  Eigen::Map<MatrixRM<Scalar>> sample(Index n) {
    return {data_.data() + n * shape_.c * shape_.plane(), shape_.c, shape_.plane()};
  }
  Eigen::Map<const MatrixRM<Scalar>> sample(Index n) const {
    return {data_.data() + n * shape_.c * shape_.plane(), shape_.c, shape_.plane()};
  }

  /// Same data under a new shape with equal element count.
  Tensor reshaped(const Shape& shape) const { return Tensor(shape, data_); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

  bool all_finite() const { return data_.isFinite().all(); }

 private:
  Shape shape_;
  Array data_;
};

/// Throws std::invalid_argument naming both shapes when they differ.
void require_same_shape(const Shape& a, const Shape& b, const std::string& what);

/// Per-channel mean and population variance.
template <typename Scalar>
struct ChannelStats {
  Eigen::Array<Scalar, Eigen::Dynamic, 1> mean;
  Eigen::Array<Scalar, Eigen::Dynamic, 1> variance;
  Scalar epsilon = Scalar(1e-5);

  Eigen::Array<Scalar, Eigen::Dynamic, 1> stddev() const { return (variance + epsilon).sqrt(); }
};

/// Stats of each channel pooled over batch and spatial positions.
template <typename Scalar>
ChannelStats<Scalar> channel_stats(const Tensor<Scalar>& t);

/// Stats of each (sample, channel) plane; entry k = n * C + c.
template <typename Scalar>
ChannelStats<Scalar> instance_stats(const Tensor<Scalar>& t);

template <typename Scalar, typename F>
Tensor<Scalar> map_elements(const Tensor<Scalar>& t, F&& f) {
  Tensor<Scalar> out(t.shape());
  for (Index k = 0; k < t.size(); ++k) out[k] = f(t[k]);
  return out;
}

/// alpha * x + y.
template <typename Scalar>
Tensor<Scalar> axpy(Scalar alpha, const Tensor<Scalar>& x, const Tensor<Scalar>& y) {
  require_same_shape(x.shape(), y.shape(), "axpy");
  return Tensor<Scalar>(x.shape(), alpha * x.array() + y.array());
}

/// Gaussian tensor. Draws in double so float and double tensors share values for a seed.
template <typename Scalar>
Tensor<Scalar> randn(const Shape& shape, std::mt19937_64& rng, double stddev = 1.0, double mean = 0.0) {
  std::normal_distribution<double> dist(mean, stddev);
  Tensor<Scalar> out(shape);
  for (Index k = 0; k < out.size(); ++k) out[k] = static_cast<Scalar>(dist(rng));
  return out;
}

template <typename Scalar>
Tensor<Scalar> rand_uniform(const Shape& shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<Scalar> out(shape);
  for (Index k = 0; k < out.size(); ++k) out[k] = static_cast<Scalar>(dist(rng));
  return out;
}

/// Stack single samples (n == 1 each) along the batch axis.
template <typename Scalar>
Tensor<Scalar> stack(const std::vector<Tensor<Scalar>>& samples);

/// Extract sample i as a batch-of-one tensor.
template <typename Scalar>
Tensor<Scalar> slice_sample(const Tensor<Scalar>& t, Index i);

/// SplitMix64 finalizer; used to derive independent sub-seeds.
std::uint64_t mix_seed(std::uint64_t x);

}  // namespace adarelu
