#include "adarelu/tensor.hpp"

namespace adarelu {

std::string Shape::str() const {
  return "(" + std::to_string(n) + ", " + std::to_string(c) + ", " + std::to_string(h) + ", " +
         std::to_string(w) + ")";
}

void require_same_shape(const Shape& a, const Shape& b, const std::string& what) {
  if (!(a == b)) {
    throw std::invalid_argument(what + ": shape mismatch " + a.str() + " vs " + b.str());
  }
}

template <typename Scalar>
ChannelStats<Scalar> channel_stats(const Tensor<Scalar>& t) {
  const Shape& s = t.shape();
  if (t.empty()) throw std::invalid_argument("empty tensor");
  ChannelStats<Scalar> stats;
  stats.mean.setZero(s.c);
  stats.variance.setZero(s.c);
  const Scalar count = static_cast<Scalar>(s.n * s.plane());
  for (Index c = 0; c < s.c; ++c) {
    Scalar sum = 0;
    for (Index n = 0; n < s.n; ++n) sum += t.plane(n, c).sum();
    const Scalar mean = sum / count;
    Scalar sq = 0;
    for (Index n = 0; n < s.n; ++n) sq += (t.plane(n, c) - mean).square().sum();
    stats.mean[c] = mean;
    stats.variance[c] = sq / count;
  }
  return stats;
}

template <typename Scalar>
ChannelStats<Scalar> instance_stats(const Tensor<Scalar>& t) {
  const Shape& s = t.shape();
  if (t.empty()) throw std::invalid_argument("empty tensor");
  ChannelStats<Scalar> stats;
  stats.mean.setZero(s.n * s.c);
  stats.variance.setZero(s.n * s.c);
  const Scalar count = static_cast<Scalar>(s.plane());
  for (Index n = 0; n < s.n; ++n) {
    for (Index c = 0; c < s.c; ++c) {
      auto p = t.plane(n, c);
      const Scalar mean = p.sum() / count;
      stats.mean[n * s.c + c] = mean;
      stats.variance[n * s.c + c] = (p - mean).square().sum() / count;
    }
  }
  return stats;
}

template <typename Scalar>
Tensor<Scalar> stack(const std::vector<Tensor<Scalar>>& samples) {
  if (samples.empty()) throw std::invalid_argument("stack: no samples");
  Shape s = samples.front().shape();
  if (s.n != 1) throw std::invalid_argument("stack: expected batch-of-one samples");
  Shape out_shape{static_cast<Index>(samples.size()), s.c, s.h, s.w};
  Tensor<Scalar> out(out_shape);
  const Index stride = s.size();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    require_same_shape(samples[i].shape(), s, "stack");
    out.array().segment(static_cast<Index>(i) * stride, stride) = samples[i].array();
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> slice_sample(const Tensor<Scalar>& t, Index i) {
  const Shape& s = t.shape();
  if (i < 0 || i >= s.n) throw std::out_of_range("slice_sample: index out of range");
  const Index stride = s.c * s.plane();
  return Tensor<Scalar>({1, s.c, s.h, s.w}, t.array().segment(i * stride, stride));
}

std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

#define ADARELU_INSTANTIATE(S)                                         \
  template ChannelStats<S> channel_stats(const Tensor<S>&);            \
  template ChannelStats<S> instance_stats(const Tensor<S>&);           \
  template Tensor<S> stack(const std::vector<Tensor<S>>&);             \
  template Tensor<S> slice_sample(const Tensor<S>&, Index);

ADARELU_INSTANTIATE(float)
ADARELU_INSTANTIATE(double)

}  // namespace adarelu
