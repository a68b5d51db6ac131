#include "ternforge/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ternforge {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::kEmptyTensor: return "EMPTY_TENSOR";
    case Errc::kNanInput: return "NAN_INPUT";
    case Errc::kShapeMismatch: return "SHAPE_MISMATCH";
    case Errc::kInvalidTrit: return "INVALID_TRIT";
    case Errc::kCorruptTrit: return "CORRUPT_TRIT";
    case Errc::kBadMagic: return "BAD_MAGIC";
    case Errc::kBadVersion: return "BAD_VERSION";
    case Errc::kTruncated: return "TRUNCATED";
    case Errc::kDuplicateTensor: return "DUPLICATE_TENSOR";
    case Errc::kSizeMismatch: return "SIZE_MISMATCH";
    case Errc::kAccumOverflowRisk: return "ACCUM_OVERFLOW_RISK";
    case Errc::kDimNotDivisible: return "DIM_NOT_DIVISIBLE";
    case Errc::kMissingTensor: return "MISSING_TENSOR";
    case Errc::kNanDetected: return "NAN_DETECTED";
    case Errc::kMissingTrace: return "MISSING_TRACE";
    case Errc::kInvalidArgument: return "INVALID_ARGUMENT";
    case Errc::kIo: return "IO_ERROR";
  }
  return "UNKNOWN";
}

Shape::Shape(std::initializer_list<std::size_t> dims) : Shape(std::vector<std::size_t>(dims)) {}

Shape::Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
  for (std::size_t d : dims_) {
    if (d == 0) throw Error(Errc::kEmptyTensor, "zero-sized dim in shape " + to_string(*this));
  }
}

std::size_t Shape::numel() const noexcept {
  if (dims_.empty()) return 0;
  std::size_t n = 1;
  for (std::size_t d : dims_) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.rank(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

I32Accumulator::I32Accumulator(Shape shape, std::size_t reduction_length)
    : values_(std::move(shape)), reduction_length_(reduction_length) {
  if (reduction_length_ > kMaxReductionLength) {
    throw Error(Errc::kAccumOverflowRisk, "reduction length " + std::to_string(reduction_length_) +
                                              " exceeds " + std::to_string(kMaxReductionLength));
  }
}

float reduce_abs_mean(std::span<const float> values) {
  if (values.empty()) throw Error(Errc::kEmptyTensor, "reduce_abs_mean of empty tensor");
  float sum = 0.0f;
  for (float v : values) sum += std::fabs(v);
  return sum / static_cast<float>(values.size());
}

float reduce_abs_mean(const F32Tensor& t) { return reduce_abs_mean(t.data()); }

F32Tensor reduce_abs_max(const F32Tensor& t, TrailingAxes axes) {
  if (t.empty()) throw Error(Errc::kEmptyTensor, "reduce_abs_max of empty tensor");
  const auto& dims = t.shape().dims();
  if (axes.count == 0 || axes.count > dims.size()) {
    throw Error(Errc::kShapeMismatch, "cannot reduce " + std::to_string(axes.count) +
                                          " trailing axes of " + to_string(t.shape()));
  }
  const std::size_t lead_rank = dims.size() - axes.count;
  std::vector<std::size_t> out_dims(dims.begin(), dims.begin() + static_cast<std::ptrdiff_t>(lead_rank));
  if (out_dims.empty()) out_dims.push_back(1);
  std::size_t slice = 1;
  for (std::size_t i = lead_rank; i < dims.size(); ++i) slice *= dims[i];

  F32Tensor out{Shape(out_dims)};
  const auto src = t.data();
  for (std::size_t s = 0; s < out.numel(); ++s) {
    float m = 0.0f;
    for (std::size_t i = 0; i < slice; ++i) m = std::max(m, std::fabs(src[s * slice + i]));
    out[s] = m;
  }
  return out;
}

bool all_finite(std::span<const float> values) noexcept {
  for (float v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace ternforge
