#include "ternforge/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ternforge {

namespace {

void ternarize_span(std::span<const float> w, float eps, std::span<std::int8_t> codes,
                    float& scale) {
  scale = reduce_abs_mean(w);
  if (scale == 0.0f) {
    std::fill(codes.begin(), codes.end(), std::int8_t{0});
    return;
  }
  const float denom = scale + eps;
  for (std::size_t i = 0; i < w.size(); ++i) {
    codes[i] = static_cast<std::int8_t>(round_clip(w[i] / denom, -1.0f, 1.0f));
  }
}

void quantize_slice(std::span<const float> x, std::span<std::int8_t> out, float& scale) {
  float amax = 0.0f;
  for (float v : x) amax = std::max(amax, std::fabs(v));
  if (amax == 0.0f) {
    std::fill(out.begin(), out.end(), std::int8_t{0});
    scale = kZeroSliceScale;
    return;
  }
  scale = 127.0f / amax;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = static_cast<std::int8_t>(round_clip(scale * x[i], -128.0f, 127.0f));
  }
}

void require_finite(const F32Tensor& x, const char* what) {
  if (!all_finite(x.data())) throw Error(Errc::kNanInput, std::string(what) + " has non-finite input");
}

}  // namespace

float round_clip(float x, float lo, float hi) {
  if (std::isnan(x)) throw Error(Errc::kNanInput, "round_clip of NaN");
  return std::max(lo, std::min(hi, std::round(x)));
}

F32Tensor TernaryTensor::dequantize() const {
  F32Tensor out(shape);
  const std::size_t len = row_length();
  for (std::size_t r = 0; r < rows(); ++r) {
    const float s = scale_for_row(r);
    for (std::size_t i = 0; i < len; ++i) out[r * len + i] = s * static_cast<float>(codes[r * len + i]);
  }
  return out;
}

void TernaryTensor::validate() const {
  if (codes.size() != shape.numel()) {
    throw Error(Errc::kShapeMismatch, "code count does not match shape " + to_string(shape));
  }
  const std::size_t want = scale_kind == ScaleKind::kPerTensor ? 1 : rows();
  if (scales.size() != want) {
    throw Error(Errc::kShapeMismatch, "expected " + std::to_string(want) + " scales, got " +
                                          std::to_string(scales.size()));
  }
  for (std::int8_t c : codes) {
    if (c < -1 || c > 1) throw Error(Errc::kInvalidTrit, "code " + std::to_string(c));
  }
}

F32Tensor QuantizedActivations::dequantize() const {
  F32Tensor out(values.shape());
  const std::size_t n = values.numel();
  const std::size_t slice = n / scales.size();
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = static_cast<float>(values[i]) / scales[i / slice];
  }
  return out;
}

TernaryTensor ternarize_weights(const F32Tensor& w, float eps) {
  if (w.empty()) throw Error(Errc::kEmptyTensor, "ternarize_weights of empty tensor");
  TernaryTensor t{w.shape(), std::vector<std::int8_t>(w.numel()), {0.0f}, ScaleKind::kPerTensor};
  ternarize_span(w.data(), eps, t.codes, t.scales[0]);
  return t;
}

TernaryTensor ternarize_row_blocks(const F32Tensor& w, std::size_t block_rows, float eps) {
  if (w.empty()) throw Error(Errc::kEmptyTensor, "ternarize_row_blocks of empty tensor");
  const std::size_t rows = w.shape()[0];
  if (block_rows == 0 || rows % block_rows != 0) {
    throw Error(Errc::kShapeMismatch, "row count " + std::to_string(rows) +
                                          " not divisible by block " + std::to_string(block_rows));
  }
  const std::size_t len = w.numel() / rows;
  TernaryTensor t{w.shape(), std::vector<std::int8_t>(w.numel()), std::vector<float>(rows),
                  ScaleKind::kPerOutChannel};
  const std::size_t block = block_rows * len;
  for (std::size_t b = 0; b < rows / block_rows; ++b) {
    float s = 0.0f;
    ternarize_span(w.data().subspan(b * block, block), eps,
                   std::span<std::int8_t>(t.codes).subspan(b * block, block), s);
    std::fill_n(t.scales.begin() + static_cast<std::ptrdiff_t>(b * block_rows), block_rows, s);
  }
  return t;
}

TernaryTensor ternarize_conv_weights(const F32Tensor& w, float eps) {
  if (w.shape().rank() != 4) {
    throw Error(Errc::kShapeMismatch, "conv weight must be 4-D, got " + to_string(w.shape()));
  }
  return ternarize_row_blocks(w, 1, eps);
}

QuantizedActivations quantize_activations_per_token(const F32Tensor& x) {
  if (x.shape().rank() != 2) {
    throw Error(Errc::kShapeMismatch, "per-token quantization needs [tokens, dim], got " +
                                          to_string(x.shape()));
  }
  require_finite(x, "quantize_activations_per_token");
  const std::size_t tokens = x.shape()[0];
  QuantizedActivations q{I8Tensor(x.shape()), std::vector<float>(tokens), ActScaleKind::kPerToken};
  for (std::size_t t = 0; t < tokens; ++t) quantize_slice(x.row(t), q.values.row(t), q.scales[t]);
  return q;
}

QuantizedActivations quantize_activations_per_channel(const F32Tensor& x) {
  if (x.shape().rank() != 3) {
    throw Error(Errc::kShapeMismatch, "per-channel quantization needs [C, H, W], got " +
                                          to_string(x.shape()));
  }
  require_finite(x, "quantize_activations_per_channel");
  const std::size_t channels = x.shape()[0];
  const std::size_t plane = x.shape()[1] * x.shape()[2];
  QuantizedActivations q{I8Tensor(x.shape()), std::vector<float>(channels),
                         ActScaleKind::kPerSampleChannel};
  for (std::size_t c = 0; c < channels; ++c) {
    quantize_slice(x.data().subspan(c * plane, plane), q.values.data().subspan(c * plane, plane),
                   q.scales[c]);
  }
  return q;
}

TernaryAffine ternarize_affine(const F32Tensor& gamma, const F32Tensor& beta, float weight_eps,
                               float ln_eps) {
  if (gamma.shape() != beta.shape() || gamma.shape().rank() != 1) {
    throw Error(Errc::kShapeMismatch, "affine gamma " + to_string(gamma.shape()) + " vs beta " +
                                          to_string(beta.shape()));
  }
  return {ternarize_weights(gamma, weight_eps), ternarize_weights(beta, weight_eps), ln_eps};
}

F32Tensor normalize_tokens(const F32Tensor& x, float eps) {
  if (x.shape().rank() != 2) throw Error(Errc::kShapeMismatch, "layernorm input must be 2-D");
  const std::size_t tokens = x.shape()[0];
  const std::size_t dim = x.shape()[1];
  const float inv_dim = 1.0f / static_cast<float>(dim);
  F32Tensor out(x.shape());
  for (std::size_t t = 0; t < tokens; ++t) {
    const auto in = x.row(t);
    float mean = 0.0f;
    for (float v : in) mean += v;
    mean *= inv_dim;
    float var = 0.0f;
    for (float v : in) var += (v - mean) * (v - mean);
    var *= inv_dim;
    const float inv_std = 1.0f / std::sqrt(var + eps);
    auto o = out.row(t);
    for (std::size_t i = 0; i < dim; ++i) o[i] = (in[i] - mean) * inv_std;
  }
  return out;
}

F32Tensor rms_normalize_tokens(const F32Tensor& x, float eps) {
  if (x.shape().rank() != 2) throw Error(Errc::kShapeMismatch, "rms norm input must be 2-D");
  const std::size_t dim = x.shape()[1];
  F32Tensor out(x.shape());
  for (std::size_t t = 0; t < x.shape()[0]; ++t) {
    const auto in = x.row(t);
    float ms = 0.0f;
    for (float v : in) ms += v * v;
    ms /= static_cast<float>(dim);
    const float inv = 1.0f / std::sqrt(ms + eps);
    auto o = out.row(t);
    for (std::size_t i = 0; i < dim; ++i) o[i] = in[i] * inv;
  }
  return out;
}

F32Tensor layernorm(const F32Tensor& x, std::span<const float> gamma, std::span<const float> beta,
                    float eps) {
  if (x.shape().rank() != 2 || gamma.size() != x.shape()[1] || beta.size() != x.shape()[1]) {
    throw Error(Errc::kShapeMismatch, "layernorm input " + to_string(x.shape()) + " vs affine of " +
                                          std::to_string(gamma.size()));
  }
  F32Tensor out = normalize_tokens(x, eps);
  const std::size_t dim = gamma.size();
  for (std::size_t t = 0; t < x.shape()[0]; ++t) {
    auto o = out.row(t);
    for (std::size_t i = 0; i < dim; ++i) o[i] = gamma[i] * o[i] + beta[i];
  }
  return out;
}

F32Tensor ternary_layernorm(const F32Tensor& x, const TernaryAffine& affine,
                            const std::optional<F32Tensor>& bias_fp32) {
  const std::size_t dim = affine.gamma.shape.numel();
  if (x.shape().rank() != 2 || x.shape()[1] != dim || affine.beta.shape.numel() != dim) {
    throw Error(Errc::kShapeMismatch, "ternary layernorm input " + to_string(x.shape()) +
                                          " vs affine dim " + std::to_string(dim));
  }
  const F32Tensor gamma = affine.gamma.dequantize();
  const F32Tensor beta = affine.beta.dequantize();
  F32Tensor out = layernorm(x, gamma.data(), beta.data(), affine.eps);
  if (bias_fp32) {
    if (bias_fp32->numel() != dim) throw Error(Errc::kShapeMismatch, "layernorm bias length");
    for (std::size_t t = 0; t < x.shape()[0]; ++t) {
      auto o = out.row(t);
      for (std::size_t i = 0; i < dim; ++i) o[i] += (*bias_fp32)[i];
    }
  }
  return out;
}

std::pair<TernaryTensor, F32Tensor> ste_quantize_forward(const F32Tensor& w, float eps) {
  TernaryTensor t = ternarize_weights(w, eps);
  F32Tensor deq = t.dequantize();
  return {std::move(t), std::move(deq)};
}

F32Tensor ste_backward(const F32Tensor& grad_out) { return grad_out; }

double zero_fraction(std::span<const std::int8_t> codes) noexcept {
  if (codes.empty()) return 0.0;
  std::size_t zeros = 0;
  for (std::int8_t c : codes) zeros += c == 0;
  return static_cast<double>(zeros) / static_cast<double>(codes.size());
}

}  // namespace ternforge
