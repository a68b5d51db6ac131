#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "ternforge/tensor.hpp"

namespace ternforge {

inline constexpr float kDefaultWeightEps = 1e-6f;
inline constexpr float kDefaultLayerNormEps = 1e-6f;

enum class ScaleKind : std::uint8_t { kPerTensor, kPerOutChannel };

// Ternary weights: codes in {-1, 0, +1} and one scale per tensor or per
// output channel (leading axis). Element i of row r dequantizes to
// scale(r) * code.
struct TernaryTensor {
  Shape shape;
  std::vector<std::int8_t> codes;
  std::vector<float> scales;
  ScaleKind scale_kind = ScaleKind::kPerTensor;

  std::size_t rows() const noexcept { return shape[0]; }
  std::size_t row_length() const noexcept { return shape.numel() / shape[0]; }
  float scale_for_row(std::size_t r) const {
    return scale_kind == ScaleKind::kPerTensor ? scales.front() : scales[r];
  }

  F32Tensor dequantize() const;
  void validate() const;
};

enum class ActScaleKind : std::uint8_t { kPerToken, kPerSampleChannel };

// Signed 8-bit activations plus one scale per token (linear inputs) or per
// channel (patch-embedding input). Dequantization is values / scale.
struct QuantizedActivations {
  I8Tensor values;
  std::vector<float> scales;
  ActScaleKind scale_kind = ActScaleKind::kPerToken;

  F32Tensor dequantize() const;
};

struct TernaryAffine {
  TernaryTensor gamma;
  TernaryTensor beta;
  float eps = kDefaultLayerNormEps;
};

// Sentinel scale stored for an all-zero token or channel.
inline constexpr float kZeroSliceScale = 1.0f;

// Rounds half away from zero, then clamps into [lo, hi].
float round_clip(float x, float lo, float hi);

TernaryTensor ternarize_weights(const F32Tensor& w, float eps = kDefaultWeightEps);
TernaryTensor ternarize_conv_weights(const F32Tensor& w, float eps = kDefaultWeightEps);
// Ternarizes independently per contiguous block of `block_rows` rows and
// stores the result as per-row scales (used for split q/k/v scales).
TernaryTensor ternarize_row_blocks(const F32Tensor& w, std::size_t block_rows,
                                   float eps = kDefaultWeightEps);

QuantizedActivations quantize_activations_per_token(const F32Tensor& x);
QuantizedActivations quantize_activations_per_channel(const F32Tensor& x);

TernaryAffine ternarize_affine(const F32Tensor& gamma, const F32Tensor& beta, float weight_eps,
                               float ln_eps);

// (x - mean) / sqrt(var + eps) per token, population variance, before any affine.
F32Tensor normalize_tokens(const F32Tensor& x, float eps);

// Parameter-free RMS normalization per token: x / sqrt(mean(x^2) + eps).
F32Tensor rms_normalize_tokens(const F32Tensor& x, float eps);

F32Tensor layernorm(const F32Tensor& x, std::span<const float> gamma, std::span<const float> beta,
                    float eps);
F32Tensor ternary_layernorm(const F32Tensor& x, const TernaryAffine& affine,
                            const std::optional<F32Tensor>& bias_fp32 = std::nullopt);

// Straight-through estimator: the forward pass ternarizes and dequantizes,
// the backward pass hands the upstream gradient through unchanged.
std::pair<TernaryTensor, F32Tensor> ste_quantize_forward(const F32Tensor& w,
                                                         float eps = kDefaultWeightEps);
F32Tensor ste_backward(const F32Tensor& grad_out);

double zero_fraction(std::span<const std::int8_t> codes) noexcept;

}  // namespace ternforge
