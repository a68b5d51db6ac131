#pragma once

#include <optional>
#include <span>

#include "ternforge/packing.hpp"
#include "ternforge/quantizer.hpp"
#include "ternforge/tensor.hpp"

namespace ternforge {

struct LinearLayerTern {
  TernaryTensor weights;  // [out, in]
  std::optional<F32Tensor> bias;
};

// Linear layer whose codes stay 2-bit packed; kernels decode on the fly.
struct PackedLinearLayer {
  Shape shape;  // [out, in]
  PackedTritBuffer codes;
  std::vector<float> scales;
  ScaleKind scale_kind = ScaleKind::kPerTensor;
  std::optional<F32Tensor> bias;

  std::size_t out_features() const noexcept { return shape[0]; }
  std::size_t in_features() const noexcept { return shape[1]; }
  float scale_for_row(std::size_t r) const {
    return scale_kind == ScaleKind::kPerTensor ? scales.front() : scales[r];
  }
};

PackedLinearLayer pack_linear(const LinearLayerTern& layer);

struct ConvPatchEmbedTern {
  TernaryTensor weights;  // [C_out, C_in, p, p], per-output-channel scales
  std::optional<F32Tensor> bias;

  std::size_t stride() const { return weights.shape[3]; }
};

// Integer MAC: acc[t, o] = sum_j code[o, j] * value[t, j].
I32Accumulator tern_accumulate(const QuantizedActivations& x, const TernaryTensor& w);
I32Accumulator tern_accumulate_packed(const QuantizedActivations& x, const PackedLinearLayer& w);

// y[t, o] = (s_w(o) / s_x(t)) * acc[t, o] + bias[o].
F32Tensor dequantize_accumulator(const I32Accumulator& acc, std::span<const float> act_scales,
                                 const std::vector<float>& weight_scales, ScaleKind weight_kind,
                                 const std::optional<F32Tensor>& bias);

F32Tensor tern_matmul(const QuantizedActivations& x, const LinearLayerTern& layer);
F32Tensor tern_matmul_packed(const QuantizedActivations& x, const PackedLinearLayer& layer);

struct QkvAccumulators {
  I32Accumulator q, k, v;
};
struct QkvOutputs {
  F32Tensor q, k, v;
};

// One pass over the quantized input for all three projections.
QkvAccumulators fused_qkv_accumulate(const QuantizedActivations& x, const PackedLinearLayer& wq,
                                     const PackedLinearLayer& wk, const PackedLinearLayer& wv);
QkvOutputs fused_qkv(const QuantizedActivations& x, const PackedLinearLayer& wq,
                     const PackedLinearLayer& wk, const PackedLinearLayer& wv);

// Per-input-channel integer partial sums, shape [tokens, C_out, C_in].
I32Accumulator tern_conv_partial_sums(const QuantizedActivations& img, const ConvPatchEmbedTern& layer);
// img [C_in, H, W] -> [tokens, C_out]; tokens row-major over the patch grid.
F32Tensor tern_conv_patch_embed(const F32Tensor& img, const ConvPatchEmbedTern& layer);

// FP32 reference-path counterparts.
F32Tensor linear_f32(const F32Tensor& x, const F32Tensor& w, const std::optional<F32Tensor>& bias);
F32Tensor conv_patch_embed_f32(const F32Tensor& img, const F32Tensor& w,
                               const std::optional<F32Tensor>& bias);

void softmax_inplace(std::span<float> row);
F32Tensor softmax_rows(const F32Tensor& x);
float gelu(float x) noexcept;
F32Tensor gelu(const F32Tensor& x);

// Q, K, V are [heads, tokens, head_dim]; returns [tokens, heads * head_dim].
// When probs is non-null it receives the [heads, tokens, tokens] attention.
F32Tensor attention(const F32Tensor& q, const F32Tensor& k, const F32Tensor& v,
                    F32Tensor* probs = nullptr);

}  // namespace ternforge
