#include "ternforge/kernels.hpp"

#include <cmath>
#include <string>

namespace ternforge {

namespace {

void check_linear_input(const QuantizedActivations& x, std::size_t in_features) {
  if (x.values.shape().rank() != 2 || x.values.shape()[1] != in_features ||
      x.scales.size() != x.values.shape()[0]) {
    throw Error(Errc::kShapeMismatch, "activations " + to_string(x.values.shape()) +
                                          " vs weight input dim " + std::to_string(in_features));
  }
  if (in_features > kMaxReductionLength) {
    throw Error(Errc::kAccumOverflowRisk, "reduction length " + std::to_string(in_features));
  }
}

// acc[t, o] for one weight row already expanded into `codes`.
inline void accumulate_row(const QuantizedActivations& x, std::span<const std::int8_t> codes,
                           std::size_t o, std::size_t out_features, I32Accumulator& acc) {
  const std::size_t tokens = x.values.shape()[0];
  const std::size_t in = codes.size();
  const std::int8_t* c = codes.data();
  for (std::size_t t = 0; t < tokens; ++t) {
    const std::int8_t* v = x.values.raw() + t * in;
    std::int32_t sum = 0;
    for (std::size_t j = 0; j < in; ++j) sum += static_cast<std::int32_t>(c[j]) * v[j];
    acc[t * out_features + o] = sum;
  }
}

void decode_row(const PackedLinearLayer& w, std::size_t o, std::vector<std::int8_t>& row) {
  const std::size_t in = w.in_features();
  const std::size_t base = o * in;
  const auto bytes = std::span<const std::uint8_t>(w.codes.bytes);
  if (base % 4 == 0) {
    const auto& lut = trit_lut();
    const std::size_t full = in / 4;
    const std::uint8_t* src = bytes.data() + base / 4;
    for (std::size_t b = 0; b < full; ++b) {
      const auto& quad = lut[src[b]];
      row[4 * b] = quad[0];
      row[4 * b + 1] = quad[1];
      row[4 * b + 2] = quad[2];
      row[4 * b + 3] = quad[3];
    }
    for (std::size_t j = 4 * full; j < in; ++j) row[j] = trit_at(bytes, base + j);
  } else {
    for (std::size_t j = 0; j < in; ++j) row[j] = trit_at(bytes, base + j);
  }
}

void accumulate_packed_into(const QuantizedActivations& x, const PackedLinearLayer& w,
                            I32Accumulator& acc) {
  std::vector<std::int8_t> row(w.in_features());
  for (std::size_t o = 0; o < w.out_features(); ++o) {
    decode_row(w, o, row);
    accumulate_row(x, row, o, w.out_features(), acc);
  }
}

void check_packed_layer(const PackedLinearLayer& w) {
  if (w.shape.rank() != 2) throw Error(Errc::kShapeMismatch, "linear weight must be 2-D");
  validate_packed(w.codes);
  if (w.codes.logical_len != w.shape.numel()) {
    throw Error(Errc::kShapeMismatch, "packed code count does not match " + to_string(w.shape));
  }
}

}  // namespace

PackedLinearLayer pack_linear(const LinearLayerTern& layer) {
  layer.weights.validate();
  return {layer.weights.shape, pack_trits(layer.weights.codes), layer.weights.scales,
          layer.weights.scale_kind, layer.bias};
}

I32Accumulator tern_accumulate(const QuantizedActivations& x, const TernaryTensor& w) {
  if (w.shape.rank() != 2) throw Error(Errc::kShapeMismatch, "linear weight must be 2-D");
  const std::size_t out = w.shape[0];
  const std::size_t in = w.shape[1];
  check_linear_input(x, in);
  I32Accumulator acc(Shape{x.values.shape()[0], out}, in);
  for (std::size_t o = 0; o < out; ++o) {
    accumulate_row(x, std::span<const std::int8_t>(w.codes).subspan(o * in, in), o, out, acc);
  }
  return acc;
}

I32Accumulator tern_accumulate_packed(const QuantizedActivations& x, const PackedLinearLayer& w) {
  check_packed_layer(w);
  check_linear_input(x, w.in_features());
  I32Accumulator acc(Shape{x.values.shape()[0], w.out_features()}, w.in_features());
  accumulate_packed_into(x, w, acc);
  return acc;
}

F32Tensor dequantize_accumulator(const I32Accumulator& acc, std::span<const float> act_scales,
                                 const std::vector<float>& weight_scales, ScaleKind weight_kind,
                                 const std::optional<F32Tensor>& bias) {
  const std::size_t tokens = acc.shape()[0];
  const std::size_t out = acc.shape()[1];
  if (act_scales.size() != tokens) throw Error(Errc::kShapeMismatch, "activation scale count");
  if (bias && bias->numel() != out) {
    throw Error(Errc::kShapeMismatch, "bias length " + std::to_string(bias->numel()) +
                                          " vs out features " + std::to_string(out));
  }
  F32Tensor y(acc.shape());
  for (std::size_t t = 0; t < tokens; ++t) {
    for (std::size_t o = 0; o < out; ++o) {
      const float sw = weight_kind == ScaleKind::kPerTensor ? weight_scales.front() : weight_scales[o];
      float v = (sw / act_scales[t]) * static_cast<float>(acc[t * out + o]);
      if (bias) v += (*bias)[o];
      y[t * out + o] = v;
    }
  }
  return y;
}

F32Tensor tern_matmul(const QuantizedActivations& x, const LinearLayerTern& layer) {
  const auto acc = tern_accumulate(x, layer.weights);
  return dequantize_accumulator(acc, x.scales, layer.weights.scales, layer.weights.scale_kind,
                                layer.bias);
}

F32Tensor tern_matmul_packed(const QuantizedActivations& x, const PackedLinearLayer& layer) {
  const auto acc = tern_accumulate_packed(x, layer);
  return dequantize_accumulator(acc, x.scales, layer.scales, layer.scale_kind, layer.bias);
}

QkvAccumulators fused_qkv_accumulate(const QuantizedActivations& x, const PackedLinearLayer& wq,
                                     const PackedLinearLayer& wk, const PackedLinearLayer& wv) {
  for (const auto* w : {&wq, &wk, &wv}) {
    check_packed_layer(*w);
    check_linear_input(x, w->in_features());
  }
  const std::size_t tokens = x.values.shape()[0];
  QkvAccumulators out{I32Accumulator(Shape{tokens, wq.out_features()}, wq.in_features()),
                      I32Accumulator(Shape{tokens, wk.out_features()}, wk.in_features()),
                      I32Accumulator(Shape{tokens, wv.out_features()}, wv.in_features())};
  accumulate_packed_into(x, wq, out.q);
  accumulate_packed_into(x, wk, out.k);
  accumulate_packed_into(x, wv, out.v);
  return out;
}

QkvOutputs fused_qkv(const QuantizedActivations& x, const PackedLinearLayer& wq,
                     const PackedLinearLayer& wk, const PackedLinearLayer& wv) {
  const auto acc = fused_qkv_accumulate(x, wq, wk, wv);
  return {dequantize_accumulator(acc.q, x.scales, wq.scales, wq.scale_kind, wq.bias),
          dequantize_accumulator(acc.k, x.scales, wk.scales, wk.scale_kind, wk.bias),
          dequantize_accumulator(acc.v, x.scales, wv.scales, wv.scale_kind, wv.bias)};
}

namespace {

struct PatchGeometry {
  std::size_t c_in, c_out, p, grid_h, grid_w;
};

PatchGeometry patch_geometry(const Shape& img, const Shape& w) {
  if (img.rank() != 3 || w.rank() != 4 || w[2] != w[3]) {
    throw Error(Errc::kShapeMismatch, "patch embed image " + to_string(img) + " weight " + to_string(w));
  }
  if (img[0] != w[1]) {
    throw Error(Errc::kShapeMismatch, "image channels " + std::to_string(img[0]) +
                                          " vs weight input channels " + std::to_string(w[1]));
  }
  const std::size_t p = w[3];
  if (img[1] % p != 0 || img[2] % p != 0) {
    throw Error(Errc::kDimNotDivisible, "image " + to_string(img) + " not divisible by patch " +
                                            std::to_string(p));
  }
  return {w[1], w[0], p, img[1] / p, img[2] / p};
}

// Copies patch (py, px) of a [C, H, W] buffer into [C, p, p] order.
template <typename T>
void gather_patch(const T* src, std::size_t H, std::size_t W, const PatchGeometry& g, std::size_t py,
                  std::size_t px, T* dst) {
  for (std::size_t c = 0; c < g.c_in; ++c) {
    for (std::size_t kh = 0; kh < g.p; ++kh) {
      const T* line = src + c * H * W + (py * g.p + kh) * W + px * g.p;
      for (std::size_t kw = 0; kw < g.p; ++kw) *dst++ = line[kw];
    }
  }
}

}  // namespace

I32Accumulator tern_conv_partial_sums(const QuantizedActivations& img, const ConvPatchEmbedTern& layer) {
  const auto g = patch_geometry(img.values.shape(), layer.weights.shape);
  const std::size_t H = img.values.shape()[1];
  const std::size_t W = img.values.shape()[2];
  const std::size_t kk = g.p * g.p;
  const std::size_t tokens = g.grid_h * g.grid_w;
  I32Accumulator acc(Shape{tokens, g.c_out, g.c_in}, kk);
  std::vector<std::int8_t> patch(g.c_in * kk);
  for (std::size_t py = 0; py < g.grid_h; ++py) {
    for (std::size_t px = 0; px < g.grid_w; ++px) {
      const std::size_t t = py * g.grid_w + px;
      gather_patch(img.values.raw(), H, W, g, py, px, patch.data());
      for (std::size_t o = 0; o < g.c_out; ++o) {
        const std::int8_t* code = layer.weights.codes.data() + o * g.c_in * kk;
        for (std::size_t c = 0; c < g.c_in; ++c) {
          std::int32_t sum = 0;
          for (std::size_t k = 0; k < kk; ++k) {
            sum += static_cast<std::int32_t>(code[c * kk + k]) * patch[c * kk + k];
          }
          acc[(t * g.c_out + o) * g.c_in + c] = sum;
        }
      }
    }
  }
  return acc;
}

F32Tensor tern_conv_patch_embed(const F32Tensor& img, const ConvPatchEmbedTern& layer) {
  const auto g = patch_geometry(img.shape(), layer.weights.shape);
  if (layer.bias && layer.bias->numel() != g.c_out) throw Error(Errc::kShapeMismatch, "conv bias length");
  const QuantizedActivations q = quantize_activations_per_channel(img);
  const I32Accumulator partial = tern_conv_partial_sums(q, layer);
  const std::size_t tokens = g.grid_h * g.grid_w;
  F32Tensor y(Shape{tokens, g.c_out});
  for (std::size_t t = 0; t < tokens; ++t) {
    for (std::size_t o = 0; o < g.c_out; ++o) {
      float sum = 0.0f;
      for (std::size_t c = 0; c < g.c_in; ++c) {
        sum += static_cast<float>(partial[(t * g.c_out + o) * g.c_in + c]) / q.scales[c];
      }
      float v = layer.weights.scale_for_row(o) * sum;
      if (layer.bias) v += (*layer.bias)[o];
      y[t * g.c_out + o] = v;
    }
  }
  return y;
}

F32Tensor linear_f32(const F32Tensor& x, const F32Tensor& w, const std::optional<F32Tensor>& bias) {
  if (x.shape().rank() != 2 || w.shape().rank() != 2 || x.shape()[1] != w.shape()[1]) {
    throw Error(Errc::kShapeMismatch, "linear input " + to_string(x.shape()) + " weight " +
                                          to_string(w.shape()));
  }
  const std::size_t tokens = x.shape()[0];
  const std::size_t out = w.shape()[0];
  const std::size_t in = w.shape()[1];
  if (bias && bias->numel() != out) throw Error(Errc::kShapeMismatch, "linear bias length");
  F32Tensor y(Shape{tokens, out});
  for (std::size_t o = 0; o < out; ++o) {
    const float* wr = w.raw() + o * in;
    const float b = bias ? (*bias)[o] : 0.0f;
    for (std::size_t t = 0; t < tokens; ++t) {
      const float* xr = x.raw() + t * in;
      float sum = 0.0f;
      for (std::size_t j = 0; j < in; ++j) sum += xr[j] * wr[j];
      y[t * out + o] = sum + b;
    }
  }
  return y;
}

F32Tensor conv_patch_embed_f32(const F32Tensor& img, const F32Tensor& w,
                               const std::optional<F32Tensor>& bias) {
  const auto g = patch_geometry(img.shape(), w.shape());
  if (bias && bias->numel() != g.c_out) throw Error(Errc::kShapeMismatch, "conv bias length");
  const std::size_t H = img.shape()[1];
  const std::size_t W = img.shape()[2];
  const std::size_t len = g.c_in * g.p * g.p;
  const std::size_t tokens = g.grid_h * g.grid_w;
  F32Tensor y(Shape{tokens, g.c_out});
  std::vector<float> patch(len);
  for (std::size_t py = 0; py < g.grid_h; ++py) {
    for (std::size_t px = 0; px < g.grid_w; ++px) {
      const std::size_t t = py * g.grid_w + px;
      gather_patch(img.raw(), H, W, g, py, px, patch.data());
      for (std::size_t o = 0; o < g.c_out; ++o) {
        const float* wr = w.raw() + o * len;
        float sum = 0.0f;
        for (std::size_t k = 0; k < len; ++k) sum += wr[k] * patch[k];
        y[t * g.c_out + o] = sum + (bias ? (*bias)[o] : 0.0f);
      }
    }
  }
  return y;
}

void softmax_inplace(std::span<float> row) {
  float m = -INFINITY;
  for (float v : row) {
    if (std::isnan(v)) throw Error(Errc::kNanInput, "softmax input contains NaN");
    m = std::max(m, v);
  }
  if (!std::isfinite(m)) throw Error(Errc::kNanInput, "softmax input is not finite");
  double sum = 0.0;
  for (float& v : row) {
    const double e = std::exp(static_cast<double>(v - m));
    v = static_cast<float>(e);
    sum += e;
  }
  for (float& v : row) v = static_cast<float>(static_cast<double>(v) / sum);
}

F32Tensor softmax_rows(const F32Tensor& x) {
  if (!all_finite(x.data())) throw Error(Errc::kNanInput, "softmax input is not finite");
  F32Tensor out = x;
  const std::size_t rows = x.numel() / x.shape()[x.shape().rank() - 1];
  for (std::size_t r = 0; r < rows; ++r) softmax_inplace(out.row(r));
  return out;
}

float gelu(float x) noexcept {
  return 0.5f * x * (1.0f + std::erf(x * 0.70710678118654752f));
}

F32Tensor gelu(const F32Tensor& x) {
  F32Tensor out = x;
  for (auto& v : out.data()) v = gelu(v);
  return out;
}

F32Tensor attention(const F32Tensor& q, const F32Tensor& k, const F32Tensor& v, F32Tensor* probs) {
  if (q.shape().rank() != 3 || q.shape() != k.shape() || q.shape() != v.shape()) {
    throw Error(Errc::kShapeMismatch, "attention q " + to_string(q.shape()) + " k " +
                                          to_string(k.shape()) + " v " + to_string(v.shape()));
  }
  const std::size_t heads = q.shape()[0];
  const std::size_t tokens = q.shape()[1];
  const std::size_t hd = q.shape()[2];
  const float scale = 1.0f / std::sqrt(static_cast<float>(hd));
  F32Tensor out(Shape{tokens, heads * hd});
  if (probs) *probs = F32Tensor(Shape{heads, tokens, tokens});
  std::vector<float> row(tokens);
  for (std::size_t h = 0; h < heads; ++h) {
    const float* qh = q.raw() + h * tokens * hd;
    const float* kh = k.raw() + h * tokens * hd;
    const float* vh = v.raw() + h * tokens * hd;
    for (std::size_t i = 0; i < tokens; ++i) {
      for (std::size_t j = 0; j < tokens; ++j) {
        float dot = 0.0f;
        for (std::size_t d = 0; d < hd; ++d) dot += qh[i * hd + d] * kh[j * hd + d];
        row[j] = dot * scale;
      }
      softmax_inplace(row);
      if (probs) std::copy(row.begin(), row.end(), probs->raw() + (h * tokens + i) * tokens);
      float* o = out.raw() + i * heads * hd + h * hd;
      for (std::size_t d = 0; d < hd; ++d) o[d] = 0.0f;
      for (std::size_t j = 0; j < tokens; ++j) {
        const float p = row[j];
        for (std::size_t d = 0; d < hd; ++d) o[d] += p * vh[j * hd + d];
      }
    }
  }
  return out;
}

}  // namespace ternforge
