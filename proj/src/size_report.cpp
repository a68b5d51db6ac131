#include "ternforge/size_report.hpp"

#include <cstdio>

namespace ternforge {

TensorKind planned_kind(const CanonicalTensor& t, const VitConfig& c, PrecisionPlan plan) {
  const bool full = plan == PrecisionPlan::kFullyTernary;
  const bool encoder = plan != PrecisionPlan::kFp32;
  if (t.is_bias) return TensorKind::kF32;
  switch (t.role) {
    case TensorRole::kEmbedding:
      if (t.name == "pos_embed" && full && c.fp16_pos_embed) return TensorKind::kF16;
      return TensorKind::kF32;
    case TensorRole::kPatchEmbed:
      return full ? TensorKind::kTern2PerChannel : TensorKind::kF32;
    case TensorRole::kLayerNorm:
      return full ? TensorKind::kTern2PerTensor : TensorKind::kF32;
    case TensorRole::kAttention:
      if (!encoder) return TensorKind::kF32;
      if (c.split_qkv_scales && t.name.ends_with("attn.qkv.weight")) return TensorKind::kTern2PerChannel;
      return TensorKind::kTern2PerTensor;
    case TensorRole::kFfn:
      return encoder ? TensorKind::kTern2PerTensor : TensorKind::kF32;
    case TensorRole::kLayerScale:
      return full && !c.fp32_layerscale ? TensorKind::kTern2PerTensor : TensorKind::kF32;
    case TensorRole::kHead:
      return full ? TensorKind::kTern2PerTensor : TensorKind::kF32;
  }
  return TensorKind::kF32;
}

std::size_t SizeReport::payload_bytes() const noexcept {
  std::size_t n = 0;
  for (const auto& r : by_role) n += r.payload();
  return n;
}

std::size_t SizeReport::fp32_payload_bytes() const noexcept {
  std::size_t n = 0;
  for (const auto& r : by_role) n += r.fp32;
  return n;
}

std::size_t SizeReport::params() const noexcept {
  std::size_t n = 0;
  for (const auto& r : by_role) n += r.params;
  return n;
}

double SizeReport::fp32_share() const noexcept {
  return static_cast<double>(fp32_payload_bytes()) / static_cast<double>(payload_bytes());
}

double SizeReport::compression_ratio() const noexcept {
  return static_cast<double>(fp32_file_bytes) / static_cast<double>(file_bytes);
}

namespace {

void accumulate(const VitConfig& config, PrecisionPlan plan, SizeReport& report) {
  std::size_t file = file_header_size(config);
  std::size_t meta = file;
  for (const auto& t : canonical_tensors(config)) {
    const TensorKind kind = planned_kind(t, config, plan);
    const std::size_t payload = payload_size(kind, t.shape);
    const std::size_t overhead = record_overhead(t.name, kind, t.shape);
    auto& slot = report.by_role[static_cast<std::size_t>(t.role)];
    if (kind == TensorKind::kF32) {
      slot.fp32 += payload;
    } else if (is_ternary(kind)) {
      slot.ternary += payload;
    } else {
      slot.other += payload;
    }
    slot.params += t.shape.numel();
    meta += overhead;
    file += overhead + payload;
  }
  report.metadata_bytes = meta;
  report.file_bytes = file;
}

}  // namespace

SizeReport model_size_report(const VitConfig& config, PrecisionPlan plan) {
  config.validate();
  SizeReport report;
  report.plan = plan;
  accumulate(config, plan, report);
  SizeReport fp32;
  accumulate(config, PrecisionPlan::kFp32, fp32);
  report.fp32_file_bytes = fp32.file_bytes;
  return report;
}

std::string format_size_report(const SizeReport& r) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "%-12s %12s %12s %12s %12s %12s\n", "component", "params", "fp32 B",
                "ternary B", "other B", "total B");
  out += line;
  for (std::size_t i = 0; i < kRoleCount; ++i) {
    const auto& c = r.by_role[i];
    if (c.params == 0) continue;
    std::snprintf(line, sizeof line, "%-12s %12zu %12zu %12zu %12zu %12zu\n",
                  std::string(role_name(static_cast<TensorRole>(i))).c_str(), c.params, c.fp32,
                  c.ternary, c.other, c.payload());
    out += line;
  }
  std::snprintf(line, sizeof line, "%-12s %12s %12s %12s %12s %12zu\n", "metadata", "", "", "", "",
                r.metadata_bytes);
  out += line;
  std::snprintf(line, sizeof line,
                "plan=%s  file=%zu B (%.3f MB)  fp32 share=%.1f%%  compression=%.2fx vs %.2f MB FP32\n",
                std::string(plan_name(r.plan)).c_str(), r.file_bytes, r.megabytes(),
                100.0 * r.fp32_share(), r.compression_ratio(),
                static_cast<double>(r.fp32_file_bytes) / kBytesPerMB);
  out += line;
  return out;
}

}  // namespace ternforge
