#pragma once

#include <array>
#include <cstddef>
#include <string>

#include "ternforge/config.hpp"
#include "ternforge/format.hpp"
#include "ternforge/model.hpp"

namespace ternforge {

inline constexpr double kBytesPerMB = 1e6;

// Storage kind each canonical tensor gets under a precision plan.
TensorKind planned_kind(const CanonicalTensor& tensor, const VitConfig& config, PrecisionPlan plan);

struct ComponentBytes {
  std::size_t fp32 = 0;     // F32 payload bytes
  std::size_t ternary = 0;  // packed 2-bit payload bytes
  std::size_t other = 0;    // F16 / I8 payload bytes
  std::size_t params = 0;

  std::size_t payload() const noexcept { return fp32 + ternary + other; }
};

inline constexpr std::size_t kRoleCount = 7;

struct SizeReport {
  PrecisionPlan plan = PrecisionPlan::kFp32;
  std::array<ComponentBytes, kRoleCount> by_role{};  // indexed by TensorRole
  std::size_t metadata_bytes = 0;  // header, names, shapes, scales
  std::size_t file_bytes = 0;      // exact FTV file size
  std::size_t fp32_file_bytes = 0; // same config under the FP32 plan

  std::size_t payload_bytes() const noexcept;
  std::size_t fp32_payload_bytes() const noexcept;
  std::size_t params() const noexcept;
  // Share of payload bytes still stored as FP32.
  double fp32_share() const noexcept;
  double compression_ratio() const noexcept;
  double megabytes() const noexcept { return static_cast<double>(file_bytes) / kBytesPerMB; }
};

SizeReport model_size_report(const VitConfig& config, PrecisionPlan plan);

// Aligned text table, one row per component.
std::string format_size_report(const SizeReport& report);

}  // namespace ternforge
