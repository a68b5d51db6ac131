#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ternforge/config.hpp"
#include "ternforge/packing.hpp"
#include "ternforge/quantizer.hpp"
#include "ternforge/tensor.hpp"

namespace ternforge {

// On-disk layout shared by FTV (packed model) and NWA (FP32 weight archive):
//
//   magic[4] ("FTV1" | "NWA1"), u16 format_version,
//   config record (see encode_config), u32 tensor_count,
//   tensor_count x { u16 name_len, name bytes (UTF-8), u8 kind, u8 rank,
//                    u32 dims[rank], scale payload, data payload }
//
// All integers and floats are little-endian. Scale payload: none for F32/F16,
// one f32 for TERN2 per-tensor and I8, dims[0] f32 for TERN2 per-channel.
// Data payload: 4n bytes (F32), ceil(n/4) (TERN2), n (I8), 2n (F16).
enum class TensorKind : std::uint8_t {
  kF32 = 0,
  kTern2PerTensor = 1,
  kTern2PerChannel = 2,
  kI8 = 3,
  kF16 = 4,
};

inline constexpr std::uint16_t kFormatVersion = 1;
inline constexpr std::size_t kMaxRank = 4;

enum class Container { kFtv, kNwa };

struct TensorRecord {
  std::string name;
  TensorKind kind = TensorKind::kF32;
  Shape shape;
  std::vector<float> scales;
  std::vector<std::uint8_t> payload;

  bool operator==(const TensorRecord&) const = default;
};

struct ModelFile {
  VitConfig config;
  std::vector<TensorRecord> tensors;

  const TensorRecord* find(std::string_view name) const noexcept;
  const TensorRecord& at(std::string_view name) const;  // MISSING_TENSOR

  bool operator==(const ModelFile&) const = default;
};

bool is_ternary(TensorKind kind) noexcept;
std::size_t scale_count(TensorKind kind, const Shape& shape) noexcept;
std::size_t payload_size(TensorKind kind, const Shape& shape) noexcept;
// Bytes of one record excluding its data payload (name, kind, shape, scales).
std::size_t record_overhead(std::string_view name, TensorKind kind, const Shape& shape) noexcept;
std::size_t encoded_config_size(const VitConfig& config) noexcept;
// magic + version + config + tensor count.
std::size_t file_header_size(const VitConfig& config) noexcept;

TensorRecord make_f32_record(std::string name, const F32Tensor& t);
TensorRecord make_f16_record(std::string name, const F32Tensor& t);
TensorRecord make_ternary_record(std::string name, const TernaryTensor& t);
TensorRecord make_i8_record(std::string name, const I8Tensor& t, float scale);

// F32 or F16 records.
F32Tensor record_to_f32(const TensorRecord& r);
TernaryTensor record_to_ternary(const TensorRecord& r);
PackedTritBuffer record_packed_trits(const TensorRecord& r);

std::vector<std::uint8_t> encode_model(const ModelFile& model, Container container);
ModelFile decode_model(std::span<const std::uint8_t> bytes, Container container);

std::size_t write_ftv(const ModelFile& model, const std::filesystem::path& path);
ModelFile read_ftv(const std::filesystem::path& path);
std::size_t write_nwa(const ModelFile& archive, const std::filesystem::path& path);
ModelFile read_nwa(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace ternforge
