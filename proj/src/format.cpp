#include "ternforge/format.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <unordered_set>

#include "ternforge/error.hpp"

namespace ternforge {

namespace {

constexpr char kFtvMagic[4] = {'F', 'T', 'V', '1'};
constexpr char kNwaMagic[4] = {'N', 'W', 'A', '1'};

const char* magic_for(Container c) { return c == Container::kFtv ? kFtvMagic : kNwaMagic; }

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
  void raw(const char* p, std::size_t n) { out_.insert(out_.end(), p, p + n); }

  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    if (in_.size() - pos_ < n) {
      throw Error(Errc::kTruncated, std::string("reading ") + what + " at offset " +
                                        std::to_string(pos_) + ": need " + std::to_string(n) +
                                        " bytes, have " + std::to_string(in_.size() - pos_));
    }
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8(const char* what) { return take(1, what)[0]; }
  std::uint16_t u16(const char* what) {
    auto s = take(2, what);
    return static_cast<std::uint16_t>(s[0] | (s[1] << 8));
  }
  std::uint32_t u32(const char* what) {
    auto s = take(4, what);
    return static_cast<std::uint32_t>(s[0]) | (static_cast<std::uint32_t>(s[1]) << 8) |
           (static_cast<std::uint32_t>(s[2]) << 16) | (static_cast<std::uint32_t>(s[3]) << 24);
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }

  std::size_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return in_.size() - pos_; }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

constexpr std::uint8_t kFlagLayerScale = 1u << 0;
constexpr std::uint8_t kFlagRmsNorm = 1u << 1;
constexpr std::uint8_t kFlagFp32LayerScale = 1u << 2;
constexpr std::uint8_t kFlagSplitQkv = 1u << 3;
constexpr std::uint8_t kFlagFp16PosEmbed = 1u << 4;

// u32 depth, dim, heads; f32 mlp_ratio; u32 patch, img_size, in_channels,
// num_classes; u8 flags; f32 eps_ln, eps_w; u8 n; f32 mean[n]; f32 std[n].
void encode_config(Writer& w, const VitConfig& c) {
  w.u32(c.depth);
  w.u32(c.dim);
  w.u32(c.heads);
  w.f32(c.mlp_ratio);
  w.u32(c.patch);
  w.u32(c.img_size);
  w.u32(c.in_channels);
  w.u32(c.num_classes);
  std::uint8_t flags = 0;
  if (c.use_layerscale) flags |= kFlagLayerScale;
  if (c.pre_quant_rmsnorm) flags |= kFlagRmsNorm;
  if (c.fp32_layerscale) flags |= kFlagFp32LayerScale;
  if (c.split_qkv_scales) flags |= kFlagSplitQkv;
  if (c.fp16_pos_embed) flags |= kFlagFp16PosEmbed;
  w.u8(flags);
  w.f32(c.eps_ln);
  w.f32(c.eps_w);
  w.u8(static_cast<std::uint8_t>(c.norm_mean.size()));
  for (float v : c.norm_mean) w.f32(v);
  for (float v : c.norm_std) w.f32(v);
}

VitConfig decode_config(Reader& r) {
  VitConfig c;
  c.depth = r.u32("config.depth");
  c.dim = r.u32("config.dim");
  c.heads = r.u32("config.heads");
  c.mlp_ratio = r.f32("config.mlp_ratio");
  c.patch = r.u32("config.patch");
  c.img_size = r.u32("config.img_size");
  c.in_channels = r.u32("config.in_channels");
  c.num_classes = r.u32("config.num_classes");
  const std::uint8_t flags = r.u8("config.flags");
  c.use_layerscale = flags & kFlagLayerScale;
  c.pre_quant_rmsnorm = flags & kFlagRmsNorm;
  c.fp32_layerscale = flags & kFlagFp32LayerScale;
  c.split_qkv_scales = flags & kFlagSplitQkv;
  c.fp16_pos_embed = flags & kFlagFp16PosEmbed;
  c.eps_ln = r.f32("config.eps_ln");
  c.eps_w = r.f32("config.eps_w");
  const std::size_t n = r.u8("config.norm_count");
  c.norm_mean.resize(n);
  c.norm_std.resize(n);
  for (auto& v : c.norm_mean) v = r.f32("config.norm_mean");
  for (auto& v : c.norm_std) v = r.f32("config.norm_std");
  return c;
}

bool known_kind(std::uint8_t k) { return k <= static_cast<std::uint8_t>(TensorKind::kF16); }

void check_record(const TensorRecord& r) {
  if (r.shape.rank() == 0 || r.shape.rank() > kMaxRank) {
    throw Error(Errc::kSizeMismatch, r.name + ": rank " + std::to_string(r.shape.rank()));
  }
  if (r.scales.size() != scale_count(r.kind, r.shape)) {
    throw Error(Errc::kSizeMismatch, r.name + ": scale count " + std::to_string(r.scales.size()));
  }
  if (r.payload.size() != payload_size(r.kind, r.shape)) {
    throw Error(Errc::kSizeMismatch, r.name + ": payload " + std::to_string(r.payload.size()) +
                                         " bytes, expected " +
                                         std::to_string(payload_size(r.kind, r.shape)));
  }
  if (r.name.size() > 0xFFFF) throw Error(Errc::kSizeMismatch, "tensor name too long");
}

}  // namespace

const TensorRecord* ModelFile::find(std::string_view name) const noexcept {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

const TensorRecord& ModelFile::at(std::string_view name) const {
  if (const auto* r = find(name)) return *r;
  throw Error(Errc::kMissingTensor, std::string(name));
}

bool is_ternary(TensorKind kind) noexcept {
  return kind == TensorKind::kTern2PerTensor || kind == TensorKind::kTern2PerChannel;
}

std::size_t scale_count(TensorKind kind, const Shape& shape) noexcept {
  switch (kind) {
    case TensorKind::kTern2PerTensor:
    case TensorKind::kI8: return 1;
    case TensorKind::kTern2PerChannel: return shape.rank() ? shape[0] : 0;
    default: return 0;
  }
}

std::size_t payload_size(TensorKind kind, const Shape& shape) noexcept {
  const std::size_t n = shape.numel();
  switch (kind) {
    case TensorKind::kF32: return 4 * n;
    case TensorKind::kTern2PerTensor:
    case TensorKind::kTern2PerChannel: return packed_size(n);
    case TensorKind::kI8: return n;
    case TensorKind::kF16: return 2 * n;
  }
  return 0;
}

std::size_t record_overhead(std::string_view name, TensorKind kind, const Shape& shape) noexcept {
  return 2 + name.size() + 1 + 1 + 4 * shape.rank() + 4 * scale_count(kind, shape);
}

std::size_t encoded_config_size(const VitConfig& c) noexcept {
  return 4 * 3 + 4 + 4 * 4 + 1 + 4 + 4 + 1 + 4 * (c.norm_mean.size() + c.norm_std.size());
}

std::size_t file_header_size(const VitConfig& c) noexcept {
  return 4 + 2 + encoded_config_size(c) + 4;
}

TensorRecord make_f32_record(std::string name, const F32Tensor& t) {
  TensorRecord r{std::move(name), TensorKind::kF32, t.shape(), {}, {}};
  r.payload.resize(4 * t.numel());
  for (std::size_t i = 0; i < t.numel(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(t[i]);
    for (int b = 0; b < 4; ++b) r.payload[4 * i + b] = static_cast<std::uint8_t>(bits >> (8 * b));
  }
  return r;
}

TensorRecord make_f16_record(std::string name, const F32Tensor& t) {
  TensorRecord r{std::move(name), TensorKind::kF16, t.shape(), {}, {}};
  r.payload.resize(2 * t.numel());
  for (std::size_t i = 0; i < t.numel(); ++i) {
    const std::uint16_t bits = float_to_half_bits(t[i]);
    r.payload[2 * i] = static_cast<std::uint8_t>(bits);
    r.payload[2 * i + 1] = static_cast<std::uint8_t>(bits >> 8);
  }
  return r;
}

TensorRecord make_ternary_record(std::string name, const TernaryTensor& t) {
  t.validate();
  const TensorKind kind = t.scale_kind == ScaleKind::kPerTensor ? TensorKind::kTern2PerTensor
                                                                : TensorKind::kTern2PerChannel;
  return {std::move(name), kind, t.shape, t.scales, pack_trits(t.codes).bytes};
}

TensorRecord make_i8_record(std::string name, const I8Tensor& t, float scale) {
  TensorRecord r{std::move(name), TensorKind::kI8, t.shape(), {scale}, {}};
  r.payload.resize(t.numel());
  std::memcpy(r.payload.data(), t.raw(), t.numel());
  return r;
}

F32Tensor record_to_f32(const TensorRecord& r) {
  F32Tensor t(r.shape);
  if (r.kind == TensorKind::kF32) {
    for (std::size_t i = 0; i < t.numel(); ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(r.payload[4 * i + b]) << (8 * b);
      t[i] = std::bit_cast<float>(bits);
    }
  } else if (r.kind == TensorKind::kF16) {
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const auto bits = static_cast<std::uint16_t>(r.payload[2 * i] | (r.payload[2 * i + 1] << 8));
      t[i] = half_bits_to_float(bits);
    }
  } else {
    throw Error(Errc::kInvalidArgument, r.name + " is not a float tensor");
  }
  return t;
}

PackedTritBuffer record_packed_trits(const TensorRecord& r) {
  if (!is_ternary(r.kind)) throw Error(Errc::kInvalidArgument, r.name + " is not ternary");
  PackedTritBuffer buf{r.payload, r.shape.numel()};
  validate_packed(buf);
  return buf;
}

TernaryTensor record_to_ternary(const TensorRecord& r) {
  TernaryTensor t;
  t.shape = r.shape;
  t.codes = unpack_trits(record_packed_trits(r));
  t.scales = r.scales;
  t.scale_kind = r.kind == TensorKind::kTern2PerTensor ? ScaleKind::kPerTensor
                                                       : ScaleKind::kPerOutChannel;
  return t;
}

std::vector<std::uint8_t> encode_model(const ModelFile& model, Container container) {
  Writer w;
  w.raw(magic_for(container), 4);
  w.u16(kFormatVersion);
  encode_config(w, model.config);
  w.u32(static_cast<std::uint32_t>(model.tensors.size()));
  std::unordered_set<std::string> seen;
  for (const auto& r : model.tensors) {
    check_record(r);
    if (container == Container::kNwa && r.kind != TensorKind::kF32) {
      throw Error(Errc::kInvalidArgument, "NWA archives hold F32 tensors only: " + r.name);
    }
    if (!seen.insert(r.name).second) throw Error(Errc::kDuplicateTensor, r.name);
    w.u16(static_cast<std::uint16_t>(r.name.size()));
    w.raw(r.name.data(), r.name.size());
    w.u8(static_cast<std::uint8_t>(r.kind));
    w.u8(static_cast<std::uint8_t>(r.shape.rank()));
    for (std::size_t d : r.shape.dims()) w.u32(static_cast<std::uint32_t>(d));
    for (float s : r.scales) w.f32(s);
    w.bytes(r.payload);
  }
  return w.take();
}

ModelFile decode_model(std::span<const std::uint8_t> bytes, Container container) {
  Reader r(bytes);
  auto magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), magic_for(container), 4) != 0) {
    throw Error(Errc::kBadMagic, std::string("expected ") + std::string(magic_for(container), 4));
  }
  const std::uint16_t version = r.u16("format_version");
  if (version != kFormatVersion) {
    throw Error(Errc::kBadVersion, "format version " + std::to_string(version));
  }
  ModelFile model;
  model.config = decode_config(r);
  const std::uint32_t count = r.u32("tensor_count");
  std::unordered_set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorRecord rec;
    const std::size_t record_offset = r.offset();
    const std::uint16_t name_len = r.u16("name length");
    auto name = r.take(name_len, "name");
    rec.name.assign(reinterpret_cast<const char*>(name.data()), name.size());
    if (!seen.insert(rec.name).second) {
      throw Error(Errc::kDuplicateTensor, rec.name + " at offset " + std::to_string(record_offset));
    }
    const std::uint8_t kind = r.u8("kind");
    if (!known_kind(kind)) {
      throw Error(Errc::kSizeMismatch, rec.name + ": unknown kind code " + std::to_string(kind));
    }
    rec.kind = static_cast<TensorKind>(kind);
    if (container == Container::kNwa && rec.kind != TensorKind::kF32) {
      throw Error(Errc::kInvalidArgument, "NWA archives hold F32 tensors only: " + rec.name);
    }
    const std::uint8_t rank = r.u8("rank");
    if (rank == 0 || rank > kMaxRank) {
      throw Error(Errc::kSizeMismatch, rec.name + ": rank " + std::to_string(rank));
    }
    std::vector<std::size_t> dims(rank);
    for (auto& d : dims) d = r.u32("dims");
    rec.shape = Shape(dims);
    rec.scales.resize(scale_count(rec.kind, rec.shape));
    for (auto& s : rec.scales) s = r.f32("scales");
    auto payload = r.take(payload_size(rec.kind, rec.shape), "payload");
    rec.payload.assign(payload.begin(), payload.end());
    if (is_ternary(rec.kind)) {
      try {
        validate_packed(PackedTritBuffer{rec.payload, rec.shape.numel()});
      } catch (const Error& e) {
        throw Error(e.code(), rec.name + " (record at offset " + std::to_string(record_offset) +
                                  "): " + e.detail());
      }
    }
    model.tensors.push_back(std::move(rec));
  }
  if (r.remaining() != 0) {
    throw Error(Errc::kSizeMismatch,
                std::to_string(r.remaining()) + " trailing bytes after last tensor");
  }
  return model;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::kIo, "cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::uint8_t> bytes(size);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) throw Error(Errc::kIo, "short read on " + path.string());
  return bytes;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::kIo, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::kIo, "write failed on " + path.string());
}

std::size_t write_ftv(const ModelFile& model, const std::filesystem::path& path) {
  const auto bytes = encode_model(model, Container::kFtv);
  write_file_bytes(path, bytes);
  return bytes.size();
}

ModelFile read_ftv(const std::filesystem::path& path) {
  try {
    return decode_model(read_file_bytes(path), Container::kFtv);
  } catch (const Error& e) {
    if (e.code() == Errc::kIo) throw;
    throw Error(e.code(), path.string() + ": " + e.detail());
  }
}

std::size_t write_nwa(const ModelFile& archive, const std::filesystem::path& path) {
  const auto bytes = encode_model(archive, Container::kNwa);
  write_file_bytes(path, bytes);
  return bytes.size();
}

ModelFile read_nwa(const std::filesystem::path& path) {
  try {
    return decode_model(read_file_bytes(path), Container::kNwa);
  } catch (const Error& e) {
    if (e.code() == Errc::kIo) throw;
    throw Error(e.code(), path.string() + ": " + e.detail());
  }
}

}  // namespace ternforge
