#include "ternforge/image.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <fstream>

#include "ternforge/format.hpp"

namespace ternforge {

namespace {

// Next whitespace-delimited header token of a PNM file, skipping comments.
std::string pnm_token(const std::vector<std::uint8_t>& bytes, std::size_t& pos) {
  while (pos < bytes.size()) {
    if (bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(bytes[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  std::string tok;
  while (pos < bytes.size() && !std::isspace(bytes[pos]) && bytes[pos] != '#') tok += static_cast<char>(bytes[pos++]);
  if (tok.empty()) throw Error(Errc::kTruncated, "PPM header ends early");
  return tok;
}

std::size_t parse_dim(const std::string& tok, const char* what) {
  try {
    std::size_t used = 0;
    const long v = std::stol(tok, &used);
    if (used != tok.size() || v <= 0) throw std::invalid_argument(tok);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw Error(Errc::kInvalidArgument, std::string("PPM ") + what + " '" + tok + "'");
  }
}

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

}  // namespace

F32Tensor read_ppm(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  std::size_t pos = 0;
  if (pnm_token(bytes, pos) != "P6") throw Error(Errc::kBadMagic, path.string() + " is not a binary P6 PPM");
  const std::size_t w = parse_dim(pnm_token(bytes, pos), "width");
  const std::size_t h = parse_dim(pnm_token(bytes, pos), "height");
  const std::size_t maxval = parse_dim(pnm_token(bytes, pos), "maxval");
  if (maxval > 255) throw Error(Errc::kInvalidArgument, "only 8-bit PPM is supported");
  ++pos;  // single whitespace before the raster
  if (bytes.size() < pos + 3 * w * h) throw Error(Errc::kTruncated, path.string() + ": short raster");
  F32Tensor out(Shape{3, h, w});
  const auto maxf = static_cast<float>(maxval);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        out[(c * h + y) * w + x] = static_cast<float>(bytes[pos + (y * w + x) * 3 + c]) / maxf;
      }
    }
  }
  return out;
}

void write_ppm(const std::filesystem::path& path, const F32Tensor& chw) {
  if (chw.shape().rank() != 3 || chw.shape()[0] != 3) throw Error(Errc::kShapeMismatch, "PPM needs [3, H, W]");
  const std::size_t h = chw.shape()[1];
  const std::size_t w = chw.shape()[2];
  const std::string header = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) bytes.push_back(to_byte(chw[(c * h + y) * w + x]));
    }
  }
  write_file_bytes(path, bytes);
}

F32Tensor read_rawf(const std::filesystem::path& path, std::size_t channels) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() < 8) throw Error(Errc::kTruncated, path.string() + ": RAWF header");
  if (!std::equal(bytes.begin(), bytes.begin() + 4, "RAWF")) {
    throw Error(Errc::kBadMagic, path.string() + " is not a RAWF blob");
  }
  const std::size_t side = bytes[4] | (bytes[5] << 8) | (bytes[6] << 16) | (static_cast<std::size_t>(bytes[7]) << 24);
  const std::size_t n = channels * side * side;
  if (side == 0) throw Error(Errc::kInvalidArgument, path.string() + ": zero side length");
  if (bytes.size() != 8 + 4 * n) {
    throw Error(bytes.size() < 8 + 4 * n ? Errc::kTruncated : Errc::kSizeMismatch,
                path.string() + ": expected " + std::to_string(8 + 4 * n) + " bytes");
  }
  F32Tensor out(Shape{channels, side, side});
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t o = 8 + 4 * i;
    const std::uint32_t bits = bytes[o] | (bytes[o + 1] << 8) | (bytes[o + 2] << 16) |
                               (static_cast<std::uint32_t>(bytes[o + 3]) << 24);
    out[i] = std::bit_cast<float>(bits);
  }
  return out;
}

void write_rawf(const std::filesystem::path& path, const F32Tensor& chw) {
  if (chw.shape().rank() != 3 || chw.shape()[1] != chw.shape()[2]) {
    throw Error(Errc::kShapeMismatch, "RAWF needs square [C, S, S]");
  }
  std::vector<std::uint8_t> bytes{'R', 'A', 'W', 'F'};
  const auto side = static_cast<std::uint32_t>(chw.shape()[1]);
  for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<std::uint8_t>(side >> (8 * b)));
  for (float v : chw.data()) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
  }
  write_file_bytes(path, bytes);
}

F32Tensor normalize_image(const F32Tensor& chw, const VitConfig& config) {
  const std::size_t channels = chw.shape()[0];
  if (channels != config.norm_mean.size()) throw Error(Errc::kShapeMismatch, "image channel count");
  const std::size_t plane = chw.numel() / channels;
  F32Tensor out = chw;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      out[c * plane + i] = (chw[c * plane + i] - config.norm_mean[c]) / config.norm_std[c];
    }
  }
  return out;
}

F32Tensor load_model_input(const std::filesystem::path& path, const VitConfig& config) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::kIo, "cannot open " + path.string());
  char magic[4] = {};
  in.read(magic, 4);
  F32Tensor img;
  if (in.gcount() >= 2 && magic[0] == 'P' && magic[1] == '6') {
    img = read_ppm(path);
  } else if (in.gcount() == 4 && std::equal(magic, magic + 4, "RAWF")) {
    img = read_rawf(path, config.in_channels);
  } else {
    throw Error(Errc::kBadMagic, path.string() + " is neither P6 PPM nor RAWF");
  }
  const Shape want{config.in_channels, config.img_size, config.img_size};
  if (img.shape() != want) {
    throw Error(Errc::kShapeMismatch, path.string() + ": image " + to_string(img.shape()) +
                                          ", model expects " + to_string(want));
  }
  return normalize_image(img, config);
}

void write_pgm(const std::filesystem::path& path, const F32Tensor& map) {
  if (map.shape().rank() != 2) throw Error(Errc::kShapeMismatch, "PGM needs a 2-D map");
  const std::size_t h = map.shape()[0];
  const std::size_t w = map.shape()[1];
  const auto [lo, hi] = std::minmax_element(map.data().begin(), map.data().end());
  const float range = *hi - *lo;
  const std::string header = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  for (float v : map.data()) bytes.push_back(range > 0.0f ? to_byte((v - *lo) / range) : 0);
  write_file_bytes(path, bytes);
}

std::vector<std::string> read_labels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::kIo, "cannot open labels file " + path.string());
  std::vector<std::string> labels;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    labels.push_back(line);
  }
  return labels;
}

}  // namespace ternforge
