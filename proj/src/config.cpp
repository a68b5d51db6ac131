#include "ternforge/config.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "ternforge/error.hpp"

namespace ternforge {

std::size_t VitConfig::hidden_dim() const noexcept {
  return static_cast<std::size_t>(std::lround(static_cast<double>(dim) * mlp_ratio));
}

void VitConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(Errc::kInvalidArgument, "config: " + msg); };
  if (depth == 0 || dim == 0 || heads == 0 || patch == 0 || img_size == 0 || in_channels == 0 ||
      num_classes == 0) {
    fail("all dimensions must be positive");
  }
  if (dim % heads != 0) fail("dim " + std::to_string(dim) + " not divisible by heads");
  if (img_size % patch != 0) fail("img_size not divisible by patch");
  if (!(mlp_ratio > 0.0f) || hidden_dim() == 0) fail("mlp_ratio must be positive");
  if (norm_mean.size() != in_channels || norm_std.size() != in_channels) {
    fail("norm_mean/norm_std need one entry per input channel");
  }
  for (float s : norm_std) {
    if (!(s > 0.0f)) fail("norm_std entries must be positive");
  }
  if (!(eps_ln >= 0.0f) || !(eps_w >= 0.0f)) fail("eps must be non-negative");
}

VitConfig preset_config(std::string_view name) {
  VitConfig c;
  if (name == "deit_tiny_224") {
    c.dim = 192;
    c.heads = 3;
  } else if (name == "deit_small_224") {
    c.dim = 384;
    c.heads = 6;
  } else if (name == "deit3_small_224") {
    c.dim = 384;
    c.heads = 6;
    c.use_layerscale = true;
  } else if (name == "deit3_small_384") {
    c.dim = 384;
    c.heads = 6;
    c.img_size = 384;
    c.use_layerscale = true;
  } else {
    throw Error(Errc::kInvalidArgument, "unknown config preset '" + std::string(name) + "'");
  }
  return c;
}

std::vector<std::string> preset_names() {
  return {"deit_tiny_224", "deit_small_224", "deit3_small_224", "deit3_small_384"};
}

VitConfig config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(Errc::kInvalidArgument, std::string("config json: ") + e.what());
  }
  VitConfig c;
  if (j.contains("base")) c = preset_config(j.at("base").get<std::string>());
  try {
    c.depth = j.value("depth", c.depth);
    c.dim = j.value("dim", c.dim);
    c.heads = j.value("heads", c.heads);
    c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
    c.patch = j.value("patch", c.patch);
    c.img_size = j.value("img_size", c.img_size);
    c.in_channels = j.value("in_channels", c.in_channels);
    c.num_classes = j.value("num_classes", c.num_classes);
    c.use_layerscale = j.value("use_layerscale", c.use_layerscale);
    c.pre_quant_rmsnorm = j.value("pre_quant_rmsnorm", c.pre_quant_rmsnorm);
    c.fp32_layerscale = j.value("fp32_layerscale", c.fp32_layerscale);
    c.split_qkv_scales = j.value("split_qkv_scales", c.split_qkv_scales);
    c.fp16_pos_embed = j.value("fp16_pos_embed", c.fp16_pos_embed);
    c.eps_ln = j.value("eps_ln", c.eps_ln);
    c.eps_w = j.value("eps_w", c.eps_w);
    c.norm_mean = j.value("norm_mean", c.norm_mean);
    c.norm_std = j.value("norm_std", c.norm_std);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::kInvalidArgument, std::string("config json: ") + e.what());
  }
  c.validate();
  return c;
}

std::string config_to_json(const VitConfig& c) {
  nlohmann::json j = {
      {"depth", c.depth},
      {"dim", c.dim},
      {"heads", c.heads},
      {"mlp_ratio", c.mlp_ratio},
      {"patch", c.patch},
      {"img_size", c.img_size},
      {"in_channels", c.in_channels},
      {"num_classes", c.num_classes},
      {"use_layerscale", c.use_layerscale},
      {"pre_quant_rmsnorm", c.pre_quant_rmsnorm},
      {"fp32_layerscale", c.fp32_layerscale},
      {"split_qkv_scales", c.split_qkv_scales},
      {"fp16_pos_embed", c.fp16_pos_embed},
      {"eps_ln", c.eps_ln},
      {"eps_w", c.eps_w},
      {"norm_mean", c.norm_mean},
      {"norm_std", c.norm_std},
  };
  return j.dump(2);
}

VitConfig resolve_config(const std::string& name_or_path) {
  for (const auto& n : preset_names()) {
    if (n == name_or_path) return preset_config(n);
  }
  std::ifstream in(name_or_path);
  if (!in) {
    throw Error(Errc::kInvalidArgument,
                "'" + name_or_path + "' is neither a preset nor a readable config file");
  }
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

std::size_t parameter_count(const VitConfig& c) {
  const std::size_t d = c.dim;
  const std::size_t h = c.hidden_dim();
  const std::size_t patch_embed = d * c.in_channels * c.patch * c.patch + d;
  const std::size_t embeddings = d + c.tokens() * d;
  std::size_t block = 2 * 2 * d;            // norm1, norm2
  block += 3 * d * d + 3 * d;               // qkv
  block += d * d + d;                       // proj
  block += h * d + h + d * h + d;           // fc1, fc2
  if (c.use_layerscale) block += 2 * d;
  const std::size_t head = 2 * d + c.num_classes * d + c.num_classes;
  return patch_embed + embeddings + c.depth * block + head;
}

}  // namespace ternforge
