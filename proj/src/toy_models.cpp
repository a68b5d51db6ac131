#include "ternforge/toy_models.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <random>

#include <json.hpp>

#include "ternforge/config.hpp"
#include "ternforge/model.hpp"
#include "ternforge/synthetic.hpp"

namespace ternforge {

namespace {

using nlohmann::json;

std::vector<double> numbers(const json& spec, const char* key) {
  if (!spec.contains(key) || !spec[key].is_array()) {
    throw Error(Errc::kInvalidArgument, std::string("toy spec needs array '") + key + "'");
  }
  return spec[key].get<std::vector<double>>();
}

std::vector<ParamGroup> groups_or_default(const json& spec, std::size_t n) {
  if (!spec.contains("groups")) return per_coordinate_groups(n);
  std::vector<ParamGroup> groups;
  for (const auto& g : spec["groups"]) {
    groups.push_back({g.at("name").get<std::string>(), g.at("indices").get<std::vector<std::size_t>>()});
  }
  check_partition(groups, n);
  return groups;
}

double cross_entropy(std::span<const float> logits, std::size_t label) {
  double mx = -INFINITY;
  for (float v : logits) mx = std::max(mx, static_cast<double>(v));
  double sum = 0;
  for (float v : logits) sum += std::exp(v - mx);
  return mx + std::log(sum) - logits[label];
}

ToyProblem quadratic(const json& spec) {
  ToyProblem p;
  p.params = numbers(spec, "w");
  const std::size_t n = p.params.size();
  if (spec.contains("matrix")) {
    const auto rows = spec["matrix"].get<std::vector<std::vector<double>>>();
    if (rows.size() != n) throw Error(Errc::kShapeMismatch, "quadratic matrix rows != len(w)");
    for (const auto& r : rows) {
      if (r.size() != n) throw Error(Errc::kShapeMismatch, "quadratic matrix must be square");
    }
    p.loss = [rows](std::span<const double> w) {
      double sum = 0;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < rows.size(); ++j) sum += w[i] * rows[i][j] * w[j];
      }
      return 0.5 * sum;
    };
  } else {
    const std::vector<double> a = numbers(spec, "a");
    if (a.size() != n) throw Error(Errc::kShapeMismatch, "len(a) != len(w)");
    p.loss = [a](std::span<const double> w) {
      double sum = 0;
      for (std::size_t i = 0; i < a.size(); ++i) sum += a[i] * w[i] * w[i];
      return sum;
    };
  }
  p.groups = groups_or_default(spec, n);
  return p;
}

ToyProblem linear(const json& spec) {
  ToyProblem p;
  p.params = numbers(spec, "w");
  const std::vector<double> c = numbers(spec, "c");
  if (c.size() != p.params.size()) throw Error(Errc::kShapeMismatch, "len(c) != len(w)");
  p.loss = [c](std::span<const double> w) {
    double sum = 0;
    for (std::size_t i = 0; i < c.size(); ++i) sum += c[i] * w[i];
    return sum;
  };
  p.groups = groups_or_default(spec, p.params.size());
  return p;
}

// tanh MLP with cross-entropy on seeded random inputs and labels.
ToyProblem mlp(const json& spec, std::uint64_t seed) {
  const auto layers = spec.at("layers").get<std::vector<std::size_t>>();
  const std::size_t samples = spec.value("samples", std::size_t{16});
  if (layers.size() < 2 || samples == 0) throw Error(Errc::kInvalidArgument, "mlp needs >= 2 layer sizes and samples");
  for (std::size_t s : layers) {
    if (s == 0) throw Error(Errc::kInvalidArgument, "mlp layer size must be positive");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  ToyProblem p;
  for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
    const std::size_t in = layers[l];
    const std::size_t out = layers[l + 1];
    ParamGroup g{"fc" + std::to_string(l), {}};
    for (std::size_t i = 0; i < in * out + out; ++i) {
      g.indices.push_back(p.params.size());
      p.params.push_back(i < in * out ? normal(rng) / std::sqrt(static_cast<double>(in)) : 0.1 * normal(rng));
    }
    p.groups.push_back(std::move(g));
  }
  auto inputs = std::make_shared<std::vector<double>>(samples * layers.front());
  for (double& v : *inputs) v = normal(rng);
  auto labels = std::make_shared<std::vector<std::size_t>>(samples);
  for (auto& y : *labels) y = rng() % layers.back();
  p.loss = [layers, samples, inputs, labels](std::span<const double> w) {
    double total = 0;
    for (std::size_t s = 0; s < samples; ++s) {
      std::vector<double> act(inputs->begin() + s * layers.front(), inputs->begin() + (s + 1) * layers.front());
      std::size_t off = 0;
      for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
        const std::size_t in = layers[l];
        const std::size_t out = layers[l + 1];
        std::vector<double> next(out);
        for (std::size_t o = 0; o < out; ++o) {
          double acc = w[off + in * out + o];
          for (std::size_t i = 0; i < in; ++i) acc += w[off + o * in + i] * act[i];
          next[o] = l + 2 < layers.size() ? std::tanh(acc) : acc;
        }
        off += in * out + out;
        act = std::move(next);
      }
      double mx = act[0];
      for (double v : act) mx = std::max(mx, v);
      double sum = 0;
      for (double v : act) sum += std::exp(v - mx);
      total += mx + std::log(sum) - act[(*labels)[s]];
    }
    return total / static_cast<double>(samples);
  };
  return p;
}

// FP32 synthetic ViT; cross-entropy against seeded random labels.
ToyProblem vit(const json& spec, std::uint64_t seed) {
  const VitConfig config = config_from_json(spec.at("config").dump());
  const std::size_t images = spec.value("images", std::size_t{2});
  if (images == 0) throw Error(Errc::kInvalidArgument, "vit toy needs at least one image");
  const ModelFile archive = generate_synthetic_archive(config, seed);
  const auto tensors = canonical_tensors(config);
  ToyProblem p;
  std::map<TensorRole, std::size_t> group_of;
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    const auto& t = tensors[k];
    auto [it, fresh] = group_of.emplace(t.role, p.groups.size());
    if (fresh) p.groups.push_back({std::string(role_name(t.role)), {}});
    const F32Tensor values = record_to_f32(archive.tensors[k]);
    for (float v : values.data()) {
      p.groups[it->second].indices.push_back(p.params.size());
      p.params.push_back(v);
    }
  }
  auto inputs = std::make_shared<std::vector<F32Tensor>>();
  std::mt19937_64 rng(seed ^ 0x5EEDull);
  auto labels = std::make_shared<std::vector<std::size_t>>();
  for (std::size_t i = 0; i < images; ++i) {
    inputs->push_back(synthetic_image(config, rng()));
    labels->push_back(rng() % config.num_classes);
  }
  p.loss = [config, tensors, inputs, labels](std::span<const double> w) {
    ModelFile file;
    file.config = config;
    std::size_t off = 0;
    for (const auto& t : tensors) {
      F32Tensor values(t.shape);
      for (float& v : values.data()) v = static_cast<float>(w[off++]);
      file.tensors.push_back(make_f32_record(t.name, values));
    }
    const VitWeights weights = build_from_archive(file, PrecisionPlan::kFp32);
    double total = 0;
    for (std::size_t i = 0; i < inputs->size(); ++i) {
      total += cross_entropy(forward(weights, (*inputs)[i]).logits.data(), (*labels)[i]);
    }
    return total / static_cast<double>(inputs->size());
  };
  return p;
}

}  // namespace

ToyProblem make_toy_problem(const std::string& json_text, std::uint64_t seed) {
  json spec;
  try {
    spec = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(Errc::kInvalidArgument, std::string("toy spec: ") + e.what());
  }
  try {
    const std::string type = spec.at("type").get<std::string>();
    if (type == "quadratic") return quadratic(spec);
    if (type == "linear") return linear(spec);
    if (type == "mlp") return mlp(spec, seed);
    if (type == "vit") return vit(spec, seed);
    throw Error(Errc::kInvalidArgument, "unknown toy type '" + type + "'");
  } catch (const json::exception& e) {
    throw Error(Errc::kInvalidArgument, std::string("toy spec: ") + e.what());
  }
}

}  // namespace ternforge
