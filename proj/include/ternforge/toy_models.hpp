#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ternforge/analysis.hpp"

namespace ternforge {

// Small differentiable problems for the importance estimators.
struct ToyProblem {
  LossFn loss;
  std::vector<double> params;
  std::vector<ParamGroup> groups;
};

// JSON spec, one of:
//   {"type": "quadratic", "w": [...], "a": [...]}          L = sum a_i w_i^2
//   {"type": "quadratic", "w": [...], "matrix": [[...]]}   L = 0.5 w'Aw
//   {"type": "linear", "w": [...], "c": [...]}             L = sum c_i w_i
//   {"type": "mlp", "layers": [in, hidden..., out], "samples": n}
//   {"type": "vit", "config": {...}, "images": n}
// Quadratic and linear toys accept "groups": [{"name": ..., "indices": [...]}]
// and default to one group per coordinate. The mlp toy groups per layer, the
// vit toy per component role. Random parts (weights, inputs, labels) derive
// from the seed.
ToyProblem make_toy_problem(const std::string& json_text, std::uint64_t seed);

}  // namespace ternforge
