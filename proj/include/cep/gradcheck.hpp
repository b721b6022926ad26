#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cep/tape.hpp"

namespace cep {

// Builds a scalar-valued function on the given tape from leaf vars.
using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

// Max over all input coordinates of
//   |analytic - central difference| / max(1, |analytic|, |central difference|)
// evaluated in f64. eps must lie in [1e-6, 1e-3].
double grad_check(const ScalarFn& fn, const std::vector<Tensor>& inputs,
                  double eps);

struct GradCheckCase {
  std::string name;
  ScalarFn fn;
  std::vector<Tensor> inputs;
  double tolerance;
};

// One case per catalog op, random inputs away from relu kinks.
std::vector<GradCheckCase> builtin_gradcheck_cases();

// The combined training objective (cycle closure + InfoNCE) on a small
// model: encoder with temporal-group normalization, both predictors,
// stop-gradient targets and negatives. Inputs are every live parameter.
GradCheckCase combined_loss_gradcheck_case(uint64_t seed = 4);

}  // namespace cep
