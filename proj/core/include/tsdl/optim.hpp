#pragma once

#include "tsdl/matrix.hpp"

#include <vector>

namespace tsdl {

enum class OptimizerKind { sgd, adam };

// Parameterization-blind: the same state/step code updates weight matrices or
// target matrices, whichever list is handed in.
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::sgd;
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step_count = 0;
  std::vector<Matrix> m;  // first moments, shaped on the first adam step
  std::vector<Matrix> v;  // second moments
};

void sgd_step(OptimizerState& state, std::vector<Matrix>& params,
              const std::vector<Matrix>& grads);

// Standard bias-corrected update; deterministic.
void adam_step(OptimizerState& state, std::vector<Matrix>& params,
               const std::vector<Matrix>& grads);

void optimizer_step(OptimizerState& state, std::vector<Matrix>& params,
                    const std::vector<Matrix>& grads);

}  // namespace tsdl
