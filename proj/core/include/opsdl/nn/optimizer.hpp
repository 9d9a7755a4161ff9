#pragma once

#include <span>

#include "opsdl/nn/model.hpp"

namespace opsdl::nn {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One bias-corrected Adam update in flat parameter order. Throws NumericError
// naming the tensor if any gradient entry is not finite.
void optimizer_step(ModelState& state, std::span<const double> grad, double lr,
                    const AdamConfig& adam = {});

double l2_norm(std::span<const double> v);

}  // namespace opsdl::nn
