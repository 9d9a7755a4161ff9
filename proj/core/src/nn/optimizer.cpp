#include "opsdl/nn/optimizer.hpp"

#include <cmath>

#include "opsdl/error.hpp"

namespace opsdl::nn {

void optimizer_step(ModelState& state, std::span<const double> grad, double lr,
                    const AdamConfig& adam) {
  if (grad.size() != state.params.size())
    throw ShapeError("gradient has " + std::to_string(grad.size()) + " entries, model has " +
                     std::to_string(state.params.size()));
  if (!(lr > 0.0)) throw ConfigError("learning rate must be > 0");
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!std::isfinite(grad[i]))
      throw NumericError("non-finite gradient in parameter '" + state.name_of(i) + "'");
  }

  const double t = static_cast<double>(state.step + 1);
  const double c1 = 1.0 - std::pow(adam.beta1, t);
  const double c2 = 1.0 - std::pow(adam.beta2, t);
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const double g = grad[i];
    state.m[i] = adam.beta1 * state.m[i] + (1.0 - adam.beta1) * g;
    state.v[i] = adam.beta2 * state.v[i] + (1.0 - adam.beta2) * g * g;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    state.params[i] -= lr * mhat / (std::sqrt(vhat) + adam.eps);
  }
  ++state.step;
}

double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace opsdl::nn
