#pragma once

#include "tsdl/matrix.hpp"

#include <cmath>

namespace tsdl {

enum class Activation { tanh_fn, lrelu };

// Leaky rectifier slope; the subgradient at exactly zero is taken as the slope.
inline constexpr double kLreluSlope = 0.2;

inline double activation_eval(Activation g, double x) {
  switch (g) {
    case Activation::tanh_fn: return std::tanh(x);
    case Activation::lrelu: return x > 0.0 ? x : kLreluSlope * x;
  }
  return 0.0;
}

inline double activation_slope(Activation g, double x) {
  switch (g) {
    case Activation::tanh_fn: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case Activation::lrelu: return x > 0.0 ? 1.0 : kLreluSlope;
  }
  return 0.0;
}

Matrix apply_activation(Activation g, const Matrix& s);
// g'(s) elementwise, evaluated at the pre-activation values.
Matrix activation_derivative(Activation g, const Matrix& s);

}  // namespace tsdl
