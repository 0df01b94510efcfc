#pragma once

#include <span>

#include "pgrad/objective.hpp"

namespace pgrad {

struct DirectionalDerivative {
  double value;       // f(x)
  double derivative;  // D_u f(x) = <u, grad f(x)>
};

/// Exact directional derivative by one forward-mode evaluation.
/// Throws ArgumentError on dimension mismatch, CapabilityError if the objective has no dual path.
DirectionalDerivative directional_derivative(const Objective& obj, std::span<const double> x,
                                             std::span<const double> u);

}  // namespace pgrad
