#pragma once

// Forward-mode dual numbers: a + b*delta with delta^2 = 0.
//
// One tangent per value. Evaluating f on (x + u*delta) yields f(x) in the
// value part and the directional derivative D_u f(x) in the tangent part.

#include <cmath>

namespace pgrad {

struct Dual {
  double value = 0.0;
  double tangent = 0.0;

  constexpr Dual() = default;
  constexpr Dual(double v) : value(v) {}  // NOLINT: constants promote implicitly
  constexpr Dual(double v, double t) : value(v), tangent(t) {}

  constexpr Dual& operator+=(const Dual& o) {
    value += o.value;
    tangent += o.tangent;
    return *this;
  }
  constexpr Dual& operator-=(const Dual& o) {
    value -= o.value;
    tangent -= o.tangent;
    return *this;
  }
  constexpr Dual& operator*=(const Dual& o) {
    tangent = tangent * o.value + value * o.tangent;
    value *= o.value;
    return *this;
  }
  constexpr Dual& operator*=(double s) {
    value *= s;
    tangent *= s;
    return *this;
  }
  constexpr Dual& operator/=(const Dual& o) {
    const double q = value / o.value;
    tangent = (tangent - q * o.tangent) / o.value;
    value = q;
    return *this;
  }

  friend constexpr Dual operator+(Dual a, const Dual& b) { return a += b; }
  friend constexpr Dual operator-(Dual a, const Dual& b) { return a -= b; }
  friend constexpr Dual operator*(Dual a, const Dual& b) { return a *= b; }
  friend constexpr Dual operator/(Dual a, const Dual& b) { return a /= b; }
  friend constexpr Dual operator*(Dual a, double s) { return a *= s; }
  friend constexpr Dual operator*(double s, Dual a) { return a *= s; }
  friend constexpr Dual operator-(const Dual& a) { return {-a.value, -a.tangent}; }

  friend constexpr bool operator==(const Dual&, const Dual&) = default;
};

inline Dual exp(const Dual& a) {
  const double e = std::exp(a.value);
  return {e, e * a.tangent};
}

inline Dual log(const Dual& a) { return {std::log(a.value), a.tangent / a.value}; }

/// ReLU. The tangent at exactly zero is 0.
constexpr Dual relu(const Dual& a) { return a.value > 0.0 ? a : Dual{}; }
constexpr double relu(double a) { return a > 0.0 ? a : 0.0; }

/// Ordering by value only; used for max-subtraction in log-sum-exp.
constexpr bool value_less(const Dual& a, const Dual& b) { return a.value < b.value; }
constexpr bool value_less(double a, double b) { return a < b; }

constexpr double primal(const Dual& a) { return a.value; }
constexpr double primal(double a) { return a; }

}  // namespace pgrad
