#include <cmath>
#include <string>

#include "pgrad/autodiff.hpp"
#include "pgrad/objective.hpp"

namespace pgrad {

Objective::Objective(std::size_t dim) : dim_(dim) {
  if (dim == 0) throw ArgumentError("objective dimension must be positive");
}

void Objective::missing(const char* what) const {
  throw CapabilityError(std::string("objective does not provide ") + what);
}

Dual Objective::eval_dual(std::span<const double>, std::span<const double>) const {
  missing("dual evaluation");
}
Vector Objective::gradient(std::span<const double>) const { missing("a gradient"); }
Vector Objective::hessian_diagonal(std::span<const double>) const {
  missing("a Hessian diagonal");
}
double Objective::hessian_trace(std::span<const double>) const { missing("a Hessian trace"); }
ThirdDerivativeContractions Objective::third_derivative_contractions(
    std::span<const double>) const {
  missing("third-derivative contractions");
}
bool Objective::supports(Capability) const noexcept { return false; }

// ---------------------------------------------------------------------------

QuadraticObjective::QuadraticObjective(std::size_t dim) : Objective(dim) {}

double QuadraticObjective::eval(std::span<const double> x) const {
  require_dim(x, dim(), "quadratic");
  double s = 0.0;
  for (double xi : x) s += xi * xi;
  return s / (2.0 * static_cast<double>(dim()));
}

Dual QuadraticObjective::eval_dual(std::span<const double> x, std::span<const double> u) const {
  require_dim(x, dim(), "quadratic");
  require_dim(u, dim(), "quadratic direction");
  Dual s;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const Dual xi{x[i], u[i]};
    s += xi * xi;
  }
  const double scale = 2.0 * static_cast<double>(dim());
  return {s.value / scale, s.tangent / scale};
}

Vector QuadraticObjective::gradient(std::span<const double> x) const {
  require_dim(x, dim(), "quadratic");
  const double d = static_cast<double>(dim());
  Vector g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = x[i] / d;
  return g;
}

Vector QuadraticObjective::hessian_diagonal(std::span<const double> x) const {
  require_dim(x, dim(), "quadratic");
  return Vector(dim(), 1.0 / static_cast<double>(dim()));
}

double QuadraticObjective::hessian_trace(std::span<const double> x) const {
  require_dim(x, dim(), "quadratic");
  return 1.0;
}

ThirdDerivativeContractions QuadraticObjective::third_derivative_contractions(
    std::span<const double> x) const {
  require_dim(x, dim(), "quadratic");
  return {Vector(dim(), 0.0), Vector(dim(), 0.0)};
}

// ---------------------------------------------------------------------------

QuarticObjective::QuarticObjective(std::size_t dim) : Objective(dim) {}

double QuarticObjective::eval(std::span<const double> x) const {
  require_dim(x, dim(), "quartic");
  double s = 0.0;
  for (double xi : x) {
    const double sq = xi * xi;
    s += sq * sq;
  }
  return s / static_cast<double>(dim());
}

Dual QuarticObjective::eval_dual(std::span<const double> x, std::span<const double> u) const {
  require_dim(x, dim(), "quartic");
  require_dim(u, dim(), "quartic direction");
  Dual s;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const Dual xi{x[i], u[i]};
    const Dual sq = xi * xi;
    s += sq * sq;
  }
  const double d = static_cast<double>(dim());
  return {s.value / d, s.tangent / d};
}

Vector QuarticObjective::gradient(std::span<const double> x) const {
  require_dim(x, dim(), "quartic");
  const double d = static_cast<double>(dim());
  Vector g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = 4.0 * x[i] * x[i] * x[i] / d;
  return g;
}

Vector QuarticObjective::hessian_diagonal(std::span<const double> x) const {
  require_dim(x, dim(), "quartic");
  const double d = static_cast<double>(dim());
  Vector h(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) h[i] = 12.0 * x[i] * x[i] / d;
  return h;
}

double QuarticObjective::hessian_trace(std::span<const double> x) const {
  double t = 0.0;
  for (double h : hessian_diagonal(x)) t += h;
  return t;
}

ThirdDerivativeContractions QuarticObjective::third_derivative_contractions(
    std::span<const double> x) const {
  require_dim(x, dim(), "quartic");
  const double d = static_cast<double>(dim());
  const std::size_t n = dim();
  // I_iii = 24 x_i / D; every mixed third derivative vanishes.
  // curly_j[i] = 4 g_i I_iii + sum_{a != i} g_a I_aaa
  Vector curly_i(n), curly_j(n), g_times_i(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double third = 24.0 * x[i] / d;
    const double g = 4.0 * x[i] * x[i] * x[i] / d;
    curly_i[i] = 0.5 * third;
    g_times_i[i] = g * third;
    total += g_times_i[i];
  }
  for (std::size_t i = 0; i < n; ++i) curly_j[i] = 3.0 * g_times_i[i] + total;
  return {std::move(curly_i), std::move(curly_j)};
}

// ---------------------------------------------------------------------------

ConstantObjective::ConstantObjective(std::size_t dim, double value)
    : Objective(dim), value_(value) {}

double ConstantObjective::eval(std::span<const double> x) const {
  require_dim(x, dim(), "constant");
  return value_;
}

Dual ConstantObjective::eval_dual(std::span<const double> x, std::span<const double> u) const {
  require_dim(x, dim(), "constant");
  require_dim(u, dim(), "constant direction");
  return Dual{value_, 0.0};
}

Vector ConstantObjective::gradient(std::span<const double> x) const {
  require_dim(x, dim(), "constant");
  return Vector(dim(), 0.0);
}

Vector ConstantObjective::hessian_diagonal(std::span<const double> x) const {
  return gradient(x);
}

double ConstantObjective::hessian_trace(std::span<const double> x) const {
  require_dim(x, dim(), "constant");
  return 0.0;
}

ThirdDerivativeContractions ConstantObjective::third_derivative_contractions(
    std::span<const double> x) const {
  return {gradient(x), gradient(x)};
}

QuadraticObjective make_quadratic(std::size_t dim) { return QuadraticObjective(dim); }
QuarticObjective make_quartic(std::size_t dim) { return QuarticObjective(dim); }
ConstantObjective make_constant(std::size_t dim, double value) {
  return ConstantObjective(dim, value);
}

// ---------------------------------------------------------------------------

Vector finite_difference_gradient(const Objective& obj, std::span<const double> x) {
  require_dim(x, obj.dim(), "finite difference");
  Vector probe(x.begin(), x.end());
  Vector g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double h = fd_step(x[i]);
    probe[i] = x[i] + h;
    const double up = obj.eval(probe);
    probe[i] = x[i] - h;
    const double down = obj.eval(probe);
    probe[i] = x[i];
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

double finite_difference_directional(const Objective& obj, std::span<const double> x,
                                     std::span<const double> u, double h) {
  require_dim(x, obj.dim(), "finite difference");
  require_dim(u, obj.dim(), "finite difference direction");
  Vector plus(x.size()), minus(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    plus[i] = x[i] + h * u[i];
    minus[i] = x[i] - h * u[i];
  }
  return (obj.eval(plus) - obj.eval(minus)) / (2.0 * h);
}

DirectionalDerivative directional_derivative(const Objective& obj, std::span<const double> x,
                                             std::span<const double> u) {
  require_dim(x, obj.dim(), "directional_derivative");
  require_dim(u, obj.dim(), "directional_derivative direction");
  if (!obj.supports(Capability::DualEvaluation)) {
    throw CapabilityError("objective does not provide dual evaluation");
  }
  const Dual r = obj.eval_dual(x, u);
  return {r.value, r.tangent};
}

}  // namespace pgrad
