#pragma once

#include <cstddef>
#include <span>

#include "pgrad/dual.hpp"
#include "pgrad/types.hpp"

namespace pgrad {

enum class Capability {
  DualEvaluation,
  Gradient,
  HessianDiagonal,
  HessianTrace,
  ThirdDerivativeContractions,
};

/// Third-derivative contractions entering the bias/variance expansions.
/// curly_i[i] = 1/2 (I_iii + sum_{a!=i} I_iaa)
/// curly_j[i] = 4 g_i I_iii + sum_{a!=i} (2 g_i I_iaa + 3 g_a I_iia) + sum_{a,b!=i} g_a I_abb
struct ThirdDerivativeContractions {
  Vector curly_i;
  Vector curly_j;
};

/// Scalar objective of a D-vector.
///
/// Implementations are immutable after construction and safe to evaluate
/// concurrently. Derivative queries are optional; callers check `supports`
/// or catch CapabilityError.
class Objective {
 public:
  explicit Objective(std::size_t dim);
  virtual ~Objective() = default;

  Objective(const Objective&) = default;
  Objective& operator=(const Objective&) = delete;

  std::size_t dim() const noexcept { return dim_; }

  virtual double eval(std::span<const double> x) const = 0;

  /// Returns (f(x), D_u f(x)) from one forward-mode pass.
  virtual Dual eval_dual(std::span<const double> x, std::span<const double> u) const;

  virtual Vector gradient(std::span<const double> x) const;
  virtual Vector hessian_diagonal(std::span<const double> x) const;
  virtual double hessian_trace(std::span<const double> x) const;
  virtual ThirdDerivativeContractions third_derivative_contractions(
      std::span<const double> x) const;

  virtual bool supports(Capability c) const noexcept;

  /// Degree of the objective as a polynomial; negative when it is not one.
  /// Degree <= 2 means every Taylor expansion in the analytics is exact.
  virtual int polynomial_degree() const noexcept { return -1; }

 protected:
  [[noreturn]] void missing(const char* what) const;

 private:
  std::size_t dim_;
};

/// f(x) = (1/2D) sum x_i^2.
class QuadraticObjective final : public Objective {
 public:
  explicit QuadraticObjective(std::size_t dim);

  double eval(std::span<const double> x) const override;
  Dual eval_dual(std::span<const double> x, std::span<const double> u) const override;
  Vector gradient(std::span<const double> x) const override;
  Vector hessian_diagonal(std::span<const double> x) const override;
  double hessian_trace(std::span<const double> x) const override;
  ThirdDerivativeContractions third_derivative_contractions(
      std::span<const double> x) const override;
  bool supports(Capability) const noexcept override { return true; }
  int polynomial_degree() const noexcept override { return 2; }
};

/// f(x) = (1/D) sum x_i^4. The only nonzero third derivative is I_iii = 24 x_i / D.
class QuarticObjective final : public Objective {
 public:
  explicit QuarticObjective(std::size_t dim);

  double eval(std::span<const double> x) const override;
  Dual eval_dual(std::span<const double> x, std::span<const double> u) const override;
  Vector gradient(std::span<const double> x) const override;
  Vector hessian_diagonal(std::span<const double> x) const override;
  double hessian_trace(std::span<const double> x) const override;
  ThirdDerivativeContractions third_derivative_contractions(
      std::span<const double> x) const override;
  bool supports(Capability) const noexcept override { return true; }
  int polynomial_degree() const noexcept override { return 4; }
};

/// f(x) = c. Used to exercise the f^2/sigma^2 variance term in isolation.
class ConstantObjective final : public Objective {
 public:
  ConstantObjective(std::size_t dim, double value);

  double eval(std::span<const double> x) const override;
  Dual eval_dual(std::span<const double> x, std::span<const double> u) const override;
  Vector gradient(std::span<const double> x) const override;
  Vector hessian_diagonal(std::span<const double> x) const override;
  double hessian_trace(std::span<const double> x) const override;
  ThirdDerivativeContractions third_derivative_contractions(
      std::span<const double> x) const override;
  bool supports(Capability) const noexcept override { return true; }
  int polynomial_degree() const noexcept override { return 0; }

 private:
  double value_;
};

QuadraticObjective make_quadratic(std::size_t dim);
QuarticObjective make_quartic(std::size_t dim);
ConstantObjective make_constant(std::size_t dim, double value);

/// Central-difference step used by the finite-difference oracles: 1e-5 * max(1, |x_i|).
inline double fd_step(double xi) { return 1e-5 * (std::abs(xi) > 1.0 ? std::abs(xi) : 1.0); }

/// Central-difference gradient. Test/validation helper.
Vector finite_difference_gradient(const Objective& obj, std::span<const double> x);

/// Central difference of f along u: (f(x+hu) - f(x-hu)) / 2h.
double finite_difference_directional(const Objective& obj, std::span<const double> x,
                                     std::span<const double> u, double h = 1e-5);

}  // namespace pgrad
