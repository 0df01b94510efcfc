#include <cmath>
#include <memory>

#include "doctest.h"
#include "pgrad/autodiff.hpp"
#include "pgrad/dual.hpp"
#include "pgrad/errors.hpp"
#include "pgrad/mlp.hpp"
#include "pgrad/objective.hpp"
#include "pgrad/rng.hpp"

using namespace pgrad;

namespace {

Vector normals(std::uint64_t seed, std::size_t n, double scale = 1.0) {
  SampleStream s(seed);
  Vector v(n);
  for (double& x : v) x = scale * s.next_normal();
  return v;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// f(x) = sum x^3 with no dual support.
class CubicNoDual final : public Objective {
 public:
  explicit CubicNoDual(std::size_t d) : Objective(d) {}
  double eval(std::span<const double> x) const override {
    double s = 0.0;
    for (double v : x) s += v * v * v;
    return s;
  }
};

}  // namespace

TEST_CASE("dual arithmetic follows the differentiation rules") {
  const Dual a{3.0, 1.0};
  const Dual b{2.0, -0.5};
  CHECK((a + b) == Dual{5.0, 0.5});
  CHECK((a - b) == Dual{1.0, 1.5});
  // (ab)' = a'b + ab'
  CHECK((a * b).tangent == doctest::Approx(1.0 * 2.0 + 3.0 * -0.5));
  // (a/b)' = (a'b - ab') / b^2
  CHECK((a / b).value == doctest::Approx(1.5));
  CHECK((a / b).tangent == doctest::Approx((1.0 * 2.0 - 3.0 * -0.5) / 4.0));
  CHECK((2.0 * a) == Dual{6.0, 2.0});
  CHECK((-a) == Dual{-3.0, -1.0});
  const Dual e = exp(Dual{0.5, 2.0});
  CHECK(e.value == doctest::Approx(std::exp(0.5)));
  CHECK(e.tangent == doctest::Approx(2.0 * std::exp(0.5)));
  const Dual l = log(Dual{4.0, 2.0});
  CHECK(l.value == doctest::Approx(std::log(4.0)));
  CHECK(l.tangent == doctest::Approx(0.5));
}

TEST_CASE("relu passes tangents only on the positive side") {
  CHECK(relu(Dual{2.0, 3.0}) == Dual{2.0, 3.0});
  CHECK(relu(Dual{-1.0, 3.0}) == Dual{0.0, 0.0});
  CHECK(relu(Dual{0.0, 3.0}) == Dual{0.0, 0.0});
  CHECK(value_less(Dual{1.0, 100.0}, Dual{2.0, -100.0}));
}

TEST_CASE("quadratic: D_u f = <u, x>/D exactly") {
  const auto f = make_quadratic(5);
  const Vector x{1, 2, 3, 4, 5};
  const Vector u{1, 0, -1, 0.5, 2};
  const DirectionalDerivative d = directional_derivative(f, x, u);
  CHECK(d.value == doctest::Approx(55.0 / 10.0));
  CHECK(d.derivative == doctest::Approx(dot(x, u) / 5.0).epsilon(1e-14));
}

TEST_CASE("dual value part equals eval bitwise") {
  const auto q = make_quadratic(7);
  const auto r = make_quartic(7);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Vector x = normals(s, 7, 3.0);
    const Vector u = normals(s + 100, 7);
    CHECK(q.eval_dual(x, u).value == q.eval(x));
    CHECK(r.eval_dual(x, u).value == r.eval(x));
  }
}

TEST_CASE("polynomial directional derivatives match gradient and central differences") {
  const auto q = make_quadratic(30);
  const auto r = make_quartic(30);
  for (std::uint64_t s = 0; s < 100; ++s) {
    const Vector x = normals(derive_seed(1, s), 30);
    const Vector u = normals(derive_seed(2, s), 30);
    for (const Objective* f : {static_cast<const Objective*>(&q), static_cast<const Objective*>(&r)}) {
      const double dd = directional_derivative(*f, x, u).derivative;
      // Independent oracle: the analytic gradient.
      CHECK(dd == doctest::Approx(dot(f->gradient(x), u)).epsilon(1e-12));
      const double fd = finite_difference_directional(*f, x, u);
      CHECK(std::abs(dd - fd) <= 1e-6 * std::max(1.0, std::abs(dd)));
    }
  }
}

TEST_CASE("MLP directional derivative matches central differences and backprop") {
  BlobConfig bc;
  bc.samples_per_class = 20;
  auto data = std::make_shared<const Dataset>(make_blobs(bc));
  const std::vector<std::size_t> sizes{20, 8, 6, 2};
  const MlpObjective f = make_mlp(MlpSpec{sizes, data});
  for (std::uint64_t s = 0; s < 20; ++s) {
    // Zero initial biases can put a pre-activation exactly on the ReLU kink; jitter to a generic point.
    Vector x = mlp_initial_parameters(sizes, s);
    const Vector jitter = normals(derive_seed(4, s), x.size(), 0.05);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += jitter[i];
    const Vector u = normals(derive_seed(3, s), x.size());
    const double dd = directional_derivative(f, x, u).derivative;
    const double bp = dot(f.gradient(x), u);
    CHECK(dd == doctest::Approx(bp).epsilon(1e-10));
    const double fd = finite_difference_directional(f, x, u);
    CHECK(std::abs(dd - fd) <= 1e-4 * std::max(1.0, std::abs(dd)));
  }
}

TEST_CASE("directional derivative errors") {
  const auto f = make_quadratic(3);
  const Vector x{1, 2, 3};
  CHECK_THROWS_AS(directional_derivative(f, x, Vector{1, 2}), ArgumentError);
  CHECK_THROWS_AS(directional_derivative(f, Vector{1, 2}, x), ArgumentError);
  const CubicNoDual g(3);
  CHECK_THROWS_AS(directional_derivative(g, x, x), CapabilityError);
  CHECK_FALSE(g.supports(Capability::DualEvaluation));
}
