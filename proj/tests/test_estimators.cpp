#include <cmath>
#include <cstring>

#include "doctest.h"
#include "json.hpp"
#include "pgrad/errors.hpp"
#include "pgrad/estimators.hpp"
#include "pgrad/objective.hpp"
#include "pgrad/rng.hpp"

using namespace pgrad;

namespace {

bool bitwise_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

// Per-coordinate sample mean and standard error of repeated estimates.
struct MeanSe {
  Vector mean, se;
};

template <class Draw>
MeanSe monte_carlo(std::size_t dim, std::size_t trials, Draw draw) {
  Vector sum(dim, 0.0), sq(dim, 0.0);
  for (std::size_t t = 0; t < trials; ++t) {
    const Vector g = draw(t);
    for (std::size_t i = 0; i < dim; ++i) {
      sum[i] += g[i];
      sq[i] += g[i] * g[i];
    }
  }
  MeanSe r{Vector(dim), Vector(dim)};
  const auto n = static_cast<double>(trials);
  for (std::size_t i = 0; i < dim; ++i) {
    r.mean[i] = sum[i] / n;
    const double var = (sq[i] - n * r.mean[i] * r.mean[i]) / (n - 1.0);
    r.se[i] = std::sqrt(var / n);
  }
  return r;
}

}  // namespace

TEST_CASE("sample batches are reproducible from their seeds") {
  const PerturbationBatch a = sample_batch(7, 4, 0.3, Distribution::GaussianIsotropic, 99);
  const PerturbationBatch b = sample_batch(7, 4, 0.3, Distribution::GaussianIsotropic, 99);
  CHECK(a.size() == 4);
  for (std::size_t n = 0; n < 4; ++n) {
    CHECK(a.seeds()[n] == sample_seed(99, n));
    CHECK(bitwise_equal(a.sample(n), b.sample(n)));
    const Vector again = regenerate_sample(a.seeds()[n], 7, 0.3, Distribution::GaussianIsotropic);
    CHECK(bitwise_equal(a.sample(n), again));
  }
  // Prefixes agree: sample n does not depend on the batch size.
  const PerturbationBatch longer = sample_batch(7, 9, 0.3, Distribution::GaussianIsotropic, 99);
  CHECK(bitwise_equal(a.sample(3), longer.sample(3)));
  const PerturbationBatch other = sample_batch(7, 4, 0.3, Distribution::GaussianIsotropic, 100);
  CHECK_FALSE(bitwise_equal(a.sample(0), other.sample(0)));
}

TEST_CASE("Gaussian perturbations have variance sigma^2") {
  const PerturbationBatch b = sample_batch(1000, 100, 1.0, Distribution::GaussianIsotropic, 5);
  double sum = 0.0, sq = 0.0;
  for (std::size_t n = 0; n < b.size(); ++n) {
    for (double e : b.sample(n)) {
      sum += e;
      sq += e * e;
    }
  }
  const double count = 1e5;
  const double mean = sum / count;
  CHECK(std::abs(mean) < 0.02);
  CHECK(sq / count - mean * mean == doctest::Approx(1.0).epsilon(0.03));
}

TEST_CASE("Bernoulli perturbations are +-sigma with equal frequency") {
  const PerturbationBatch b = sample_batch(100, 100, 0.5, Distribution::SymmetricBernoulli, 5);
  int plus = 0;
  for (std::size_t n = 0; n < b.size(); ++n) {
    for (double e : b.sample(n)) {
      CHECK((e == 0.5 || e == -0.5));
      plus += e > 0;
    }
  }
  CHECK(std::abs(plus - 5000) < 200);
}

TEST_CASE("batch argument errors") {
  CHECK_THROWS_AS(sample_batch(3, 2, 0.0, Distribution::GaussianIsotropic, 1), ArgumentError);
  CHECK_THROWS_AS(sample_batch(3, 2, -1.0, Distribution::GaussianIsotropic, 1), ArgumentError);
  CHECK_THROWS_AS(sample_batch(3, 2, NAN, Distribution::GaussianIsotropic, 1), ArgumentError);
  CHECK_THROWS_AS(sample_batch(3, 0, 1.0, Distribution::GaussianIsotropic, 1), ArgumentError);
  CHECK_THROWS_AS(sample_batch(0, 2, 1.0, Distribution::GaussianIsotropic, 1), ArgumentError);
  CHECK_THROWS_AS(PerturbationBatch::from_samples(2, 1.0, Distribution::GaussianIsotropic, {1.0}),
                  ArgumentError);
}

TEST_CASE("one-dimensional hand computations") {
  const auto f = make_quadratic(1);  // x^2 / 2
  const Vector x{1.0};
  const auto gauss = PerturbationBatch::from_samples(1, 0.5, Distribution::GaussianIsotropic, {0.5});
  CHECK(estimate_gp(f, x, gauss).g_hat[0] == doctest::Approx(2.25));
  CHECK(estimate_gp_antithetic(f, x, gauss).g_hat[0] == doctest::Approx(1.0));
  BaselineState current;
  const GradientEstimate base = estimate_gp_baseline(f, x, gauss, current);
  CHECK(base.g_hat[0] == doctest::Approx(1.25));
  CHECK(base.baseline == doctest::Approx(0.5));
  const auto bern = PerturbationBatch::from_samples(1, 0.1, Distribution::SymmetricBernoulli, {0.1});
  const GradientEstimate spsa = estimate_spsa(f, x, bern);
  CHECK(spsa.g_hat[0] == doctest::Approx(1.0));
  CHECK(spsa.evals[0] == doctest::Approx(0.605).epsilon(1e-12));
  CHECK(spsa.evals[1] == doctest::Approx(0.405).epsilon(1e-12));
}

TEST_CASE("constant objective") {
  const auto f = make_constant(4, 3.0);
  const Vector x(4, 0.2);
  const PerturbationBatch b = sample_batch(4, 6, 0.1, Distribution::GaussianIsotropic, 11);
  // GP keeps the f/sigma^2 term: g = (c / S sigma^2) sum e^n.
  const GradientEstimate gp = estimate_gp(f, x, b);
  for (std::size_t i = 0; i < 4; ++i) {
    double s = 0.0;
    for (std::size_t n = 0; n < b.size(); ++n) s += b.sample(n)[i];
    CHECK(gp.g_hat[i] == doctest::Approx(3.0 * s / (6 * 0.01)).epsilon(1e-12));
  }
  CHECK(estimate_gp_antithetic(f, x, b).g_hat == Vector(4, 0.0));
  BaselineState current;
  CHECK(estimate_gp_baseline(f, x, b, current).g_hat == Vector(4, 0.0));
  CHECK(estimate_dd(f, x, b).g_hat == Vector(4, 0.0));
}

TEST_CASE("antithetic estimate is exact along the sample for quadratics") {
  const auto f = make_quadratic(5);
  const Vector x{1, -2, 0.5, 3, 0};
  const Vector g = f.gradient(x);
  const PerturbationBatch b = sample_batch(5, 1, 0.7, Distribution::GaussianIsotropic, 3);
  const auto e = b.sample(0);
  double eg = 0.0;
  for (std::size_t i = 0; i < 5; ++i) eg += e[i] * g[i];
  const GradientEstimate est = estimate_gp_antithetic(f, x, b);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(est.g_hat[i] == doctest::Approx(eg / 0.49 * e[i]).epsilon(1e-10));
  }
}

TEST_CASE("directional derivative estimator over coordinate directions") {
  const auto f = make_quartic(4);
  const Vector x{1, -1, 2, 0.5};
  const double sigma = 0.2;
  Vector rows(16, 0.0);
  for (std::size_t n = 0; n < 4; ++n) rows[n * 4 + n] = sigma;
  const auto b = PerturbationBatch::from_samples(4, sigma, Distribution::GaussianIsotropic, rows);
  const GradientEstimate est = estimate_dd(f, x, b);
  const Vector g = f.gradient(x);
  // S = D coordinate directions: g_hat = g / S.
  for (std::size_t i = 0; i < 4; ++i) CHECK(4.0 * est.g_hat[i] == doctest::Approx(g[i]));
}

TEST_CASE("evaluation accounting and payload order") {
  const auto f = make_quartic(3);
  const Vector x{0.3, -0.1, 0.8};
  const PerturbationBatch g = sample_batch(3, 4, 0.1, Distribution::GaussianIsotropic, 8);
  const PerturbationBatch s = sample_batch(3, 4, 0.1, Distribution::SymmetricBernoulli, 8);
  BaselineState current;
  CHECK(estimate_gp(f, x, g).f_evals_count == 4);
  CHECK(estimate_gp_antithetic(f, x, g).f_evals_count == 8);
  CHECK(estimate_gp_baseline(f, x, g, current).f_evals_count == 5);
  CHECK(estimate_spsa(f, x, s).f_evals_count == 8);
  CHECK(estimate_dd(f, x, g).f_evals_count == 4);

  const GradientEstimate as = estimate_gp_antithetic(f, x, g);
  REQUIRE(as.evals.size() == 8);
  for (std::size_t n = 0; n < 4; ++n) {
    Vector plus(3), minus(3);
    for (std::size_t i = 0; i < 3; ++i) {
      plus[i] = x[i] + g.sample(n)[i];
      minus[i] = x[i] - g.sample(n)[i];
    }
    CHECK(as.evals[2 * n] == f.eval(plus));
    CHECK(as.evals[2 * n + 1] == f.eval(minus));
  }
  const GradientEstimate dd = estimate_dd(f, x, g);
  for (std::size_t n = 0; n < 4; ++n) CHECK(dd.evals[n] == f.eval_dual(x, g.sample(n)).tangent);
}

TEST_CASE("distribution and capability checks") {
  const auto f = make_quadratic(3);
  const Vector x(3, 1.0);
  const PerturbationBatch g = sample_batch(3, 2, 0.1, Distribution::GaussianIsotropic, 1);
  const PerturbationBatch s = sample_batch(3, 2, 0.1, Distribution::SymmetricBernoulli, 1);
  CHECK_THROWS_AS(estimate_spsa(f, x, g), InvalidDistributionError);
  CHECK_THROWS_AS(estimate_gp(f, x, s), InvalidDistributionError);
  CHECK_THROWS_AS(estimate_dd(f, x, s), InvalidDistributionError);
  CHECK_THROWS_AS(estimate_gp(f, Vector(2, 1.0), g), ArgumentError);

  struct NoDual final : Objective {
    NoDual() : Objective(3) {}
    double eval(std::span<const double> v) const override { return v[0]; }
  } plain;
  CHECK_THROWS_AS(estimate_dd(plain, x, g), CapabilityError);
  CHECK_NOTHROW(estimate_gp(plain, x, g));
}

TEST_CASE("estimates are bit-identical across thread counts") {
  const auto f = make_quartic(50);
  Vector x(50);
  for (std::size_t i = 0; i < 50; ++i) x[i] = std::sin(static_cast<double>(i));
  for (EstimatorKind k : {EstimatorKind::GP, EstimatorKind::GP_AS, EstimatorKind::GP_Baseline,
                          EstimatorKind::SPSA, EstimatorKind::DD}) {
    const PerturbationBatch b = sample_batch(50, 37, 0.05, distribution_for(k), 1234);
    const GradientEstimate one = estimate(k, f, x, b, {1});
    for (std::size_t threads : {2u, 3u, 8u}) {
      const GradientEstimate many = estimate(k, f, x, b, {threads});
      CHECK(bitwise_equal(one.g_hat, many.g_hat));
      CHECK(bitwise_equal(one.evals, many.evals));
    }
  }
}

TEST_CASE("moving-average baseline") {
  BaselineState ma(BaselineMode::MovingAverage, 3);
  CHECK_FALSE(ma.moving_average().has_value());
  for (double v : {1.0, 2.0, 3.0, 4.0}) ma.record(v);
  CHECK(ma.history().size() == 3);
  CHECK(*ma.moving_average() == doctest::Approx(3.0));
  BaselineState cv(BaselineMode::CurrentValue);
  cv.record(5.0);
  CHECK(cv.history().empty());
  CHECK_FALSE(cv.moving_average().has_value());
  CHECK_THROWS_AS(BaselineState(BaselineMode::MovingAverage, 0), ArgumentError);

  // First call falls back to the current mean, so g_hat sums e (f - mean f).
  const auto f = make_quadratic(2);
  const Vector x{1.0, 1.0};
  BaselineState fresh(BaselineMode::MovingAverage, 10);
  const PerturbationBatch b = sample_batch(2, 3, 0.5, Distribution::GaussianIsotropic, 2);
  const GradientEstimate est = estimate_gp_baseline(f, x, b, fresh);
  const double mean = (est.evals[0] + est.evals[1] + est.evals[2]) / 3.0;
  CHECK(*est.baseline == doctest::Approx(mean));
  CHECK(est.f_evals_count == 3);
  CHECK(fresh.history().size() == 1);
  CHECK(fresh.history()[0] == doctest::Approx(mean));
}

TEST_CASE("GP and DD are unbiased on the quadratic") {
  const auto f = make_quadratic(100);
  Vector x(100);
  for (std::size_t i = 0; i < 100; ++i) x[i] = std::cos(0.3 * static_cast<double>(i));
  const Vector g = f.gradient(x);
  for (EstimatorKind k : {EstimatorKind::GP, EstimatorKind::DD}) {
    const std::size_t trials = k == EstimatorKind::GP ? 100000 : 20000;
    const MeanSe r = monte_carlo(100, trials, [&](std::size_t t) {
      return estimate(k, f, x, sample_batch(100, 5, 0.1, Distribution::GaussianIsotropic, derive_seed(77, t))).g_hat;
    });
    int outside = 0;
    for (std::size_t i = 0; i < 100; ++i) outside += std::abs(r.mean[i] - g[i]) > 4.0 * r.se[i];
    CHECK(outside == 0);
  }
}

TEST_CASE("baseline estimator has the same mean as plain GP") {
  const auto f = make_quartic(5);
  const Vector x{1.0, 0.5, -0.5, 0.8, -1.0};
  const std::size_t trials = 100000;
  const MeanSe gp = monte_carlo(5, trials, [&](std::size_t t) {
    return estimate_gp(f, x, sample_batch(5, 1, 0.3, Distribution::GaussianIsotropic, derive_seed(5, t))).g_hat;
  });
  const MeanSe base = monte_carlo(5, trials, [&](std::size_t t) {
    BaselineState current;
    return estimate_gp_baseline(f, x, sample_batch(5, 1, 0.3, Distribution::GaussianIsotropic, derive_seed(6, t)), current).g_hat;
  });
  for (std::size_t i = 0; i < 5; ++i) {
    const double se = std::hypot(gp.se[i], base.se[i]);
    CHECK(std::abs(gp.mean[i] - base.mean[i]) < 4.0 * se);
  }
}

TEST_CASE("SPSA bias on the quartic follows the Bernoulli fourth moment") {
  // With e_i = +-s, E[e_i^3 / e_i] = s^2, so E[g_hat_i] = g_i + 4 s^2 x_i / D exactly
  // (third moment factor 1 instead of the Gaussian 3).
  const auto f = make_quartic(10);
  const double sigma = 0.1;
  Vector unit(10, 0.0);
  unit[0] = 1.0;
  // At x = e_0 every cross term vanishes and the estimate is deterministic.
  const GradientEstimate one =
      estimate_spsa(f, unit, sample_batch(10, 1, sigma, Distribution::SymmetricBernoulli, 4));
  CHECK(one.g_hat[0] == doctest::Approx((4.0 + 4.0 * sigma * sigma) / 10.0).epsilon(1e-12));

  const Vector x{1.0, 0.5, -0.5, 0.2, 0.0, 1.0, -1.0, 0.3, 0.7, -0.2};
  const Vector g = f.gradient(x);
  const MeanSe r = monte_carlo(10, 200000, [&](std::size_t t) {
    return estimate_spsa(f, x, sample_batch(10, 1, sigma, Distribution::SymmetricBernoulli, derive_seed(9, t))).g_hat;
  });
  int outside = 0;
  for (std::size_t i = 0; i < 10; ++i) {
    outside += std::abs(r.mean[i] - (g[i] + 4.0 * sigma * sigma * x[i] / 10.0)) > 4.0 * r.se[i];
  }
  CHECK(outside == 0);
}

TEST_CASE("SPSA matches the antithetic formula on a Bernoulli batch") {
  const auto f = make_quartic(6);
  const Vector x{0.1, 0.2, -0.3, 0.4, -0.5, 0.6};
  const PerturbationBatch b = sample_batch(6, 5, 0.2, Distribution::SymmetricBernoulli, 21);
  const GradientEstimate est = estimate_spsa(f, x, b);
  for (std::size_t i = 0; i < 6; ++i) {
    double s = 0.0;
    for (std::size_t n = 0; n < 5; ++n) {
      s += b.sample(n)[i] * (est.evals[2 * n] - est.evals[2 * n + 1]);
    }
    CHECK(est.g_hat[i] == doctest::Approx(s / (2 * 5 * 0.04)).epsilon(1e-12));
  }
}

TEST_CASE("JSON-lines record") {
  const auto f = make_quadratic(2);
  const GradientEstimate e =
      estimate_gp(f, Vector{1.0, 2.0}, sample_batch(2, 2, 0.5, Distribution::GaussianIsotropic, 17));
  const auto j = nlohmann::json::parse(to_jsonl(e));
  CHECK(j.at("estimator") == "GP");
  CHECK(j.at("S") == 2);
  CHECK(j.at("sigma") == 0.5);
  CHECK(j.at("seed") == 17);
  CHECK(j.at("g_hat").get<Vector>() == e.g_hat);
  CHECK(j.at("evals").get<Vector>() == e.evals);
  CHECK(to_jsonl(e).find('\n') == std::string::npos);
}

TEST_CASE("estimator names") {
  for (EstimatorKind k : {EstimatorKind::GP, EstimatorKind::GP_AS, EstimatorKind::GP_Baseline,
                          EstimatorKind::SPSA, EstimatorKind::DD}) {
    CHECK(parse_estimator(to_string(k)) == k);
  }
  CHECK_THROWS_AS(parse_estimator("ES"), ArgumentError);
  CHECK(distribution_for(EstimatorKind::SPSA) == Distribution::SymmetricBernoulli);
  CHECK(payload_width(EstimatorKind::GP_AS) == 2);
  CHECK(payload_width(EstimatorKind::DD) == 1);
}
