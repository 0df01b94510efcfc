#pragma once

// Closed-form bias/variance predictions for the estimators and a Monte-Carlo
// harness that measures the real moments.
//
// Predictions are per coordinate and assume a diagonal Hessian when forming
// the squared-second-derivative term curly_h. For polynomials of degree <= 2
// the GP, GP_AS, SPSA and DD predictions are exact; otherwise O(sigma^4)
// terms are dropped.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>

#include "pgrad/estimators.hpp"
#include "pgrad/objective.hpp"

namespace pgrad {

enum class ExpansionOrder { Exact, SigmaSquared };

struct AnalyticMoments {
  EstimatorKind estimator{};
  Vector bias;      // <g_hat_i> - g_i
  Vector variance;  // <g_hat_i^2> - <g_hat_i>^2
  ExpansionOrder order = ExpansionOrder::SigmaSquared;
  bool diagonal_hessian_assumed = false;
  /// SPSA only: the sigma^2 K_i variance contribution has no closed form and is omitted.
  bool sigma_squared_term_omitted = false;
};

/// curly_h[i] = 15 H_ii^2 + 6 H_ii sum_{a!=i} H_aa + 3 sum_{a!=i} H_aa^2
///              + sum_{a,b!=i, a!=b} H_aa H_bb
/// This is the sixth Gaussian moment contraction E[e_i^2 (e'He)^2] / sigma^6 for diagonal H.
Vector curly_h(std::span<const double> hessian_diagonal);

/// Alternative closed form for the quadratic (1/2D) sum x^2 that keeps the a == b
/// terms in the last sum: (7 + 7D + D^2) / D^2. It exceeds the Gaussian moment
/// value (D+2)(D+4)/D^2 by (D-1)/D^2.
double quadratic_curly_h_squared_sum(std::size_t dim);

/// GP variance per coordinate:
/// (1/S)(f^2/s^2 + sum_j g_j^2 + g_i^2 + f(tr H + 2 H_ii) + s^2 (curly_h_i/4 + curly_j_i))
Vector gp_variance(double f, std::span<const double> g, std::span<const double> hessian_diagonal,
                   double hessian_trace, std::span<const double> curly_h,
                   std::span<const double> curly_j, double sigma, std::size_t samples);

/// Large-D form: (1/S)(f^2/s^2 + D G2 + D f Hbar + s^2 (curly_h_i/4 + curly_j_i)),
/// G2 the mean squared gradient and Hbar the mean Hessian diagonal.
double gp_variance_large_dim(double f, double mean_sq_grad, double mean_hessian, std::size_t dim,
                             double curly_h_i, double curly_j_i, double sigma,
                             std::size_t samples);

/// Quadratic objective, D >> 1: (1/S)(f^2/s^2 + f + s^2/4).
double quadratic_gp_variance_large_dim(double f, double sigma, std::size_t samples);

/// Throw CapabilityError when the objective lacks grad, Hessian or third-derivative data.
AnalyticMoments analytic_gp(const Objective& obj, std::span<const double> x, double sigma,
                            std::size_t samples);
AnalyticMoments analytic_gp_as(const Objective& obj, std::span<const double> x, double sigma,
                               std::size_t samples);
/// Bias sigma^2 curly_i; variance (1/S) sum_{j!=i} g_j^2 with the K_i term flagged as omitted.
AnalyticMoments analytic_spsa(const Objective& obj, std::span<const double> x, double sigma,
                              std::size_t samples);
/// Zero bias; variance (1/S)(g_i^2 + sum_j g_j^2), independent of sigma.
AnalyticMoments analytic_dd(const Objective& obj, std::span<const double> x, std::size_t samples);

/// Dispatch. GP_Baseline has no closed form here and returns nullopt.
std::optional<AnalyticMoments> analytic_moments(EstimatorKind kind, const Objective& obj,
                                                std::span<const double> x, double sigma,
                                                std::size_t samples);

/// Finite-difference contractions from the objective's Hessian diagonal and trace:
///   curly_i = 1/2 grad(tr H),  curly_j_i = 2 D_g H_ii + 2 <g, curly_i> + 2 g_i curly_i_i.
/// Validation only; too noisy for tight tolerances.
ThirdDerivativeContractions fd_third_derivative_contractions(const Objective& obj,
                                                             std::span<const double> x,
                                                             double step = 1e-3);

struct EmpiricalMoments {
  Vector mean;
  Vector variance;   // unbiased sample variance
  Vector std_error;  // sqrt(variance / trials)
  /// sqrt((1/D) sum_i <(g_hat_i - g_i)^2>) against the objective's gradient.
  double rmse_vs_true = 0.0;
  std::size_t trials = 0;
};

/// Runs `trials` independent estimates; trial t uses batch master seed derive_seed(master_seed, t).
/// Deterministic for any thread count. Throws ArgumentError when trials < 2.
EmpiricalMoments measure_empirical(const Objective& obj, std::span<const double> x,
                                   EstimatorKind kind, double sigma, std::size_t samples,
                                   std::size_t trials, std::uint64_t master_seed,
                                   const ExecutionOptions& exec = {});

/// Streaming mean/variance/squared-error accumulator with a deterministic merge.
class MomentAccumulator {
 public:
  explicit MomentAccumulator(std::size_t dim = 0);

  void add(std::span<const double> estimate, std::span<const double> truth);
  /// Chan et al. pairwise combination.
  void merge(const MomentAccumulator& other);
  EmpiricalMoments finish() const;

  std::size_t count() const noexcept { return count_; }

 private:
  std::size_t count_ = 0;
  Vector mean_;
  Vector m2_;
  double squared_error_ = 0.0;
};

/// One row of the moments CSV.
struct MomentsRow {
  std::string estimator;
  double sigma = 0.0;
  std::size_t samples = 0;
  std::size_t dim = 0;
  std::size_t trials = 0;
  double rmse_empirical = 0.0;
  double rmse_analytic = 0.0;
  double bias_norm_empirical = 0.0;
  double bias_norm_analytic = 0.0;
  double var_mean_empirical = 0.0;
  double var_mean_analytic = 0.0;
};

inline constexpr const char* kMomentsCsvHeader =
    "estimator,sigma,S,D,trials,rmse_empirical,rmse_analytic,bias_norm_empirical,"
    "bias_norm_analytic,var_mean_empirical,var_mean_analytic";

std::string to_csv(const MomentsRow& row);

/// Builds a row from measured and predicted moments at a fixed point x.
/// Analytic columns are NaN when `analytic` is empty.
MomentsRow make_moments_row(EstimatorKind kind, double sigma, std::size_t samples,
                            std::span<const double> truth, const EmpiricalMoments& empirical,
                            const std::optional<AnalyticMoments>& analytic);

/// sqrt((1/D) sum_i (variance_i + bias_i^2)).
double analytic_rmse(const AnalyticMoments& m);

}  // namespace pgrad
