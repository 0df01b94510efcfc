#pragma once

// Stochastic variational optimization over an isotropic Gaussian N(mu, e^beta I).
//
// The bound U(mu, beta) = E[f(mu + e)] is minimized with the sampled
// score-function gradient
//   dU/dmu   ~ 1/(S s^2) sum_n e^n f(mu + e^n)
//   dU/dbeta ~ 1/S sum_n f(mu + e^n) (|e^n|^2 / (2 s^2) - D/2)
// where s^2 = e^beta. The beta score is d/dbeta log N(x | mu, e^beta I).

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "pgrad/estimators.hpp"
#include "pgrad/objective.hpp"
#include "pgrad/optimizer.hpp"

namespace pgrad {

enum class VarianceReduction { None, Antithetic, Baseline };

std::string_view to_string(VarianceReduction vr);
VarianceReduction parse_variance_reduction(std::string_view name);

/// Smallest standard deviation used when e^beta underflows.
inline constexpr double kMinSigma = 1e-8;

struct VariationalState {
  Vector mu;
  double beta = 0.0;  // log variance
  bool learn_sigma = false;

  static VariationalState from_sigma(Vector mu, double sigma, bool learn_sigma);

  /// sqrt(e^beta), floored at kMinSigma so sigma^2 stays positive.
  double sigma() const;
};

/// (1/S) sum_n f(mu + sigma z^n) with z^n from sample_batch(..., master_seed).
double upper_bound_estimate(const Objective& obj, const VariationalState& state,
                            std::size_t samples, std::uint64_t master_seed);

struct SvoGradient {
  Vector mu;
  double beta = 0.0;
  /// Mean of the perturbed evaluations consumed by this step.
  double upper_bound = 0.0;
  std::size_t f_evals = 0;
};

/// None: plain score-function gradient.
/// Antithetic: mirrored pairs for mu; the beta score is even in e, so beta uses
///   the pair mean minus f(mu) as its baseline.
/// Baseline: f(mu) subtracted from every evaluation for both components.
SvoGradient svo_gradient(const Objective& obj, const VariationalState& state, std::size_t samples,
                         std::uint64_t master_seed, VarianceReduction vr,
                         const ExecutionOptions& exec = {});

struct TrajectoryPoint {
  std::size_t step = 0;
  Vector mu;
  double sigma = 0.0;
  double upper_bound = 0.0;
  double f_mu = 0.0;
};

struct SvoTrajectory {
  std::vector<TrajectoryPoint> points;
  bool aborted = false;
  std::string diagnostic;

  const TrajectoryPoint& final_point() const { return points.back(); }
};

/// Runs `steps` optimizer updates. Step t draws with seed derive_seed(master_seed, t).
/// Returns steps + 1 points (the last is the state after the final update).
/// A non-finite loss, gradient or sigma stops the run with `aborted` set.
SvoTrajectory svo_run(const Objective& obj, VariationalState init, OptimizerState optimizer,
                      std::size_t samples, std::size_t steps, std::uint64_t master_seed,
                      VarianceReduction vr, const ExecutionOptions& exec = {});

/// "step,mu_0,...,mu_{D-1},sigma,U_est,f_mu"
std::string trajectory_csv_header(std::size_t dim);
std::string to_csv(const TrajectoryPoint& point);

}  // namespace pgrad
