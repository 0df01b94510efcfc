#include "pgrad/svo.hpp"

#include <cmath>
#include <string>

#include "pgrad/csv.hpp"
#include "pgrad/rng.hpp"

namespace pgrad {

std::string_view to_string(VarianceReduction vr) {
  switch (vr) {
    case VarianceReduction::None: return "none";
    case VarianceReduction::Antithetic: return "antithetic";
    case VarianceReduction::Baseline: return "baseline";
  }
  return "?";
}

VarianceReduction parse_variance_reduction(std::string_view name) {
  for (VarianceReduction vr :
       {VarianceReduction::None, VarianceReduction::Antithetic, VarianceReduction::Baseline}) {
    if (name == to_string(vr)) return vr;
  }
  throw ArgumentError("unknown variance reduction '" + std::string(name) + "'");
}

VariationalState VariationalState::from_sigma(Vector mu, double sigma, bool learn_sigma) {
  if (!(sigma > 0.0)) throw ArgumentError("initial sigma must be positive");
  return {std::move(mu), 2.0 * std::log(sigma), learn_sigma};
}

double VariationalState::sigma() const {
  const double s = std::exp(0.5 * beta);
  return s > kMinSigma ? s : kMinSigma;
}

double upper_bound_estimate(const Objective& obj, const VariationalState& state,
                            std::size_t samples, std::uint64_t master_seed) {
  require_dim(state.mu, obj.dim(), "variational mean");
  const PerturbationBatch batch = sample_batch(obj.dim(), samples, state.sigma(),
                                               Distribution::GaussianIsotropic, master_seed);
  Vector point(obj.dim());
  double total = 0.0;
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const auto e = batch.sample(n);
    for (std::size_t i = 0; i < point.size(); ++i) point[i] = state.mu[i] + e[i];
    total += obj.eval(point);
  }
  return total / static_cast<double>(batch.size());
}

namespace {

/// |e|^2 / (2 s^2) - D/2
double beta_score(std::span<const double> e, double sigma) {
  double sq = 0.0;
  for (double v : e) sq += v * v;
  return sq / (2.0 * sigma * sigma) - 0.5 * static_cast<double>(e.size());
}

double mean(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

SvoGradient svo_gradient(const Objective& obj, const VariationalState& state, std::size_t samples,
                         std::uint64_t master_seed, VarianceReduction vr,
                         const ExecutionOptions& exec) {
  require_dim(state.mu, obj.dim(), "variational mean");
  const double sigma = state.sigma();
  const PerturbationBatch batch =
      sample_batch(obj.dim(), samples, sigma, Distribution::GaussianIsotropic, master_seed);
  const double s = static_cast<double>(batch.size());

  SvoGradient out;
  double beta_sum = 0.0;
  switch (vr) {
    case VarianceReduction::None: {
      GradientEstimate est = estimate_gp(obj, state.mu, batch, exec);
      for (std::size_t n = 0; n < batch.size(); ++n) {
        beta_sum += est.evals[n] * beta_score(batch.sample(n), sigma);
      }
      out.mu = std::move(est.g_hat);
      out.beta = beta_sum / s;
      out.upper_bound = mean(est.evals);
      out.f_evals = est.f_evals_count;
      break;
    }
    case VarianceReduction::Antithetic: {
      GradientEstimate est = estimate_gp_antithetic(obj, state.mu, batch, exec);
      const double center = obj.eval(state.mu);
      for (std::size_t n = 0; n < batch.size(); ++n) {
        const double pair = est.evals[2 * n] + est.evals[2 * n + 1] - 2.0 * center;
        beta_sum += pair * beta_score(batch.sample(n), sigma);
      }
      out.mu = std::move(est.g_hat);
      out.beta = beta_sum / (2.0 * s);
      out.upper_bound = mean(est.evals);
      out.f_evals = est.f_evals_count + 1;
      break;
    }
    case VarianceReduction::Baseline: {
      BaselineState baseline(BaselineMode::CurrentValue);
      GradientEstimate est = estimate_gp_baseline(obj, state.mu, batch, baseline, exec);
      const double b = *est.baseline;
      for (std::size_t n = 0; n < batch.size(); ++n) {
        beta_sum += (est.evals[n] - b) * beta_score(batch.sample(n), sigma);
      }
      out.mu = std::move(est.g_hat);
      out.beta = beta_sum / s;
      out.upper_bound = mean(est.evals);
      out.f_evals = est.f_evals_count;
      break;
    }
  }
  return out;
}

namespace {

bool all_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace

SvoTrajectory svo_run(const Objective& obj, VariationalState state, OptimizerState optimizer,
                      std::size_t samples, std::size_t steps, std::uint64_t master_seed,
                      VarianceReduction vr, const ExecutionOptions& exec) {
  if (steps == 0) throw ArgumentError("svo_run needs at least one step");
  require_dim(state.mu, obj.dim(), "variational mean");
  const std::size_t dim = obj.dim();

  SvoTrajectory traj;
  traj.points.reserve(steps + 1);
  Vector params(state.learn_sigma ? dim + 1 : dim);
  Vector grad(params.size());

  auto abort_run = [&](std::size_t step, const std::string& why) {
    traj.aborted = true;
    traj.diagnostic = "step " + std::to_string(step) + ": " + why;
  };

  for (std::size_t t = 0; t <= steps; ++t) {
    const double sigma = state.sigma();
    if (!std::isfinite(sigma)) {
      abort_run(t, "sigma is not finite (beta = " + format_number(state.beta) + ")");
      break;
    }
    const double f_mu = obj.eval(state.mu);
    const std::uint64_t seed = derive_seed(master_seed, t);

    if (t == steps) {
      traj.points.push_back({t, state.mu, sigma, upper_bound_estimate(obj, state, samples, seed),
                             f_mu});
      break;
    }

    const SvoGradient g = svo_gradient(obj, state, samples, seed, vr, exec);
    traj.points.push_back({t, state.mu, sigma, g.upper_bound, f_mu});
    if (!std::isfinite(f_mu) || !std::isfinite(g.upper_bound)) {
      abort_run(t, "non-finite loss");
      break;
    }
    if (!all_finite(g.mu) || !std::isfinite(g.beta)) {
      abort_run(t, "non-finite gradient");
      break;
    }

    std::copy(state.mu.begin(), state.mu.end(), params.begin());
    std::copy(g.mu.begin(), g.mu.end(), grad.begin());
    if (state.learn_sigma) {
      params[dim] = state.beta;
      grad[dim] = g.beta;
    }
    optimizer.step(params, grad);
    std::copy(params.begin(), params.begin() + static_cast<std::ptrdiff_t>(dim), state.mu.begin());
    if (state.learn_sigma) state.beta = params[dim];
  }
  return traj;
}

std::string trajectory_csv_header(std::size_t dim) {
  CsvRow row;
  row.add("step");
  for (std::size_t i = 0; i < dim; ++i) row.add("mu_" + std::to_string(i));
  row.add("sigma").add("U_est").add("f_mu");
  return row.str();
}

std::string to_csv(const TrajectoryPoint& p) {
  CsvRow row;
  row.add(p.step);
  for (double m : p.mu) row.add(m);
  row.add(p.sigma).add(p.upper_bound).add(p.f_mu);
  return row.str();
}

}  // namespace pgrad
