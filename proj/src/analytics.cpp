#include "pgrad/analytics.hpp"

#include <cmath>
#include <limits>

#include "pgrad/csv.hpp"
#include "pgrad/parallel.hpp"
#include "pgrad/rng.hpp"

namespace pgrad {

Vector curly_h(std::span<const double> h) {
  double total = 0.0, total_sq = 0.0;
  for (double v : h) {
    total += v;
    total_sq += v * v;
  }
  Vector out(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double hi = h[i];
    const double rest = total - hi;
    const double rest_sq = total_sq - hi * hi;
    const double distinct_pairs = rest * rest - rest_sq;
    out[i] = 15.0 * hi * hi + 6.0 * hi * rest + 3.0 * rest_sq + distinct_pairs;
  }
  return out;
}

double quadratic_curly_h_squared_sum(std::size_t dim) {
  const double d = static_cast<double>(dim);
  return (7.0 + 7.0 * d + d * d) / (d * d);
}

Vector gp_variance(double f, std::span<const double> g, std::span<const double> hdiag,
                   double trace, std::span<const double> ch, std::span<const double> cj,
                   double sigma, std::size_t samples) {
  double grad_sq = 0.0;
  for (double gi : g) grad_sq += gi * gi;
  const double s2 = sigma * sigma;
  const double inv_s = 1.0 / static_cast<double>(samples);
  Vector var(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    var[i] = inv_s * (f * f / s2 + grad_sq + g[i] * g[i] + f * (trace + 2.0 * hdiag[i]) +
                      s2 * (ch[i] / 4.0 + cj[i]));
  }
  return var;
}

double gp_variance_large_dim(double f, double mean_sq_grad, double mean_hessian, std::size_t dim,
                             double curly_h_i, double curly_j_i, double sigma,
                             std::size_t samples) {
  const double d = static_cast<double>(dim);
  const double s2 = sigma * sigma;
  return (f * f / s2 + d * mean_sq_grad + d * f * mean_hessian +
          s2 * (curly_h_i / 4.0 + curly_j_i)) /
         static_cast<double>(samples);
}

double quadratic_gp_variance_large_dim(double f, double sigma, std::size_t samples) {
  const double s2 = sigma * sigma;
  return (f * f / s2 + f + s2 / 4.0) / static_cast<double>(samples);
}

namespace {

void require(const Objective& obj, std::initializer_list<Capability> caps) {
  for (Capability c : caps) {
    if (!obj.supports(c)) {
      throw CapabilityError("analytic prediction needs gradient, Hessian and third-derivative data");
    }
  }
}

void check_args(const Objective& obj, std::span<const double> x, std::size_t samples) {
  require_dim(x, obj.dim(), "analytic point");
  if (samples == 0) throw ArgumentError("sample count must be at least 1");
}

ExpansionOrder order_for(const Objective& obj) {
  const int degree = obj.polynomial_degree();
  return (degree >= 0 && degree <= 2) ? ExpansionOrder::Exact : ExpansionOrder::SigmaSquared;
}

double sum_sq(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

Vector scaled(std::span<const double> v, double s) {
  Vector out(v.begin(), v.end());
  for (double& x : out) x *= s;
  return out;
}

}  // namespace

AnalyticMoments analytic_gp(const Objective& obj, std::span<const double> x, double sigma,
                            std::size_t samples) {
  check_args(obj, x, samples);
  require(obj, {Capability::Gradient, Capability::HessianDiagonal, Capability::HessianTrace,
                Capability::ThirdDerivativeContractions});
  const double f = obj.eval(x);
  const Vector g = obj.gradient(x);
  const Vector h = obj.hessian_diagonal(x);
  const double trace = obj.hessian_trace(x);
  const ThirdDerivativeContractions third = obj.third_derivative_contractions(x);
  AnalyticMoments m;
  m.estimator = EstimatorKind::GP;
  m.bias = scaled(third.curly_i, sigma * sigma);
  m.variance = gp_variance(f, g, h, trace, curly_h(h), third.curly_j, sigma, samples);
  m.order = order_for(obj);
  m.diagonal_hessian_assumed = true;
  return m;
}

AnalyticMoments analytic_gp_as(const Objective& obj, std::span<const double> x, double sigma,
                               std::size_t samples) {
  check_args(obj, x, samples);
  require(obj, {Capability::Gradient, Capability::ThirdDerivativeContractions});
  const Vector g = obj.gradient(x);
  const ThirdDerivativeContractions third = obj.third_derivative_contractions(x);
  const double grad_sq = sum_sq(g);
  const double s2 = sigma * sigma;
  AnalyticMoments m;
  m.estimator = EstimatorKind::GP_AS;
  m.bias = scaled(third.curly_i, s2);
  m.variance.resize(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    m.variance[i] = (grad_sq + g[i] * g[i] + s2 * third.curly_j[i]) / static_cast<double>(samples);
  }
  m.order = order_for(obj);
  return m;
}

AnalyticMoments analytic_spsa(const Objective& obj, std::span<const double> x, double sigma,
                              std::size_t samples) {
  check_args(obj, x, samples);
  require(obj, {Capability::Gradient, Capability::ThirdDerivativeContractions});
  const Vector g = obj.gradient(x);
  const ThirdDerivativeContractions third = obj.third_derivative_contractions(x);
  const double grad_sq = sum_sq(g);
  AnalyticMoments m;
  m.estimator = EstimatorKind::SPSA;
  m.bias = scaled(third.curly_i, sigma * sigma);
  m.variance.resize(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    m.variance[i] = (grad_sq - g[i] * g[i]) / static_cast<double>(samples);
  }
  m.order = order_for(obj);
  m.sigma_squared_term_omitted = obj.polynomial_degree() < 0 || obj.polynomial_degree() > 2;
  return m;
}

AnalyticMoments analytic_dd(const Objective& obj, std::span<const double> x, std::size_t samples) {
  check_args(obj, x, samples);
  require(obj, {Capability::Gradient});
  const Vector g = obj.gradient(x);
  const double grad_sq = sum_sq(g);
  AnalyticMoments m;
  m.estimator = EstimatorKind::DD;
  m.bias.assign(g.size(), 0.0);
  m.variance.resize(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    m.variance[i] = (g[i] * g[i] + grad_sq) / static_cast<double>(samples);
  }
  m.order = ExpansionOrder::Exact;
  return m;
}

std::optional<AnalyticMoments> analytic_moments(EstimatorKind kind, const Objective& obj,
                                                std::span<const double> x, double sigma,
                                                std::size_t samples) {
  switch (kind) {
    case EstimatorKind::GP: return analytic_gp(obj, x, sigma, samples);
    case EstimatorKind::GP_AS: return analytic_gp_as(obj, x, sigma, samples);
    case EstimatorKind::SPSA: return analytic_spsa(obj, x, sigma, samples);
    case EstimatorKind::DD: return analytic_dd(obj, x, samples);
    case EstimatorKind::GP_Baseline: return std::nullopt;
  }
  return std::nullopt;
}

ThirdDerivativeContractions fd_third_derivative_contractions(const Objective& obj,
                                                             std::span<const double> x,
                                                             double step) {
  require_dim(x, obj.dim(), "finite-difference contractions");
  require(obj, {Capability::Gradient, Capability::HessianDiagonal, Capability::HessianTrace});
  const std::size_t n = obj.dim();
  const Vector g = obj.gradient(x);
  Vector probe(x.begin(), x.end());

  Vector ci(n);
  for (std::size_t i = 0; i < n; ++i) {
    probe[i] = x[i] + step;
    const double up = obj.hessian_trace(probe);
    probe[i] = x[i] - step;
    const double down = obj.hessian_trace(probe);
    probe[i] = x[i];
    ci[i] = 0.5 * (up - down) / (2.0 * step);
  }

  // D_g H_ii: derivative of the Hessian diagonal along g.
  for (std::size_t i = 0; i < n; ++i) probe[i] = x[i] + step * g[i];
  const Vector h_up = obj.hessian_diagonal(probe);
  for (std::size_t i = 0; i < n; ++i) probe[i] = x[i] - step * g[i];
  const Vector h_down = obj.hessian_diagonal(probe);

  double g_dot_ci = 0.0;
  for (std::size_t i = 0; i < n; ++i) g_dot_ci += g[i] * ci[i];

  Vector cj(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double along_g = (h_up[i] - h_down[i]) / (2.0 * step);
    cj[i] = 2.0 * along_g + 2.0 * g_dot_ci + 2.0 * g[i] * ci[i];
  }
  return {std::move(ci), std::move(cj)};
}

// ---------------------------------------------------------------------------

MomentAccumulator::MomentAccumulator(std::size_t dim) : mean_(dim, 0.0), m2_(dim, 0.0) {}

void MomentAccumulator::add(std::span<const double> estimate, std::span<const double> truth) {
  ++count_;
  const double n = static_cast<double>(count_);
  for (std::size_t i = 0; i < mean_.size(); ++i) {
    const double delta = estimate[i] - mean_[i];
    mean_[i] += delta / n;
    m2_[i] += delta * (estimate[i] - mean_[i]);
    const double err = estimate[i] - truth[i];
    squared_error_ += err * err;
  }
}

void MomentAccumulator::merge(const MomentAccumulator& other) {
  if (other.count_ == 0) return;
  if (count_ == 0) {
    *this = other;
    return;
  }
  const double na = static_cast<double>(count_);
  const double nb = static_cast<double>(other.count_);
  const double n = na + nb;
  for (std::size_t i = 0; i < mean_.size(); ++i) {
    const double delta = other.mean_[i] - mean_[i];
    mean_[i] += delta * nb / n;
    m2_[i] += other.m2_[i] + delta * delta * na * nb / n;
  }
  squared_error_ += other.squared_error_;
  count_ += other.count_;
}

EmpiricalMoments MomentAccumulator::finish() const {
  EmpiricalMoments out;
  out.trials = count_;
  out.mean = mean_;
  out.variance.resize(mean_.size());
  out.std_error.resize(mean_.size());
  const double n = static_cast<double>(count_);
  for (std::size_t i = 0; i < mean_.size(); ++i) {
    out.variance[i] = count_ > 1 ? m2_[i] / (n - 1.0) : 0.0;
    out.std_error[i] = std::sqrt(out.variance[i] / n);
  }
  const double cells = n * static_cast<double>(mean_.size());
  out.rmse_vs_true = cells > 0 ? std::sqrt(squared_error_ / cells) : 0.0;
  return out;
}

namespace {

constexpr std::size_t kTrialChunk = 256;

MomentAccumulator merge_tree(std::vector<MomentAccumulator>& parts, std::size_t lo,
                             std::size_t hi) {
  if (hi - lo == 1) return parts[lo];
  const std::size_t mid = lo + (hi - lo) / 2;
  MomentAccumulator left = merge_tree(parts, lo, mid);
  left.merge(merge_tree(parts, mid, hi));
  return left;
}

}  // namespace

EmpiricalMoments measure_empirical(const Objective& obj, std::span<const double> x,
                                   EstimatorKind kind, double sigma, std::size_t samples,
                                   std::size_t trials, std::uint64_t master_seed,
                                   const ExecutionOptions& exec) {
  if (trials < 2) throw ArgumentError("measure_empirical needs at least 2 trials");
  require_dim(x, obj.dim(), "measure_empirical point");
  if (!obj.supports(Capability::Gradient)) {
    throw CapabilityError("measure_empirical needs the true gradient");
  }
  const Vector truth = obj.gradient(x);
  const Distribution dist = distribution_for(kind);
  const std::size_t chunks = (trials + kTrialChunk - 1) / kTrialChunk;
  std::vector<MomentAccumulator> parts(chunks, MomentAccumulator(obj.dim()));

  parallel_for(chunks, exec.threads, [&](std::size_t c) {
    const std::size_t end = std::min(trials, (c + 1) * kTrialChunk);
    for (std::size_t t = c * kTrialChunk; t < end; ++t) {
      const PerturbationBatch batch =
          sample_batch(obj.dim(), samples, sigma, dist, derive_seed(master_seed, t));
      const GradientEstimate est = estimate(kind, obj, x, batch);
      parts[c].add(est.g_hat, truth);
    }
  });
  return merge_tree(parts, 0, parts.size()).finish();
}

// ---------------------------------------------------------------------------

double analytic_rmse(const AnalyticMoments& m) {
  double s = 0.0;
  for (std::size_t i = 0; i < m.variance.size(); ++i) s += m.variance[i] + m.bias[i] * m.bias[i];
  return std::sqrt(s / static_cast<double>(m.variance.size()));
}

std::string to_csv(const MomentsRow& r) {
  CsvRow row;
  row.add(r.estimator)
      .add(r.sigma)
      .add(r.samples)
      .add(r.dim)
      .add(r.trials)
      .add(r.rmse_empirical)
      .add(r.rmse_analytic)
      .add(r.bias_norm_empirical)
      .add(r.bias_norm_analytic)
      .add(r.var_mean_empirical)
      .add(r.var_mean_analytic);
  return row.str();
}

MomentsRow make_moments_row(EstimatorKind kind, double sigma, std::size_t samples,
                            std::span<const double> truth, const EmpiricalMoments& empirical,
                            const std::optional<AnalyticMoments>& analytic) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const double d = static_cast<double>(truth.size());
  MomentsRow row;
  row.estimator = std::string(to_string(kind));
  row.sigma = sigma;
  row.samples = samples;
  row.dim = truth.size();
  row.trials = empirical.trials;
  row.rmse_empirical = empirical.rmse_vs_true;

  double bias_sq = 0.0, var_sum = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double b = empirical.mean[i] - truth[i];
    bias_sq += b * b;
    var_sum += empirical.variance[i];
  }
  row.bias_norm_empirical = std::sqrt(bias_sq);
  row.var_mean_empirical = var_sum / d;

  if (analytic) {
    row.rmse_analytic = analytic_rmse(*analytic);
    double abias = 0.0, avar = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      abias += analytic->bias[i] * analytic->bias[i];
      avar += analytic->variance[i];
    }
    row.bias_norm_analytic = std::sqrt(abias);
    row.var_mean_analytic = avar / d;
  } else {
    row.rmse_analytic = row.bias_norm_analytic = row.var_mean_analytic = nan;
  }
  return row;
}

}  // namespace pgrad
