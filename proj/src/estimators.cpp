#include "pgrad/estimators.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "json.hpp"
#include "pgrad/parallel.hpp"
#include "pgrad/rng.hpp"

namespace pgrad {

std::string_view to_string(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::GP: return "GP";
    case EstimatorKind::GP_AS: return "GP_AS";
    case EstimatorKind::GP_Baseline: return "GP_Baseline";
    case EstimatorKind::SPSA: return "SPSA";
    case EstimatorKind::DD: return "DD";
  }
  return "?";
}

std::string_view to_string(Distribution dist) {
  return dist == Distribution::GaussianIsotropic ? "gaussian" : "bernoulli";
}

EstimatorKind parse_estimator(std::string_view name) {
  for (EstimatorKind k : {EstimatorKind::GP, EstimatorKind::GP_AS, EstimatorKind::GP_Baseline,
                          EstimatorKind::SPSA, EstimatorKind::DD}) {
    if (name == to_string(k)) return k;
  }
  throw ArgumentError("unknown estimator '" + std::string(name) + "'");
}

Distribution distribution_for(EstimatorKind kind) {
  return kind == EstimatorKind::SPSA ? Distribution::SymmetricBernoulli
                                     : Distribution::GaussianIsotropic;
}

std::size_t payload_width(EstimatorKind kind) {
  return (kind == EstimatorKind::GP_AS || kind == EstimatorKind::SPSA) ? 2 : 1;
}

std::size_t evaluations_per_sample(EstimatorKind kind) {
  // A dual evaluation costs roughly two plain ones.
  return kind == EstimatorKind::GP || kind == EstimatorKind::GP_Baseline ? 1 : 2;
}

// ---------------------------------------------------------------------------

std::uint64_t sample_seed(std::uint64_t master_seed, std::size_t n) {
  return derive_seed(master_seed, n);
}

void regenerate_sample(std::uint64_t seed, double sigma, Distribution dist, std::span<double> out) {
  SampleStream stream(seed);
  if (dist == Distribution::GaussianIsotropic) {
    for (double& e : out) e = sigma * stream.next_normal();
  } else {
    for (double& e : out) e = stream.next_bit() ? sigma : -sigma;
  }
}

Vector regenerate_sample(std::uint64_t seed, std::size_t dim, double sigma, Distribution dist) {
  Vector out(dim);
  regenerate_sample(seed, sigma, dist, out);
  return out;
}

PerturbationBatch::PerturbationBatch(std::size_t dim, double sigma, Distribution dist,
                                     std::uint64_t master_seed, std::vector<std::uint64_t> seeds)
    : dim_(dim), sigma_(sigma), dist_(dist), master_seed_(master_seed), seeds_(std::move(seeds)) {
  if (dim_ == 0) throw ArgumentError("perturbation dimension must be positive");
  if (seeds_.empty()) throw ArgumentError("perturbation batch needs at least one sample");
  if (!(sigma_ > 0.0) || !std::isfinite(sigma_)) {
    throw ArgumentError("sigma must be positive and finite");
  }
  samples_.resize(seeds_.size() * dim_);
  for (std::size_t n = 0; n < seeds_.size(); ++n) {
    regenerate_sample(seeds_[n], sigma_, dist_, {samples_.data() + n * dim_, dim_});
  }
}

PerturbationBatch PerturbationBatch::from_samples(std::size_t dim, double sigma, Distribution dist,
                                                  Vector samples) {
  if (dim == 0) throw ArgumentError("perturbation dimension must be positive");
  if (samples.empty() || samples.size() % dim != 0) {
    throw ArgumentError("explicit samples must be a nonempty multiple of the dimension");
  }
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ArgumentError("sigma must be positive and finite");
  PerturbationBatch b;
  b.dim_ = dim;
  b.sigma_ = sigma;
  b.dist_ = dist;
  b.samples_ = std::move(samples);
  return b;
}

PerturbationBatch sample_batch(std::size_t dim, std::size_t samples, double sigma,
                               Distribution dist, std::uint64_t master_seed) {
  if (samples == 0) throw ArgumentError("sample count must be at least 1");
  std::vector<std::uint64_t> seeds(samples);
  for (std::size_t n = 0; n < samples; ++n) seeds[n] = sample_seed(master_seed, n);
  return PerturbationBatch(dim, sigma, dist, master_seed, std::move(seeds));
}

// ---------------------------------------------------------------------------

std::string to_jsonl(const GradientEstimate& e) {
  nlohmann::json j;
  j["estimator"] = to_string(e.estimator);
  j["S"] = e.samples;
  j["sigma"] = e.sigma;
  j["seed"] = e.seed;
  j["g_hat"] = e.g_hat;
  j["evals"] = e.evals;
  return j.dump();
}

BaselineState::BaselineState(BaselineMode mode, std::size_t window) : mode_(mode), window_(window) {
  if (window_ == 0) throw ArgumentError("baseline window must be positive");
}

std::span<const double> BaselineState::history() const noexcept { return history_; }

void BaselineState::record(double loss) {
  if (mode_ == BaselineMode::CurrentValue) return;
  history_.push_back(loss);
  if (history_.size() > window_) history_.erase(history_.begin());
}

std::optional<double> BaselineState::moving_average() const {
  if (mode_ == BaselineMode::CurrentValue || history_.empty()) return std::nullopt;
  double s = 0.0;
  for (double h : history_) s += h;
  return s / static_cast<double>(history_.size());
}

// ---------------------------------------------------------------------------

double sample_weight(EstimatorKind kind, std::span<const double> payload, double baseline) {
  switch (kind) {
    case EstimatorKind::GP:
    case EstimatorKind::DD:
      return payload[0];
    case EstimatorKind::GP_Baseline:
      return payload[0] - baseline;
    case EstimatorKind::GP_AS:
    case EstimatorKind::SPSA:
      return payload[0] - payload[1];
  }
  return 0.0;
}

namespace {

struct TreeReducer {
  EstimatorKind kind;
  const PerturbationBatch& batch;
  std::span<const std::size_t> ids;
  std::span<const double> weights;

  void leaf(std::size_t k, std::span<double> out) const {
    const std::span<const double> e = batch.sample(ids[k]);
    const double w = weights[k];
    if (kind == EstimatorKind::SPSA) {
      for (std::size_t i = 0; i < e.size(); ++i) out[i] = w * (1.0 / e[i]);
    } else {
      for (std::size_t i = 0; i < e.size(); ++i) out[i] = w * e[i];
    }
  }

  void sum(std::size_t lo, std::size_t hi, std::span<double> out) const {
    if (hi - lo == 1) {
      leaf(lo, out);
      return;
    }
    const std::size_t mid = lo + (hi - lo) / 2;
    sum(lo, mid, out);
    Vector right(out.size());
    sum(mid, hi, right);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += right[i];
  }
};

}  // namespace

Vector assemble_gradient(EstimatorKind kind, const PerturbationBatch& batch,
                         std::span<const std::size_t> sample_ids,
                         std::span<const double> weights) {
  if (sample_ids.empty()) throw ArgumentError("cannot assemble a gradient from zero samples");
  if (sample_ids.size() != weights.size()) {
    throw ArgumentError("sample ids and weights differ in length");
  }
  for (std::size_t id : sample_ids) {
    if (id >= batch.size()) throw ArgumentError("sample id outside the batch");
  }
  Vector g(batch.dim());
  TreeReducer{kind, batch, sample_ids, weights}.sum(0, sample_ids.size(), g);

  const double count = static_cast<double>(sample_ids.size());
  const double s2 = batch.sigma() * batch.sigma();
  double denom = 0.0;
  switch (kind) {
    case EstimatorKind::GP:
    case EstimatorKind::GP_Baseline:
    case EstimatorKind::DD:
      denom = count * s2;
      break;
    case EstimatorKind::GP_AS:
      denom = 2.0 * count * s2;
      break;
    case EstimatorKind::SPSA:
      denom = 2.0 * count;
      break;
  }
  for (double& gi : g) gi /= denom;
  return g;
}

namespace {

void require_distribution(const PerturbationBatch& batch, EstimatorKind kind) {
  if (batch.distribution() != distribution_for(kind)) {
    throw InvalidDistributionError(
        std::string(to_string(kind)) + " requires a " +
        std::string(to_string(distribution_for(kind))) + " batch" +
        (kind == EstimatorKind::SPSA ? " (inverse perturbations must be bounded)" : ""));
  }
}

Vector shifted(std::span<const double> x, std::span<const double> e, double sign) {
  Vector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + sign * e[i];
  return out;
}

std::vector<std::size_t> all_ids(std::size_t n) {
  std::vector<std::size_t> ids(n);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  return ids;
}

GradientEstimate finish(EstimatorKind kind, const PerturbationBatch& batch, Vector evals,
                        std::optional<double> baseline, std::size_t f_evals) {
  const std::size_t width = payload_width(kind);
  const std::size_t s = batch.size();
  Vector weights(s);
  for (std::size_t n = 0; n < s; ++n) {
    weights[n] = sample_weight(kind, {evals.data() + n * width, width}, baseline.value_or(0.0));
  }
  const auto ids = all_ids(s);
  GradientEstimate out;
  out.g_hat = assemble_gradient(kind, batch, ids, weights);
  out.estimator = kind;
  out.samples = s;
  out.sigma = batch.sigma();
  out.seed = batch.master_seed();
  out.evals = std::move(evals);
  out.f_evals_count = f_evals;
  out.baseline = baseline;
  return out;
}

Vector forward_evals(const Objective& obj, std::span<const double> x,
                     const PerturbationBatch& batch, const ExecutionOptions& exec) {
  Vector evals(batch.size());
  parallel_for(batch.size(), exec.threads, [&](std::size_t n) {
    evals[n] = obj.eval(shifted(x, batch.sample(n), 1.0));
  });
  return evals;
}

Vector mirrored_evals(const Objective& obj, std::span<const double> x,
                      const PerturbationBatch& batch, const ExecutionOptions& exec) {
  Vector evals(2 * batch.size());
  parallel_for(batch.size(), exec.threads, [&](std::size_t n) {
    evals[2 * n] = obj.eval(shifted(x, batch.sample(n), 1.0));
    evals[2 * n + 1] = obj.eval(shifted(x, batch.sample(n), -1.0));
  });
  return evals;
}

void check_inputs(const Objective& obj, std::span<const double> x, const PerturbationBatch& batch) {
  require_dim(x, obj.dim(), "estimator point");
  if (batch.dim() != obj.dim()) {
    throw ArgumentError("perturbation dimension " + std::to_string(batch.dim()) +
                        " does not match objective dimension " + std::to_string(obj.dim()));
  }
}

}  // namespace

GradientEstimate estimate_gp(const Objective& obj, std::span<const double> x,
                             const PerturbationBatch& batch, const ExecutionOptions& exec) {
  check_inputs(obj, x, batch);
  require_distribution(batch, EstimatorKind::GP);
  return finish(EstimatorKind::GP, batch, forward_evals(obj, x, batch, exec), std::nullopt,
                batch.size());
}

GradientEstimate estimate_gp_antithetic(const Objective& obj, std::span<const double> x,
                                        const PerturbationBatch& batch,
                                        const ExecutionOptions& exec) {
  check_inputs(obj, x, batch);
  require_distribution(batch, EstimatorKind::GP_AS);
  return finish(EstimatorKind::GP_AS, batch, mirrored_evals(obj, x, batch, exec), std::nullopt,
                2 * batch.size());
}

GradientEstimate estimate_gp_baseline(const Objective& obj, std::span<const double> x,
                                      const PerturbationBatch& batch, BaselineState& baseline,
                                      const ExecutionOptions& exec) {
  check_inputs(obj, x, batch);
  require_distribution(batch, EstimatorKind::GP_Baseline);
  Vector evals = forward_evals(obj, x, batch, exec);
  double mean = 0.0;
  for (double v : evals) mean += v;
  mean /= static_cast<double>(evals.size());

  double b = 0.0;
  std::size_t count = batch.size();
  if (baseline.mode() == BaselineMode::CurrentValue) {
    b = obj.eval(x);
    count += 1;
  } else {
    b = baseline.moving_average().value_or(mean);
  }
  baseline.record(mean);
  return finish(EstimatorKind::GP_Baseline, batch, std::move(evals), b, count);
}

GradientEstimate estimate_spsa(const Objective& obj, std::span<const double> x,
                               const PerturbationBatch& batch, const ExecutionOptions& exec) {
  check_inputs(obj, x, batch);
  require_distribution(batch, EstimatorKind::SPSA);
  return finish(EstimatorKind::SPSA, batch, mirrored_evals(obj, x, batch, exec), std::nullopt,
                2 * batch.size());
}

GradientEstimate estimate_dd(const Objective& obj, std::span<const double> x,
                             const PerturbationBatch& batch, const ExecutionOptions& exec) {
  check_inputs(obj, x, batch);
  require_distribution(batch, EstimatorKind::DD);
  if (!obj.supports(Capability::DualEvaluation)) {
    throw CapabilityError("DD estimator needs an objective with dual evaluation");
  }
  Vector derivs(batch.size());
  parallel_for(batch.size(), exec.threads, [&](std::size_t n) {
    derivs[n] = obj.eval_dual(x, batch.sample(n)).tangent;
  });
  return finish(EstimatorKind::DD, batch, std::move(derivs), std::nullopt, batch.size());
}

GradientEstimate estimate(EstimatorKind kind, const Objective& obj, std::span<const double> x,
                          const PerturbationBatch& batch, const ExecutionOptions& exec) {
  switch (kind) {
    case EstimatorKind::GP: return estimate_gp(obj, x, batch, exec);
    case EstimatorKind::GP_AS: return estimate_gp_antithetic(obj, x, batch, exec);
    case EstimatorKind::GP_Baseline: {
      BaselineState baseline;
      return estimate_gp_baseline(obj, x, batch, baseline, exec);
    }
    case EstimatorKind::SPSA: return estimate_spsa(obj, x, batch, exec);
    case EstimatorKind::DD: return estimate_dd(obj, x, batch, exec);
  }
  throw ArgumentError("unknown estimator kind");
}

}  // namespace pgrad
