#pragma once

// Zeroth- and first-order gradient estimators over seeded perturbation batches.
//
//   GP           g = 1/(S s^2)  sum_n e^n f(x+e^n)
//   GP_AS        g = 1/(2S s^2) sum_n e^n (f(x+e^n) - f(x-e^n))
//   GP_Baseline  g = 1/(S s^2)  sum_n e^n (f(x+e^n) - b)
//   SPSA         g = 1/(2S)     sum_n (e^n)^-1 (f(x+e^n) - f(x-e^n))   (elementwise inverse)
//   DD           g = 1/(S s^2)  sum_n e^n D_{e^n} f(x)
//
// Every estimator reduces its per-sample contributions with the same fixed
// pairwise tree (ascending sample index, split at the midpoint), so results are
// bit-identical for any thread count, and the seed-sharing replicas can rebuild
// them from scalar payloads alone.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pgrad/objective.hpp"

namespace pgrad {

enum class Distribution { GaussianIsotropic, SymmetricBernoulli };

enum class EstimatorKind { GP, GP_AS, GP_Baseline, SPSA, DD };

std::string_view to_string(EstimatorKind kind);
std::string_view to_string(Distribution dist);
/// Throws ArgumentError for unknown names.
EstimatorKind parse_estimator(std::string_view name);

/// The perturbation distribution an estimator consumes.
Distribution distribution_for(EstimatorKind kind);

/// Scalars each sample contributes to the protocol payload (1 or 2).
std::size_t payload_width(EstimatorKind kind);

/// Objective evaluations spent per sample (DD counts one dual evaluation).
std::size_t evaluations_per_sample(EstimatorKind kind);

/// S perturbations of dimension D. sample(n) is a pure function of seeds[n].
class PerturbationBatch {
 public:
  PerturbationBatch(std::size_t dim, double sigma, Distribution dist, std::uint64_t master_seed,
                    std::vector<std::uint64_t> seeds);

  /// Fixed perturbations given row by row (no seeds; cannot be replayed from a
  /// master seed). For hand-checked cases and external noise sources.
  static PerturbationBatch from_samples(std::size_t dim, double sigma, Distribution dist,
                                        Vector samples);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return samples_.size() / dim_; }
  double sigma() const noexcept { return sigma_; }
  Distribution distribution() const noexcept { return dist_; }
  std::uint64_t master_seed() const noexcept { return master_seed_; }
  /// Empty for batches built with from_samples.
  std::span<const std::uint64_t> seeds() const noexcept { return seeds_; }
  std::span<const double> sample(std::size_t n) const {
    return {samples_.data() + n * dim_, dim_};
  }

 private:
  PerturbationBatch() = default;

  std::size_t dim_ = 0;
  double sigma_ = 0.0;
  Distribution dist_{};
  std::uint64_t master_seed_ = 0;
  std::vector<std::uint64_t> seeds_;
  Vector samples_;
};

/// Seed of sample n: derive_seed(master_seed, n).
std::uint64_t sample_seed(std::uint64_t master_seed, std::size_t n);

/// Regenerates one perturbation from its seed. Gaussian: N(0, s^2 I); Bernoulli: +-s per coordinate.
Vector regenerate_sample(std::uint64_t seed, std::size_t dim, double sigma, Distribution dist);
void regenerate_sample(std::uint64_t seed, double sigma, Distribution dist, std::span<double> out);

/// Throws ArgumentError when S == 0, D == 0 or sigma is not positive and finite.
PerturbationBatch sample_batch(std::size_t dim, std::size_t samples, double sigma,
                               Distribution dist, std::uint64_t master_seed);

struct GradientEstimate {
  Vector g_hat;
  EstimatorKind estimator{};
  std::size_t samples = 0;
  double sigma = 0.0;
  std::uint64_t seed = 0;
  /// Scalars consumed, in protocol order. GP_AS/SPSA interleave f(x+e^n), f(x-e^n).
  Vector evals;
  std::size_t f_evals_count = 0;
  /// Baseline value subtracted (GP_Baseline only).
  std::optional<double> baseline;
};

/// One JSON-lines record: estimator, S, sigma, seed, g_hat, evals.
std::string to_jsonl(const GradientEstimate& estimate);

enum class BaselineMode { CurrentValue, MovingAverage };

/// Baseline for GP_Baseline. CurrentValue uses b = f(x) (one extra evaluation).
/// MovingAverage uses the mean of the last `window` recorded losses; with no
/// history yet it falls back to the mean of the current evaluations. Each
/// estimate records the mean of its perturbed evaluations as the step's loss.
class BaselineState {
 public:
  explicit BaselineState(BaselineMode mode = BaselineMode::CurrentValue, std::size_t window = 10);

  BaselineMode mode() const noexcept { return mode_; }
  std::size_t window() const noexcept { return window_; }
  std::span<const double> history() const noexcept;

  void record(double loss);
  /// Mean of the retained history; nullopt when empty or in CurrentValue mode.
  std::optional<double> moving_average() const;

 private:
  BaselineMode mode_;
  std::size_t window_;
  std::vector<double> history_;
};

struct ExecutionOptions {
  std::size_t threads = 1;
};

GradientEstimate estimate_gp(const Objective& obj, std::span<const double> x,
                             const PerturbationBatch& batch, const ExecutionOptions& exec = {});
GradientEstimate estimate_gp_antithetic(const Objective& obj, std::span<const double> x,
                                        const PerturbationBatch& batch,
                                        const ExecutionOptions& exec = {});
GradientEstimate estimate_gp_baseline(const Objective& obj, std::span<const double> x,
                                      const PerturbationBatch& batch, BaselineState& baseline,
                                      const ExecutionOptions& exec = {});
GradientEstimate estimate_spsa(const Objective& obj, std::span<const double> x,
                               const PerturbationBatch& batch, const ExecutionOptions& exec = {});
GradientEstimate estimate_dd(const Objective& obj, std::span<const double> x,
                             const PerturbationBatch& batch, const ExecutionOptions& exec = {});

/// Dispatch by kind. GP_Baseline uses a fresh CurrentValue baseline.
GradientEstimate estimate(EstimatorKind kind, const Objective& obj, std::span<const double> x,
                          const PerturbationBatch& batch, const ExecutionOptions& exec = {});

/// Scalar weight of one sample given its payload (width payload_width(kind)).
/// GP: f+; GP_AS/SPSA: f+ - f-; GP_Baseline: f+ - b; DD: D_e f.
double sample_weight(EstimatorKind kind, std::span<const double> payload, double baseline = 0.0);

/// Assembles g_hat from per-sample weights over the listed sample ids
/// (ascending), normalizing by the number of ids. Shared by the local
/// estimators and the seed-sharing replicas.
Vector assemble_gradient(EstimatorKind kind, const PerturbationBatch& batch,
                         std::span<const std::size_t> sample_ids, std::span<const double> weights);

}  // namespace pgrad
