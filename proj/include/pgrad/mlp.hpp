#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "pgrad/objective.hpp"

namespace pgrad {

/// Row-major feature matrix with integer class labels. Immutable once built.
struct Dataset {
  std::size_t features = 0;
  std::size_t classes = 0;
  Vector inputs;  // size() * features
  std::vector<std::size_t> labels;

  std::size_t size() const noexcept { return labels.size(); }
  std::span<const double> row(std::size_t n) const {
    return {inputs.data() + n * features, features};
  }
};

/// Gaussian blobs: class means ~ N(0, separation^2 I), points ~ N(mean, I).
struct BlobConfig {
  std::size_t classes = 2;
  std::size_t features = 20;
  std::size_t samples_per_class = 1000;
  double separation = 1.0;
  std::uint64_t seed = 7;
};

Dataset make_blobs(const BlobConfig& config);

/// Fully connected ReLU network with a softmax cross-entropy head.
/// layer_sizes = (input, hidden..., output).
struct MlpSpec {
  std::vector<std::size_t> layer_sizes;
  std::shared_ptr<const Dataset> dataset;
};

std::size_t mlp_parameter_count(std::span<const std::size_t> layer_sizes);

/// He-normal weights, zero biases. Parameter layout per layer: W (out x in, row-major) then b.
Vector mlp_initial_parameters(std::span<const std::size_t> layer_sizes, std::uint64_t seed);

/// Mean cross-entropy of the network over a (mini)batch of the dataset.
class MlpObjective final : public Objective {
 public:
  /// Full-batch objective. Throws ConfigError on inconsistent sizes.
  explicit MlpObjective(MlpSpec spec);

  /// Same network restricted to the given rows (duplicates allowed).
  MlpObjective with_batch(std::vector<std::size_t> rows) const;

  double eval(std::span<const double> x) const override;
  Dual eval_dual(std::span<const double> x, std::span<const double> u) const override;
  /// Backpropagated gradient.
  Vector gradient(std::span<const double> x) const override;
  bool supports(Capability c) const noexcept override;

  const MlpSpec& spec() const noexcept { return spec_; }
  std::span<const std::size_t> batch() const noexcept { return *rows_; }

 private:
  MlpObjective(MlpSpec spec, std::shared_ptr<const std::vector<std::size_t>> rows);

  template <class T, class Param>
  T loss(const Param& param) const;

  MlpSpec spec_;
  std::shared_ptr<const std::vector<std::size_t>> rows_;
};

MlpObjective make_mlp(MlpSpec spec);

}  // namespace pgrad
