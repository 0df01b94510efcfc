#pragma once

#include <cstddef>
#include <span>
#include <string_view>

#include "pgrad/types.hpp"

namespace pgrad {

enum class OptimizerKind { Sgd, Adam };

std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(std::string_view name);

struct AdamHyperparameters {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  friend bool operator==(const AdamHyperparameters&, const AdamHyperparameters&) = default;
};

/// Plain SGD or Adam with bias correction. Moments are sized on the first step.
class OptimizerState {
 public:
  static OptimizerState sgd(double learning_rate);
  static OptimizerState adam(double learning_rate, AdamHyperparameters hyper = {});

  /// params -= update(grad). Throws ArgumentError on size mismatch.
  void step(std::span<double> params, std::span<const double> grad);

  OptimizerKind kind() const noexcept { return kind_; }
  double learning_rate() const noexcept { return learning_rate_; }
  const AdamHyperparameters& adam_hyperparameters() const noexcept { return hyper_; }
  std::size_t steps() const noexcept { return steps_; }
  std::span<const double> first_moment() const noexcept { return m_; }
  std::span<const double> second_moment() const noexcept { return v_; }

  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;

 private:
  OptimizerState(OptimizerKind kind, double learning_rate, AdamHyperparameters hyper);

  OptimizerKind kind_;
  double learning_rate_;
  AdamHyperparameters hyper_;
  std::size_t steps_ = 0;
  Vector m_;
  Vector v_;
};

}  // namespace pgrad
