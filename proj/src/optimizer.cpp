#include "pgrad/optimizer.hpp"

#include <cmath>
#include <string>

namespace pgrad {

std::string_view to_string(OptimizerKind kind) {
  return kind == OptimizerKind::Sgd ? "sgd" : "adam";
}

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "sgd") return OptimizerKind::Sgd;
  if (name == "adam") return OptimizerKind::Adam;
  throw ArgumentError("unknown optimizer '" + std::string(name) + "'");
}

OptimizerState::OptimizerState(OptimizerKind kind, double learning_rate, AdamHyperparameters hyper)
    : kind_(kind), learning_rate_(learning_rate), hyper_(hyper) {
  // A zero rate is allowed: it freezes the parameters.
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ArgumentError("learning rate must be finite and non-negative");
  }
  if (kind == OptimizerKind::Adam &&
      !(hyper.beta1 >= 0.0 && hyper.beta1 < 1.0 && hyper.beta2 >= 0.0 && hyper.beta2 < 1.0 &&
        hyper.epsilon > 0.0)) {
    throw ArgumentError("Adam needs beta1, beta2 in [0, 1) and epsilon > 0");
  }
}

OptimizerState OptimizerState::sgd(double learning_rate) {
  return OptimizerState(OptimizerKind::Sgd, learning_rate, {});
}

OptimizerState OptimizerState::adam(double learning_rate, AdamHyperparameters hyper) {
  return OptimizerState(OptimizerKind::Adam, learning_rate, hyper);
}

void OptimizerState::step(std::span<double> params, std::span<const double> grad) {
  if (params.size() != grad.size()) throw ArgumentError("optimizer: gradient size mismatch");
  ++steps_;
  if (kind_ == OptimizerKind::Sgd) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= learning_rate_ * grad[i];
    return;
  }
  if (m_.empty()) {
    m_.assign(params.size(), 0.0);
    v_.assign(params.size(), 0.0);
  } else if (m_.size() != params.size()) {
    throw ArgumentError("optimizer: parameter count changed between steps");
  }
  const double t = static_cast<double>(steps_);
  const double correction1 = 1.0 - std::pow(hyper_.beta1, t);
  const double correction2 = 1.0 - std::pow(hyper_.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = hyper_.beta1 * m_[i] + (1.0 - hyper_.beta1) * grad[i];
    v_[i] = hyper_.beta2 * v_[i] + (1.0 - hyper_.beta2) * grad[i] * grad[i];
    const double m_hat = m_[i] / correction1;
    const double v_hat = v_[i] / correction2;
    params[i] -= learning_rate_ * m_hat / (std::sqrt(v_hat) + hyper_.epsilon);
  }
}

}  // namespace pgrad
