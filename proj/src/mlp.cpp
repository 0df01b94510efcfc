#include "pgrad/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <type_traits>

#include "pgrad/rng.hpp"

namespace pgrad {

Dataset make_blobs(const BlobConfig& config) {
  if (config.classes < 2 || config.features == 0 || config.samples_per_class == 0) {
    throw ConfigError("blob dataset needs >= 2 classes, features > 0 and samples > 0");
  }
  Dataset data;
  data.features = config.features;
  data.classes = config.classes;
  const std::size_t n = config.classes * config.samples_per_class;
  data.inputs.resize(n * config.features);
  data.labels.resize(n);

  SampleStream centers(derive_seed(config.seed, 0));
  Vector means(config.classes * config.features);
  for (double& m : means) m = config.separation * centers.next_normal();

  // Interleave classes so any prefix is balanced.
  SampleStream noise(derive_seed(config.seed, 1));
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t c = k % config.classes;
    data.labels[k] = c;
    for (std::size_t j = 0; j < config.features; ++j) {
      data.inputs[k * config.features + j] = means[c * config.features + j] + noise.next_normal();
    }
  }
  return data;
}

std::size_t mlp_parameter_count(std::span<const std::size_t> layer_sizes) {
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    total += (layer_sizes[l] + 1) * layer_sizes[l + 1];
  }
  return total;
}

Vector mlp_initial_parameters(std::span<const std::size_t> layer_sizes, std::uint64_t seed) {
  Vector params(mlp_parameter_count(layer_sizes), 0.0);
  SampleStream stream(seed);
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    const std::size_t in = layer_sizes[l];
    const std::size_t out = layer_sizes[l + 1];
    const double scale = std::sqrt(2.0 / static_cast<double>(in));
    for (std::size_t k = 0; k < in * out; ++k) params[offset + k] = scale * stream.next_normal();
    offset += (in + 1) * out;
  }
  return params;
}

namespace {

std::size_t validated_dim(const MlpSpec& spec) {
  if (!spec.dataset || spec.dataset->size() == 0) {
    throw ConfigError("MLP dataset must be nonempty");
  }
  if (spec.layer_sizes.size() < 2) {
    throw ConfigError("MLP needs at least input and output layer sizes");
  }
  for (std::size_t s : spec.layer_sizes) {
    if (s == 0) throw ConfigError("MLP layer sizes must be positive");
  }
  if (spec.layer_sizes.front() != spec.dataset->features) {
    throw ConfigError("MLP input size " + std::to_string(spec.layer_sizes.front()) +
                      " does not match dataset features " +
                      std::to_string(spec.dataset->features));
  }
  if (spec.layer_sizes.back() != spec.dataset->classes) {
    throw ConfigError("MLP output size " + std::to_string(spec.layer_sizes.back()) +
                      " does not match dataset classes " + std::to_string(spec.dataset->classes));
  }
  for (std::size_t label : spec.dataset->labels) {
    if (label >= spec.dataset->classes) throw ConfigError("dataset label out of range");
  }
  return mlp_parameter_count(spec.layer_sizes);
}

std::shared_ptr<const std::vector<std::size_t>> all_rows(const MlpSpec& spec) {
  std::vector<std::size_t> rows(spec.dataset ? spec.dataset->size() : 0);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return std::make_shared<const std::vector<std::size_t>>(std::move(rows));
}

}  // namespace

MlpObjective::MlpObjective(MlpSpec spec)
    : Objective(validated_dim(spec)), spec_(std::move(spec)), rows_(all_rows(spec_)) {}

MlpObjective::MlpObjective(MlpSpec spec, std::shared_ptr<const std::vector<std::size_t>> rows)
    : Objective(validated_dim(spec)), spec_(std::move(spec)), rows_(std::move(rows)) {}

MlpObjective MlpObjective::with_batch(std::vector<std::size_t> rows) const {
  if (rows.empty()) throw ArgumentError("minibatch must be nonempty");
  for (std::size_t r : rows) {
    if (r >= spec_.dataset->size()) throw ArgumentError("minibatch row out of range");
  }
  return MlpObjective(spec_, std::make_shared<const std::vector<std::size_t>>(std::move(rows)));
}

bool MlpObjective::supports(Capability c) const noexcept {
  return c == Capability::DualEvaluation || c == Capability::Gradient;
}

// The double and Dual paths run the same operation sequence, so the value part
// of eval_dual matches eval bit for bit.
template <class T, class Param>
T MlpObjective::loss(const Param& param) const {
  using std::exp;
  using std::log;
  const auto& sizes = spec_.layer_sizes;
  const Dataset& data = *spec_.dataset;
  const std::size_t widest = *std::max_element(sizes.begin(), sizes.end());
  std::vector<T> current(widest), next(widest);

  T total{};
  for (std::size_t row : *rows_) {
    const std::span<const double> input = data.row(row);
    for (std::size_t j = 0; j < input.size(); ++j) current[j] = T(input[j]);

    std::size_t offset = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      const std::size_t in = sizes[l];
      const std::size_t out = sizes[l + 1];
      const std::size_t bias_offset = offset + in * out;
      const bool hidden = l + 2 < sizes.size();
      for (std::size_t o = 0; o < out; ++o) {
        T z = param(bias_offset + o);
        const std::size_t w = offset + o * in;
        for (std::size_t i = 0; i < in; ++i) z += param(w + i) * current[i];
        next[o] = hidden ? relu(z) : z;
      }
      std::swap(current, next);
      offset = bias_offset + out;
    }

    const std::size_t classes = sizes.back();
    T peak = current[0];
    for (std::size_t c = 1; c < classes; ++c) {
      if (value_less(peak, current[c])) peak = current[c];
    }
    T sum{};
    for (std::size_t c = 0; c < classes; ++c) sum += exp(current[c] - peak);
    total += (peak + log(sum)) - current[data.labels[row]];
  }
  const double n = static_cast<double>(rows_->size());
  if constexpr (std::is_same_v<T, double>) {
    return total / n;
  } else {
    return T{total.value / n, total.tangent / n};
  }
}

double MlpObjective::eval(std::span<const double> x) const {
  require_dim(x, dim(), "mlp");
  return loss<double>([x](std::size_t k) { return x[k]; });
}

Dual MlpObjective::eval_dual(std::span<const double> x, std::span<const double> u) const {
  require_dim(x, dim(), "mlp");
  require_dim(u, dim(), "mlp direction");
  return loss<Dual>([x, u](std::size_t k) { return Dual{x[k], u[k]}; });
}

Vector MlpObjective::gradient(std::span<const double> x) const {
  require_dim(x, dim(), "mlp");
  const auto& sizes = spec_.layer_sizes;
  const Dataset& data = *spec_.dataset;
  const std::size_t layers = sizes.size() - 1;

  std::vector<std::size_t> offsets(layers);
  for (std::size_t l = 0, off = 0; l < layers; ++l) {
    offsets[l] = off;
    off += (sizes[l] + 1) * sizes[l + 1];
  }

  Vector grad(dim(), 0.0);
  // activations[l] is the input to layer l; pre[l] its pre-activation output.
  std::vector<Vector> activations(layers + 1), pre(layers);
  for (std::size_t l = 0; l <= layers; ++l) activations[l].resize(sizes[l]);
  for (std::size_t l = 0; l < layers; ++l) pre[l].resize(sizes[l + 1]);
  Vector delta, delta_prev;

  for (std::size_t row : *rows_) {
    const std::span<const double> input = data.row(row);
    std::copy(input.begin(), input.end(), activations[0].begin());
    for (std::size_t l = 0; l < layers; ++l) {
      const std::size_t in = sizes[l], out = sizes[l + 1];
      const std::size_t bias_offset = offsets[l] + in * out;
      for (std::size_t o = 0; o < out; ++o) {
        double z = x[bias_offset + o];
        const std::size_t w = offsets[l] + o * in;
        for (std::size_t i = 0; i < in; ++i) z += x[w + i] * activations[l][i];
        pre[l][o] = z;
        activations[l + 1][o] = (l + 1 < layers) ? relu(z) : z;
      }
    }

    const Vector& logits = activations[layers];
    const double peak = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double z : logits) sum += std::exp(z - peak);
    delta.assign(logits.size(), 0.0);
    for (std::size_t c = 0; c < logits.size(); ++c) delta[c] = std::exp(logits[c] - peak) / sum;
    delta[data.labels[row]] -= 1.0;

    for (std::size_t l = layers; l-- > 0;) {
      const std::size_t in = sizes[l], out = sizes[l + 1];
      const std::size_t bias_offset = offsets[l] + in * out;
      for (std::size_t o = 0; o < out; ++o) {
        grad[bias_offset + o] += delta[o];
        const std::size_t w = offsets[l] + o * in;
        for (std::size_t i = 0; i < in; ++i) grad[w + i] += delta[o] * activations[l][i];
      }
      if (l == 0) break;
      delta_prev.assign(in, 0.0);
      for (std::size_t o = 0; o < out; ++o) {
        const std::size_t w = offsets[l] + o * in;
        for (std::size_t i = 0; i < in; ++i) delta_prev[i] += x[w + i] * delta[o];
      }
      for (std::size_t i = 0; i < in; ++i) {
        if (!(pre[l - 1][i] > 0.0)) delta_prev[i] = 0.0;
      }
      std::swap(delta, delta_prev);
    }
  }
  const double n = static_cast<double>(rows_->size());
  for (double& g : grad) g /= n;
  return grad;
}

MlpObjective make_mlp(MlpSpec spec) { return MlpObjective(std::move(spec)); }

}  // namespace pgrad
