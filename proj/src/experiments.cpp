#include "pgrad/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <memory>
#include <ostream>
#include <set>
#include <sstream>

#include "pgrad/csv.hpp"
#include "pgrad/errors.hpp"
#include "pgrad/mlp.hpp"
#include "pgrad/parallel.hpp"
#include "pgrad/rng.hpp"

namespace pgrad {

using nlohmann::json;

std::string_view to_string(Experiment e) {
  switch (e) {
    case Experiment::Fig2Trajectory: return "fig2_trajectory";
    case Experiment::Fig3Sweep: return "fig3_sweep";
    case Experiment::Fig4Nn: return "fig4_nn";
    case Experiment::ClusterSim: return "cluster_sim";
    case Experiment::MomentsTable: return "moments_table";
  }
  return "unknown";
}

Experiment parse_experiment(std::string_view name) {
  for (Experiment e : {Experiment::Fig2Trajectory, Experiment::Fig3Sweep, Experiment::Fig4Nn,
                       Experiment::ClusterSim, Experiment::MomentsTable}) {
    if (to_string(e) == name) return e;
  }
  throw ConfigError("unknown experiment '" + std::string(name) + "'");
}

std::string_view to_string(BudgetMode m) {
  return m == BudgetMode::PerSample ? "per-sample" : "per-eval";
}

BudgetMode parse_budget_mode(std::string_view name) {
  if (name == "per-sample") return BudgetMode::PerSample;
  if (name == "per-eval") return BudgetMode::PerEval;
  throw ConfigError("unknown budget mode '" + std::string(name) + "'");
}

OptimizerState OptimizerConfig::make() const {
  return kind == OptimizerKind::Adam ? OptimizerState::adam(learning_rate, adam)
                                     : OptimizerState::sgd(learning_rate);
}

std::vector<std::size_t> MlpConfig::layer_sizes() const {
  std::vector<std::size_t> sizes{features};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(classes);
  return sizes;
}

Vector logspace(double lo, double hi, std::size_t n) {
  if (n == 0) return {};
  if (n == 1) return {lo};
  Vector out(n);
  const double a = std::log10(lo);
  const double b = std::log10(hi);
  for (std::size_t k = 0; k < n; ++k) {
    out[k] = std::pow(10.0, a + (b - a) * static_cast<double>(k) / static_cast<double>(n - 1));
  }
  out.front() = lo;
  out.back() = hi;
  return out;
}

ExperimentConfig default_config(Experiment e) {
  ExperimentConfig c;
  c.experiment = e;
  const std::vector<EstimatorKind> all{EstimatorKind::GP, EstimatorKind::GP_AS,
                                       EstimatorKind::GP_Baseline, EstimatorKind::SPSA,
                                       EstimatorKind::DD};
  switch (e) {
    case Experiment::Fig3Sweep:
      c.objectives = {ObjectiveConfig{"quartic", 100, 1.0}};
      c.estimators = {EstimatorKind::GP, EstimatorKind::GP_AS, EstimatorKind::DD};
      c.samples = 5;
      c.sigmas = logspace(1e-3, 10.0, 20);
      c.trials = 1000;
      break;
    case Experiment::Fig2Trajectory:
      c.objectives = {ObjectiveConfig{"quadratic", 2, 1.0}};
      c.samples = 10;
      c.trials = 0;
      break;
    case Experiment::Fig4Nn:
      c.objectives = {};
      c.samples = 64;
      c.trials = 0;
      c.optimizer = {OptimizerKind::Adam, 1e-3, {}};
      c.budget_mode = BudgetMode::PerEval;
      break;
    case Experiment::ClusterSim:
      c.objectives = {ObjectiveConfig{"quadratic", 100, 1.0}};
      c.estimators = all;
      c.samples = 16;
      c.sigmas = {0.1};
      c.trials = 0;
      break;
    case Experiment::MomentsTable:
      c.objectives = {ObjectiveConfig{"quadratic", 10, 1.0}, ObjectiveConfig{"quartic", 10, 1.0}};
      c.estimators = all;
      c.samples = 1;
      c.sigmas = {0.01, 0.1, 1.0};
      c.trials = 10000;
      break;
  }
  return c;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

json estimators_json(const std::vector<EstimatorKind>& kinds) {
  json a = json::array();
  for (EstimatorKind k : kinds) a.push_back(to_string(k));
  return a;
}

}  // namespace

json to_json(const ExperimentConfig& c) {
  json j;
  j["experiment"] = to_string(c.experiment);
  json objectives = json::array();
  for (const ObjectiveConfig& o : c.objectives) {
    objectives.push_back({{"kind", o.kind}, {"dim", o.dim}, {"value", o.value}});
  }
  j["objectives"] = std::move(objectives);
  j["estimators"] = estimators_json(c.estimators);
  j["samples"] = c.samples;
  j["sigmas"] = c.sigmas;
  j["point"] = c.point;
  j["optimizer"] = {{"kind", to_string(c.optimizer.kind)},
                    {"learning_rate", c.optimizer.learning_rate},
                    {"beta1", c.optimizer.adam.beta1},
                    {"beta2", c.optimizer.adam.beta2},
                    {"epsilon", c.optimizer.adam.epsilon}};
  j["trials"] = c.trials;
  j["master_seed"] = c.master_seed;
  j["threads"] = c.threads;
  j["budget_mode"] = to_string(c.budget_mode);
  j["output"] = c.output;
  j["fig2"] = {{"mu0", c.fig2.mu0},
               {"sigma0", c.fig2.sigma0},
               {"steps", c.fig2.steps},
               {"runs", c.fig2.runs},
               {"variance_reduction", to_string(c.fig2.variance_reduction)}};
  j["fig4"] = {{"steps", c.fig4.steps},
               {"runs", c.fig4.runs},
               {"gp_sigmas", c.fig4.gp_sigmas},
               {"gp_as_sigmas", c.fig4.gp_as_sigmas},
               {"baseline_sigma", c.fig4.baseline_sigma},
               {"baseline_window", c.fig4.baseline_window},
               {"smoothing", c.fig4.smoothing}};
  j["mlp"] = {{"classes", c.mlp.classes},
              {"features", c.mlp.features},
              {"samples_per_class", c.mlp.samples_per_class},
              {"separation", c.mlp.separation},
              {"hidden", c.mlp.hidden},
              {"batch", c.mlp.batch},
              {"data_seed", c.mlp.data_seed}};
  json drops = json::array();
  for (const auto& [round, worker] : c.cluster.drops) drops.push_back({round, worker});
  j["cluster"] = {{"replicas", c.cluster.replicas},
                  {"rounds", c.cluster.rounds},
                  {"drops", std::move(drops)}};
  return j;
}

namespace {

// Reads the keys of `j` into fields, rejecting unknown ones. Every error names
// the dotted key path.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  template <class T>
  Reader& field(const char* key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return *this;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where(key) + ": " + e.what());
    }
    return *this;
  }

  template <class Fn>
  Reader& custom(const char* key, Fn&& fn) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return *this;
    try {
      fn(*it, where(key));
    } catch (const json::exception& e) {
      throw ConfigError(where(key) + ": " + e.what());
    }
    return *this;
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw ConfigError("unknown key " + where(item.key().c_str()));
    }
  }

 private:
  std::string where(const char* key = nullptr) const {
    std::string p = path_;
    if (key != nullptr) p += (p.empty() ? "" : ".") + std::string(key);
    return "'" + (p.empty() ? std::string("<root>") : p) + "'";
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class Parse>
auto parse_wrapped(const json& v, const std::string& where, Parse parse) {
  try {
    return parse(v.get<std::string>());
  } catch (const ConfigError& e) {
    throw ConfigError(where + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

Vector read_sigmas(const json& v, const std::string& where) {
  // Either an explicit list or {"logspace": [lo, hi, n]}.
  if (v.is_object()) {
    Reader r(v, where.substr(1, where.size() - 2));
    std::vector<double> spec;
    r.field("logspace", spec).finish();
    if (spec.size() != 3 || spec[2] < 1 || spec[2] != std::floor(spec[2])) {
      throw ConfigError(where + ": logspace needs [lo, hi, count]");
    }
    if (!(spec[0] > 0.0) || !(spec[1] > 0.0)) {
      throw ConfigError(where + ": logspace bounds must be positive");
    }
    return logspace(spec[0], spec[1], static_cast<std::size_t>(spec[2]));
  }
  return v.get<Vector>();
}

}  // namespace

ExperimentConfig config_from_json(const json& j, Experiment fallback) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  Experiment e = fallback;
  if (const auto it = j.find("experiment"); it != j.end()) {
    if (!it->is_string()) throw ConfigError("'experiment' must be a string");
    e = parse_experiment(it->get<std::string>());
  }
  ExperimentConfig c = default_config(e);

  Reader root(j, "");
  root.custom("experiment", [](const json&, const std::string&) {});
  root.custom("objectives", [&](const json& v, const std::string& where) {
    if (!v.is_array()) throw ConfigError(where + " must be an array");
    c.objectives.clear();
    for (std::size_t k = 0; k < v.size(); ++k) {
      ObjectiveConfig o;
      Reader r(v[k], "objectives[" + std::to_string(k) + "]");
      r.field("kind", o.kind).field("dim", o.dim).field("value", o.value).finish();
      c.objectives.push_back(o);
    }
  });
  root.custom("estimators", [&](const json& v, const std::string& where) {
    if (!v.is_array()) throw ConfigError(where + " must be an array");
    c.estimators.clear();
    for (const json& name : v) {
      c.estimators.push_back(parse_wrapped(name, where, [](const std::string& s) {
        return parse_estimator(s);
      }));
    }
  });
  root.field("samples", c.samples);
  root.custom("sigmas", [&](const json& v, const std::string& where) {
    c.sigmas = read_sigmas(v, where);
  });
  root.field("point", c.point);
  root.custom("optimizer", [&](const json& v, const std::string&) {
    Reader r(v, "optimizer");
    r.custom("kind", [&](const json& k, const std::string& where) {
      c.optimizer.kind = parse_wrapped(k, where, [](const std::string& s) {
        return parse_optimizer(s);
      });
    });
    r.field("learning_rate", c.optimizer.learning_rate)
        .field("beta1", c.optimizer.adam.beta1)
        .field("beta2", c.optimizer.adam.beta2)
        .field("epsilon", c.optimizer.adam.epsilon)
        .finish();
  });
  root.field("trials", c.trials).field("master_seed", c.master_seed).field("threads", c.threads);
  root.custom("budget_mode", [&](const json& v, const std::string& where) {
    c.budget_mode = parse_wrapped(v, where, [](const std::string& s) {
      return parse_budget_mode(s);
    });
  });
  root.field("output", c.output);
  root.custom("fig2", [&](const json& v, const std::string&) {
    Reader r(v, "fig2");
    r.field("mu0", c.fig2.mu0)
        .field("sigma0", c.fig2.sigma0)
        .field("steps", c.fig2.steps)
        .field("runs", c.fig2.runs);
    r.custom("variance_reduction", [&](const json& k, const std::string& where) {
      c.fig2.variance_reduction = parse_wrapped(k, where, [](const std::string& s) {
        return parse_variance_reduction(s);
      });
    });
    r.finish();
  });
  root.custom("fig4", [&](const json& v, const std::string&) {
    Reader r(v, "fig4");
    r.field("steps", c.fig4.steps).field("runs", c.fig4.runs);
    r.custom("gp_sigmas", [&](const json& s, const std::string& where) {
      c.fig4.gp_sigmas = read_sigmas(s, where);
    });
    r.custom("gp_as_sigmas", [&](const json& s, const std::string& where) {
      c.fig4.gp_as_sigmas = read_sigmas(s, where);
    });
    r.field("baseline_sigma", c.fig4.baseline_sigma)
        .field("baseline_window", c.fig4.baseline_window)
        .field("smoothing", c.fig4.smoothing)
        .finish();
  });
  root.custom("mlp", [&](const json& v, const std::string&) {
    Reader r(v, "mlp");
    r.field("classes", c.mlp.classes)
        .field("features", c.mlp.features)
        .field("samples_per_class", c.mlp.samples_per_class)
        .field("separation", c.mlp.separation)
        .field("hidden", c.mlp.hidden)
        .field("batch", c.mlp.batch)
        .field("data_seed", c.mlp.data_seed)
        .finish();
  });
  root.custom("cluster", [&](const json& v, const std::string&) {
    Reader r(v, "cluster");
    r.field("replicas", c.cluster.replicas).field("rounds", c.cluster.rounds);
    r.custom("drops", [&](const json& d, const std::string& where) {
      if (!d.is_array()) throw ConfigError(where + " must be an array of [round, worker]");
      c.cluster.drops.clear();
      for (const json& pair : d) {
        if (!pair.is_array() || pair.size() != 2) {
          throw ConfigError(where + " entries must be [round, worker]");
        }
        c.cluster.drops.emplace_back(pair[0].get<std::uint32_t>(), pair[1].get<std::uint32_t>());
      }
    });
    r.finish();
  });
  root.finish();
  return c;
}

ExperimentConfig load_config(const std::string& path, Experiment fallback) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  return config_from_json(j, fallback);
}

void save_config(const ExperimentConfig& config, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config file '" + path + "'");
  out << to_json(config).dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Validation

namespace {

void check_sigma_grid(const Vector& grid, const std::string& name, bool required) {
  if (grid.empty()) {
    if (required) throw ConfigError(name + " must not be empty");
    return;
  }
  for (std::size_t k = 0; k < grid.size(); ++k) {
    if (!(grid[k] > 0.0) || !std::isfinite(grid[k])) {
      throw ConfigError(name + " entries must be positive and finite");
    }
    if (k > 0 && !(grid[k] > grid[k - 1])) {
      throw ConfigError(name + " must be strictly ascending");
    }
  }
}

void check_objective(const ObjectiveConfig& o) {
  if (o.kind != "quadratic" && o.kind != "quartic" && o.kind != "constant") {
    throw ConfigError("unknown objective kind '" + o.kind + "'");
  }
  if (o.dim == 0) throw ConfigError("objective dim must be positive");
  if (!std::isfinite(o.value)) throw ConfigError("objective value must be finite");
}

void require_single_objective(const ExperimentConfig& c, const std::string& kind) {
  if (c.objectives.size() != 1 || c.objectives[0].kind != kind) {
    throw ConfigError(std::string(to_string(c.experiment)) + " needs exactly one " + kind +
                      " objective");
  }
}

}  // namespace

void validate(const ExperimentConfig& c) {
  if (c.samples == 0) throw ConfigError("samples must be positive");
  if (c.threads == 0) throw ConfigError("threads must be positive");
  for (const ObjectiveConfig& o : c.objectives) check_objective(o);
  const OptimizerConfig& opt = c.optimizer;
  if (!(opt.learning_rate >= 0.0) || !std::isfinite(opt.learning_rate)) {
    throw ConfigError("learning_rate must be finite and non-negative");
  }
  if (!(opt.adam.beta1 >= 0.0 && opt.adam.beta1 < 1.0) ||
      !(opt.adam.beta2 >= 0.0 && opt.adam.beta2 < 1.0) || !(opt.adam.epsilon > 0.0)) {
    throw ConfigError("Adam needs beta1, beta2 in [0, 1) and epsilon > 0");
  }
  const bool needs_grid = c.experiment == Experiment::Fig3Sweep ||
                          c.experiment == Experiment::MomentsTable ||
                          c.experiment == Experiment::ClusterSim;
  check_sigma_grid(c.sigmas, "sigmas", needs_grid);
  if (needs_grid && c.estimators.empty()) throw ConfigError("estimators must not be empty");

  switch (c.experiment) {
    case Experiment::Fig3Sweep:
      require_single_objective(c, "quartic");
      if (c.trials < 1) throw ConfigError("trials must be positive");
      break;
    case Experiment::MomentsTable:
      if (c.objectives.empty()) throw ConfigError("objectives must not be empty");
      if (c.trials < 2) throw ConfigError("moments need at least 2 trials");
      for (const ObjectiveConfig& o : c.objectives) {
        if (!c.point.empty() && c.point.size() != o.dim) {
          throw ConfigError("point has " + std::to_string(c.point.size()) +
                            " entries but an objective has dim " + std::to_string(o.dim));
        }
      }
      break;
    case Experiment::Fig2Trajectory:
      require_single_objective(c, "quadratic");
      if (c.fig2.mu0.size() != c.objectives[0].dim) {
        throw ConfigError("fig2.mu0 must match the objective dim");
      }
      if (!(c.fig2.sigma0 > 0.0) || !std::isfinite(c.fig2.sigma0)) {
        throw ConfigError("fig2.sigma0 must be positive");
      }
      if (c.fig2.runs == 0) throw ConfigError("fig2.runs must be positive");
      break;
    case Experiment::Fig4Nn:
      check_sigma_grid(c.fig4.gp_sigmas, "fig4.gp_sigmas", true);
      check_sigma_grid(c.fig4.gp_as_sigmas, "fig4.gp_as_sigmas", false);
      if (c.fig4.baseline_sigma < 0.0 || !std::isfinite(c.fig4.baseline_sigma)) {
        throw ConfigError("fig4.baseline_sigma must be non-negative (0 selects the tuned sigma)");
      }
      if (c.fig4.runs == 0 || c.fig4.steps == 0) {
        throw ConfigError("fig4.runs and fig4.steps must be positive");
      }
      if (c.fig4.smoothing == 0 || c.fig4.baseline_window == 0) {
        throw ConfigError("fig4.smoothing and fig4.baseline_window must be positive");
      }
      if (c.mlp.classes < 2 || c.mlp.features == 0 || c.mlp.samples_per_class == 0 ||
          c.mlp.batch == 0) {
        throw ConfigError("mlp needs classes >= 2 and positive features, samples, batch");
      }
      for (std::size_t h : c.mlp.hidden) {
        if (h == 0) throw ConfigError("mlp.hidden sizes must be positive");
      }
      break;
    case Experiment::ClusterSim:
      require_single_objective(c, c.objectives.empty() ? "quadratic" : c.objectives[0].kind);
      if (c.cluster.replicas > c.samples) throw ConfigError("cluster.replicas exceeds workers");
      if (c.cluster.rounds == 0) throw ConfigError("cluster.rounds must be positive");
      break;
  }
}

std::string config_hash(const ExperimentConfig& config) {
  json j = to_json(config);
  // Execution details that cannot change results stay out of the hash.
  j.erase("threads");
  j.erase("output");
  return fnv1a_hex(j.dump());
}

std::size_t budgeted_samples(EstimatorKind kind, std::size_t samples, BudgetMode mode) {
  if (mode == BudgetMode::PerEval && evaluations_per_sample(kind) == 1) return 2 * samples;
  return samples;
}

std::string csv_comment_line(const ExperimentConfig& config) {
  return "# pgrad " + std::string(to_string(config.experiment)) +
         " config_hash=" + config_hash(config) + " seed=" + std::to_string(config.master_seed);
}

std::unique_ptr<Objective> make_objective(const ObjectiveConfig& c) {
  check_objective(c);
  if (c.kind == "quadratic") return std::make_unique<QuadraticObjective>(c.dim);
  if (c.kind == "quartic") return std::make_unique<QuarticObjective>(c.dim);
  return std::make_unique<ConstantObjective>(c.dim, c.value);
}

namespace {

std::string join_lines(const ExperimentConfig& config, const std::string& header,
                       const std::vector<std::string>& rows) {
  std::string out = csv_comment_line(config) + "\n" + header + "\n";
  for (const std::string& r : rows) out += r + "\n";
  return out;
}

std::string sigma_label(EstimatorKind kind, double sigma) {
  return std::string(to_string(kind)) + " sigma=" + format_number(sigma);
}

}  // namespace

// ---------------------------------------------------------------------------
// RMSE sweep

std::vector<Fig3Row> run_fig3_sweep(const ExperimentConfig& config) {
  validate(config);
  const auto obj = make_objective(config.objectives[0]);
  const std::size_t dim = obj->dim();

  struct Combo {
    EstimatorKind kind;
    double sigma;
    std::size_t samples;
  };
  std::vector<Combo> combos;
  for (EstimatorKind kind : config.estimators) {
    for (double sigma : config.sigmas) {
      combos.push_back({kind, sigma, budgeted_samples(kind, config.samples, config.budget_mode)});
    }
  }

  // [combo][trial] mean squared error over coordinates, empirical and analytic.
  std::vector<Vector> empirical(combos.size(), Vector(config.trials));
  std::vector<Vector> analytic(combos.size(), Vector(config.trials));

  parallel_for(config.trials, config.threads, [&](std::size_t t) {
    const std::uint64_t trial_seed = derive_seed(config.master_seed, t);
    SampleStream xs(derive_seed(trial_seed, 0));
    Vector x(dim);
    for (double& v : x) v = xs.next_normal();
    const Vector truth = obj->gradient(x);
    const std::uint64_t batch_seed = derive_seed(trial_seed, 1);

    for (std::size_t k = 0; k < combos.size(); ++k) {
      const Combo& c = combos[k];
      const PerturbationBatch batch =
          sample_batch(dim, c.samples, c.sigma, distribution_for(c.kind), batch_seed);
      const GradientEstimate est = estimate(c.kind, *obj, x, batch);
      double sq = 0.0;
      for (std::size_t i = 0; i < dim; ++i) {
        const double d = est.g_hat[i] - truth[i];
        sq += d * d;
      }
      empirical[k][t] = sq / static_cast<double>(dim);
      const auto moments = analytic_moments(c.kind, *obj, x, c.sigma, c.samples);
      if (moments) {
        const double r = analytic_rmse(*moments);
        analytic[k][t] = r * r;
      } else {
        analytic[k][t] = std::nan("");
      }
    }
  });

  std::vector<Fig3Row> rows;
  for (std::size_t k = 0; k < combos.size(); ++k) {
    double e = 0.0;
    double a = 0.0;
    for (std::size_t t = 0; t < config.trials; ++t) {
      e += empirical[k][t];
      a += analytic[k][t];
    }
    const auto n = static_cast<double>(config.trials);
    rows.push_back({combos[k].kind, combos[k].sigma, combos[k].samples, config.trials,
                    std::sqrt(e / n), std::sqrt(a / n)});
  }
  return rows;
}

std::string fig3_csv(const ExperimentConfig& config, const std::vector<Fig3Row>& rows) {
  std::vector<std::string> lines;
  for (const Fig3Row& r : rows) {
    CsvRow row;
    row.add(to_string(r.estimator))
        .add(r.sigma)
        .add(r.samples)
        .add(r.trials)
        .add(r.rmse_empirical)
        .add(r.rmse_analytic);
    lines.push_back(row.str());
  }
  return join_lines(config, "estimator,sigma,S,trials,rmse_empirical,rmse_analytic", lines);
}

// ---------------------------------------------------------------------------
// SVO trajectories

std::vector<Fig2Run> run_fig2_trajectory(const ExperimentConfig& config) {
  validate(config);
  const auto obj = make_objective(config.objectives[0]);
  std::vector<Fig2Run> runs(config.fig2.runs);
  // Runs are independent; samples within a step stay sequential.
  parallel_for(runs.size(), config.threads, [&](std::size_t r) {
    Fig2Run& run = runs[r];
    run.run = r;
    run.seed = derive_seed(config.master_seed, r);
    for (bool learn : {false, true}) {
      SvoTrajectory traj = svo_run(
          *obj, VariationalState::from_sigma(config.fig2.mu0, config.fig2.sigma0, learn),
          config.optimizer.make(), config.samples, config.fig2.steps, run.seed,
          config.fig2.variance_reduction);
      (learn ? run.learned_sigma : run.fixed_sigma) = std::move(traj);
    }
  });
  return runs;
}

std::string fig2_csv(const ExperimentConfig& config, const std::vector<Fig2Run>& runs) {
  const std::size_t dim = config.objectives.at(0).dim;
  std::vector<std::string> lines;
  for (const Fig2Run& run : runs) {
    for (bool learn : {false, true}) {
      const SvoTrajectory& traj = learn ? run.learned_sigma : run.fixed_sigma;
      for (const TrajectoryPoint& p : traj.points) {
        CsvRow prefix;
        prefix.add(learn ? "learned_sigma" : "fixed_sigma").add(run.run);
        lines.push_back(prefix.str() + "," + to_csv(p));
      }
    }
  }
  return join_lines(config, "variant,run," + trajectory_csv_header(dim), lines);
}

// ---------------------------------------------------------------------------
// MLP training

namespace {

struct Fig4Setup {
  std::shared_ptr<const Dataset> data;
  std::vector<std::size_t> sizes;
};

Fig4Curve train_curve(const ExperimentConfig& config, const Fig4Setup& setup,
                      EstimatorKind kind, double sigma, std::size_t run) {
  const std::uint64_t run_seed = derive_seed(config.master_seed, run);
  const MlpObjective base = make_mlp(MlpSpec{setup.sizes, setup.data});
  Vector params = mlp_initial_parameters(setup.sizes, derive_seed(run_seed, 0));
  OptimizerState optimizer = config.optimizer.make();
  BaselineState baseline(BaselineMode::MovingAverage, config.fig4.baseline_window);
  const std::uint64_t batch_root = derive_seed(run_seed, 1);
  const std::uint64_t noise_root = derive_seed(run_seed, 2);
  const std::size_t n_points = setup.data->size();

  Fig4Curve curve;
  curve.label = sigma_label(kind, sigma);
  if (kind == EstimatorKind::DD) curve.label = "DD";
  curve.estimator = kind;
  curve.sigma = sigma;
  curve.samples = budgeted_samples(kind, config.samples, config.budget_mode);
  curve.run = run;

  for (std::size_t t = 0; t < config.fig4.steps; ++t) {
    SampleStream pick(derive_seed(batch_root, t));
    std::vector<std::size_t> rows(config.mlp.batch);
    for (std::size_t& r : rows) {
      r = std::min(n_points - 1,
                   static_cast<std::size_t>(pick.next_uniform() * static_cast<double>(n_points)));
    }
    const MlpObjective minibatch = base.with_batch(std::move(rows));
    const double loss = minibatch.eval(params);
    if (!std::isfinite(loss)) {
      curve.non_finite = true;
      break;
    }
    curve.loss.push_back(loss);
    const std::size_t w = std::min(curve.loss.size(), config.fig4.smoothing);
    double s = 0.0;
    for (std::size_t k = curve.loss.size() - w; k < curve.loss.size(); ++k) s += curve.loss[k];
    curve.smoothed.push_back(s / static_cast<double>(w));

    const PerturbationBatch batch = sample_batch(params.size(), curve.samples, sigma,
                                                 distribution_for(kind), derive_seed(noise_root, t));
    GradientEstimate est = kind == EstimatorKind::GP_Baseline
                               ? estimate_gp_baseline(minibatch, params, batch, baseline)
                               : estimate(kind, minibatch, params, batch);
    const bool finite = std::all_of(est.g_hat.begin(), est.g_hat.end(),
                                    [](double v) { return std::isfinite(v); });
    if (!finite) {
      curve.non_finite = true;
      break;
    }
    optimizer.step(params, est.g_hat);
  }
  return curve;
}

double median(Vector v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void summarize(Fig4Result& result, std::size_t first_curve) {
  std::vector<std::string> order;
  for (std::size_t k = first_curve; k < result.curves.size(); ++k) {
    const std::string& l = result.curves[k].label;
    if (std::find(order.begin(), order.end(), l) == order.end()) order.push_back(l);
  }
  for (const std::string& label : order) {
    Vector finals;
    Fig4Summary s;
    s.label = label;
    for (std::size_t k = first_curve; k < result.curves.size(); ++k) {
      const Fig4Curve& c = result.curves[k];
      if (c.label != label) continue;
      s.estimator = c.estimator;
      s.sigma = c.sigma;
      finals.push_back(c.non_finite ? std::numeric_limits<double>::infinity() : c.final_smoothed());
    }
    s.median_final = median(finals);
    result.summary.push_back(s);
  }
}

}  // namespace

Fig4Result run_fig4_nn(const ExperimentConfig& config) {
  validate(config);
  Fig4Setup setup;
  BlobConfig blobs;
  blobs.classes = config.mlp.classes;
  blobs.features = config.mlp.features;
  blobs.samples_per_class = config.mlp.samples_per_class;
  blobs.separation = config.mlp.separation;
  blobs.seed = config.mlp.data_seed;
  setup.data = std::make_shared<const Dataset>(make_blobs(blobs));
  setup.sizes = config.mlp.layer_sizes();

  Fig4Result result;
  auto run_group = [&](const std::vector<std::pair<EstimatorKind, double>>& group) {
    const std::size_t first = result.curves.size();
    const std::size_t jobs = group.size() * config.fig4.runs;
    std::vector<Fig4Curve> curves(jobs);
    parallel_for(jobs, config.threads, [&](std::size_t j) {
      const auto& [kind, sigma] = group[j / config.fig4.runs];
      curves[j] = train_curve(config, setup, kind, sigma, j % config.fig4.runs);
    });
    for (Fig4Curve& c : curves) result.curves.push_back(std::move(c));
    summarize(result, first);
  };

  std::vector<std::pair<EstimatorKind, double>> gp;
  for (double s : config.fig4.gp_sigmas) gp.emplace_back(EstimatorKind::GP, s);
  run_group(gp);

  // Tuned sigma: lowest median final loss over the GP sweep (first on ties).
  const auto best = std::min_element(
      result.summary.begin(), result.summary.end(),
      [](const Fig4Summary& a, const Fig4Summary& b) { return a.median_final < b.median_final; });
  result.tuned_gp_sigma = best->sigma;

  std::vector<std::pair<EstimatorKind, double>> rest;
  for (double s : config.fig4.gp_as_sigmas) rest.emplace_back(EstimatorKind::GP_AS, s);
  const double baseline_sigma =
      config.fig4.baseline_sigma > 0.0 ? config.fig4.baseline_sigma : result.tuned_gp_sigma;
  rest.emplace_back(EstimatorKind::GP_Baseline, baseline_sigma);
  // DD does not depend on sigma beyond a common scale that cancels.
  rest.emplace_back(EstimatorKind::DD, 1.0);
  run_group(rest);
  return result;
}

std::string fig4_csv(const ExperimentConfig& config, const Fig4Result& result) {
  std::vector<std::string> lines;
  for (const Fig4Curve& c : result.curves) {
    for (std::size_t t = 0; t < c.loss.size(); ++t) {
      CsvRow row;
      row.add(c.label)
          .add(to_string(c.estimator))
          .add(c.sigma)
          .add(c.samples)
          .add(c.run)
          .add(t)
          .add(c.loss[t])
          .add(c.smoothed[t])
          .add(std::string_view{});
      lines.push_back(row.str());
    }
    if (c.non_finite) {
      CsvRow row;
      row.add(c.label)
          .add(to_string(c.estimator))
          .add(c.sigma)
          .add(c.samples)
          .add(c.run)
          .add(c.loss.size())
          .add(std::nan(""))
          .add(std::nan(""))
          .add("non_finite");
      lines.push_back(row.str());
    }
  }
  return join_lines(config, "label,estimator,sigma,S,run,step,loss,smoothed_loss,flag", lines);
}

// ---------------------------------------------------------------------------
// Moments table

std::vector<MomentsTableRow> run_moments_table(const ExperimentConfig& config, std::ostream* dump) {
  validate(config);
  constexpr std::size_t kDumpTrials = 8;
  const ExecutionOptions exec{config.threads};
  std::vector<MomentsTableRow> rows;
  for (const ObjectiveConfig& oc : config.objectives) {
    const auto obj = make_objective(oc);
    const Vector x = config.point.empty() ? Vector(oc.dim, 1.0) : config.point;
    const Vector truth = obj->gradient(x);
    for (EstimatorKind kind : config.estimators) {
      const std::size_t s = budgeted_samples(kind, config.samples, config.budget_mode);
      for (double sigma : config.sigmas) {
        const EmpiricalMoments emp = measure_empirical(*obj, x, kind, sigma, s, config.trials,
                                                       config.master_seed, exec);
        const auto ana = analytic_moments(kind, *obj, x, sigma, s);
        rows.push_back({oc.kind + std::to_string(oc.dim),
                        make_moments_row(kind, sigma, s, truth, emp, ana)});
        if (dump != nullptr) {
          for (std::size_t t = 0; t < std::min(config.trials, kDumpTrials); ++t) {
            const PerturbationBatch batch = sample_batch(
                oc.dim, s, sigma, distribution_for(kind), derive_seed(config.master_seed, t));
            *dump << to_jsonl(estimate(kind, *obj, x, batch)) << '\n';
          }
        }
      }
    }
  }
  return rows;
}

std::string moments_csv(const ExperimentConfig& config, const std::vector<MomentsTableRow>& rows) {
  std::vector<std::string> lines;
  for (const MomentsTableRow& r : rows) lines.push_back(r.objective + "," + to_csv(r.row));
  return join_lines(config, std::string("objective,") + kMomentsCsvHeader, lines);
}

// ---------------------------------------------------------------------------
// Cluster

std::vector<ClusterReport> run_cluster(const ExperimentConfig& config) {
  validate(config);
  const auto obj = make_objective(config.objectives[0]);
  std::vector<ClusterReport> reports;
  for (EstimatorKind kind : config.estimators) {
    for (double sigma : config.sigmas) {
      ClusterConfig cc;
      cc.workers = config.samples;
      cc.replicas = config.cluster.replicas;
      cc.rounds = config.cluster.rounds;
      cc.mode = kind;
      cc.sigma = sigma;
      cc.optimizer = config.optimizer.make();
      cc.master_seed = config.master_seed;
      for (const auto& [round, worker] : config.cluster.drops) cc.faults.drop(round, worker);
      cc.exec.threads = config.threads;
      reports.push_back(simulate_cluster(*obj, cc));
    }
  }
  return reports;
}

std::string cluster_csv(const ExperimentConfig& config, const std::vector<ClusterReport>& reports) {
  std::vector<std::string> lines;
  for (const ClusterReport& rep : reports) {
    for (const RoundRecord& r : rep.rounds) {
      CsvRow row;
      row.add(to_string(rep.mode))
          .add(rep.sigma)
          .add(rep.workers)
          .add(rep.replicas)
          .add(static_cast<std::size_t>(r.round))
          .add(r.loss)
          .add(r.messages_received)
          .add(r.scalars_exchanged)
          .add(r.payload_bytes)
          .add(r.wire_bytes)
          .add(std::string_view(r.replicas_identical ? "1" : "0"));
      lines.push_back(row.str());
    }
  }
  return join_lines(config,
                    "mode,sigma,workers,replicas,round,loss,messages_received,scalars_exchanged,"
                    "payload_bytes,wire_bytes,replicas_identical",
                    lines);
}

}  // namespace pgrad
