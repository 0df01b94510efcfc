#pragma once

// Experiment runner behind the `pgrad` CLI: configuration, the figure
// reproductions at desk scale, the moments table and the cluster simulation.
//
// Config files are JSON. Loading starts from the defaults of the named
// experiment and overlays the keys present in the file; unknown keys are
// rejected. to_json writes every field, so save/load round-trips exactly.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "pgrad/analytics.hpp"
#include "pgrad/distributed.hpp"
#include "pgrad/estimators.hpp"
#include "pgrad/optimizer.hpp"
#include "pgrad/svo.hpp"

namespace pgrad {

enum class Experiment { Fig2Trajectory, Fig3Sweep, Fig4Nn, ClusterSim, MomentsTable };

std::string_view to_string(Experiment e);
Experiment parse_experiment(std::string_view name);

/// PerSample: every estimator gets S samples. PerEval: estimators spending one
/// evaluation per sample (GP, GP_Baseline) get 2S so evaluation counts match.
enum class BudgetMode { PerSample, PerEval };

std::string_view to_string(BudgetMode m);
BudgetMode parse_budget_mode(std::string_view name);

struct ObjectiveConfig {
  std::string kind = "quartic";  // quadratic | quartic | constant
  std::size_t dim = 100;
  double value = 1.0;  // constant objective only

  friend bool operator==(const ObjectiveConfig&, const ObjectiveConfig&) = default;
};

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Sgd;
  double learning_rate = 0.1;
  AdamHyperparameters adam;

  OptimizerState make() const;
  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

struct MlpConfig {
  std::size_t classes = 2;
  std::size_t features = 20;
  std::size_t samples_per_class = 1000;
  double separation = 1.0;
  std::vector<std::size_t> hidden{32, 16};
  std::size_t batch = 64;
  std::uint64_t data_seed = 7;

  std::vector<std::size_t> layer_sizes() const;
  friend bool operator==(const MlpConfig&, const MlpConfig&) = default;
};

struct Fig2Config {
  Vector mu0{5.0, -5.0};
  double sigma0 = 5.0;
  std::size_t steps = 150;
  std::size_t runs = 1;
  VarianceReduction variance_reduction = VarianceReduction::None;

  friend bool operator==(const Fig2Config&, const Fig2Config&) = default;
};

/// The number of simulated workers is the config's `samples`.
struct Fig4Config {
  std::size_t steps = 300;
  std::size_t runs = 5;
  Vector gp_sigmas{1e-4, 1e-2, 1e-1, 1.0, 10.0};
  Vector gp_as_sigmas{1e-3, 1e-1};
  /// Sigma for the standalone GP_Baseline curve; 0 means the tuned GP sigma.
  double baseline_sigma = 0.0;
  std::size_t baseline_window = 10;
  std::size_t smoothing = 10;

  friend bool operator==(const Fig4Config&, const Fig4Config&) = default;
};

/// The number of workers is the config's `samples`.
struct ClusterSimConfig {
  std::size_t replicas = 0;
  std::size_t rounds = 50;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> drops;  // (round, worker)

  friend bool operator==(const ClusterSimConfig&, const ClusterSimConfig&) = default;
};

struct ExperimentConfig {
  Experiment experiment = Experiment::Fig3Sweep;
  std::vector<ObjectiveConfig> objectives{ObjectiveConfig{}};
  std::vector<EstimatorKind> estimators;
  std::size_t samples = 5;
  Vector sigmas;
  /// Fixed evaluation point for the moments table; empty means all ones.
  Vector point;
  OptimizerConfig optimizer;
  std::size_t trials = 1000;
  std::uint64_t master_seed = 0;
  std::size_t threads = 1;
  BudgetMode budget_mode = BudgetMode::PerSample;
  std::string output;
  Fig2Config fig2;
  Fig4Config fig4;
  MlpConfig mlp;
  ClusterSimConfig cluster;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// n log-spaced points from lo to hi inclusive.
Vector logspace(double lo, double hi, std::size_t n);

ExperimentConfig default_config(Experiment e);
nlohmann::json to_json(const ExperimentConfig& config);
/// Overlays `j` on default_config(experiment in j, or `fallback`). Throws ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& j,
                                  Experiment fallback = Experiment::Fig3Sweep);
ExperimentConfig load_config(const std::string& path, Experiment fallback);
void save_config(const ExperimentConfig& config, const std::string& path);
/// Throws ConfigError describing the first violated constraint.
void validate(const ExperimentConfig& config);
/// FNV-1a of the canonical JSON dump.
std::string config_hash(const ExperimentConfig& config);
/// Samples an estimator gets under the config's budget mode.
std::size_t budgeted_samples(EstimatorKind kind, std::size_t samples, BudgetMode mode);

/// "# pgrad <experiment> config_hash=<hex> seed=<n>"
std::string csv_comment_line(const ExperimentConfig& config);

// --- RMSE sweep --------------------------------------------------------------

struct Fig3Row {
  EstimatorKind estimator{};
  double sigma = 0.0;
  std::size_t samples = 0;
  std::size_t trials = 0;
  double rmse_empirical = 0.0;
  double rmse_analytic = 0.0;
};

/// Trial t draws x ~ N(0, I) and its perturbations from derive_seed(master, t),
/// shared by every estimator and sigma. RMSE is over coordinates and trials.
std::vector<Fig3Row> run_fig3_sweep(const ExperimentConfig& config);
std::string fig3_csv(const ExperimentConfig& config, const std::vector<Fig3Row>& rows);

// --- SVO trajectories --------------------------------------------------------------

struct Fig2Run {
  std::size_t run = 0;
  std::uint64_t seed = 0;
  SvoTrajectory fixed_sigma;
  SvoTrajectory learned_sigma;
};

/// Run r uses seed derive_seed(master, r) for both variants.
std::vector<Fig2Run> run_fig2_trajectory(const ExperimentConfig& config);
std::string fig2_csv(const ExperimentConfig& config, const std::vector<Fig2Run>& runs);

// --- MLP training --------------------------------------------------------------

struct Fig4Curve {
  std::string label;  // e.g. "GP_AS sigma=0.001"
  EstimatorKind estimator{};
  double sigma = 0.0;
  std::size_t samples = 0;
  std::size_t run = 0;
  Vector loss;      // minibatch loss at the parameters before each step
  Vector smoothed;  // trailing mean over `smoothing` steps
  bool non_finite = false;

  double final_smoothed() const { return smoothed.empty() ? 0.0 : smoothed.back(); }
};

struct Fig4Summary {
  std::string label;
  EstimatorKind estimator{};
  double sigma = 0.0;
  double median_final = 0.0;
};

struct Fig4Result {
  std::vector<Fig4Curve> curves;
  std::vector<Fig4Summary> summary;  // median over runs, one per label
  double tuned_gp_sigma = 0.0;
};

/// Trains the MLP with Adam under each estimator. Run r shares the dataset,
/// initial parameters and minibatch sequence across estimators.
Fig4Result run_fig4_nn(const ExperimentConfig& config);
std::string fig4_csv(const ExperimentConfig& config, const Fig4Result& result);

// --- Moments table ---------------------------------------------------------

struct MomentsTableRow {
  std::string objective;
  MomentsRow row;
};

/// Every objective x estimator x sigma at the config's fixed point.
/// When `dump` is non-null, writes the first min(trials, 8) estimates of each
/// combination as JSON lines.
std::vector<MomentsTableRow> run_moments_table(const ExperimentConfig& config,
                                               std::ostream* dump = nullptr);
std::string moments_csv(const ExperimentConfig& config, const std::vector<MomentsTableRow>& rows);

// --- Cluster ---------------------------------------------------------------

/// One report per estimator in the config.
std::vector<ClusterReport> run_cluster(const ExperimentConfig& config);
std::string cluster_csv(const ExperimentConfig& config, const std::vector<ClusterReport>& reports);

/// Builds the objective described by `c`.
std::unique_ptr<Objective> make_objective(const ObjectiveConfig& c);

}  // namespace pgrad
