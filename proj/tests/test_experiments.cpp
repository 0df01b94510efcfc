#include <cmath>
#include <cstdio>
#include <sstream>

#include "doctest.h"
#include "pgrad/errors.hpp"
#include "pgrad/experiments.hpp"

using namespace pgrad;

namespace {

const Experiment kAll[] = {Experiment::Fig2Trajectory, Experiment::Fig3Sweep, Experiment::Fig4Nn,
                           Experiment::ClusterSim, Experiment::MomentsTable};

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

ExperimentConfig small_fig4() {
  ExperimentConfig c = default_config(Experiment::Fig4Nn);
  c.samples = 4;
  c.fig4.steps = 6;
  c.fig4.runs = 2;
  c.fig4.gp_sigmas = {0.01, 1.0};
  c.fig4.gp_as_sigmas = {0.01};
  c.mlp.samples_per_class = 20;
  c.mlp.hidden = {5};
  c.mlp.batch = 8;
  return c;
}

}  // namespace

TEST_CASE("defaults validate and round-trip through JSON") {
  for (Experiment e : kAll) {
    const ExperimentConfig c = default_config(e);
    CHECK_NOTHROW(validate(c));
    CHECK(config_from_json(to_json(c)) == c);
    CHECK(config_from_json(nlohmann::json::parse(to_json(c).dump())) == c);
  }
}

TEST_CASE("config files round-trip losslessly") {
  ExperimentConfig c = default_config(Experiment::ClusterSim);
  c.sigmas = {0.1 / 3.0, 0.7};
  c.master_seed = 0xFFFFFFFFFFFFull;
  c.optimizer = {OptimizerKind::Adam, 1.0 / 7.0, {0.8, 0.99, 1e-7}};
  c.cluster.drops = {{5, 3}, {9, 0}};
  const std::string path = "roundtrip_config.json";
  save_config(c, path);
  CHECK(load_config(path, Experiment::Fig3Sweep) == c);
  std::remove(path.c_str());
}

TEST_CASE("partial configs overlay the experiment defaults") {
  const auto j = nlohmann::json::parse(R"({"experiment": "fig3_sweep", "samples": 7,
      "sigmas": {"logspace": [0.01, 1, 3]}, "optimizer": {"learning_rate": 0.5}})");
  const ExperimentConfig c = config_from_json(j);
  CHECK(c.samples == 7);
  REQUIRE(c.sigmas.size() == 3);
  CHECK(c.sigmas[1] == doctest::Approx(0.1));
  CHECK(c.optimizer.learning_rate == 0.5);
  CHECK(c.trials == 1000);
  CHECK(c.objectives[0].kind == "quartic");
  // Without an experiment key the fallback's defaults apply.
  CHECK(config_from_json(nlohmann::json::object(), Experiment::Fig4Nn).samples == 64);
}

TEST_CASE("config errors") {
  auto bad = [](const char* text) { return config_from_json(nlohmann::json::parse(text)); };
  CHECK_THROWS_AS(bad(R"({"experiment": "fig9"})"), ConfigError);
  CHECK_THROWS_AS(bad(R"({"sampels": 3})"), ConfigError);
  CHECK_THROWS_AS(bad(R"({"fig4": {"stepz": 3}})"), ConfigError);
  CHECK_THROWS_AS(bad(R"({"samples": "many"})"), ConfigError);
  CHECK_THROWS_AS(bad(R"({"estimators": ["GP", "ES"]})"), ConfigError);
  CHECK_THROWS_AS(bad(R"({"budget_mode": "per-hour"})"), ConfigError);
  CHECK_THROWS_AS(bad(R"([1, 2])"), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/pgrad.json", Experiment::Fig3Sweep), ConfigError);

  ExperimentConfig c = default_config(Experiment::Fig3Sweep);
  c.sigmas = {0.1, 0.01};
  CHECK_THROWS_AS(validate(c), ConfigError);
  c.sigmas = {0.0, 0.01};
  CHECK_THROWS_AS(validate(c), ConfigError);
  c.sigmas = {0.1, 0.1};
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = default_config(Experiment::Fig3Sweep);
  c.objectives[0].kind = "quadratic";
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = default_config(Experiment::Fig2Trajectory);
  c.fig2.mu0 = {1.0};
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = default_config(Experiment::ClusterSim);
  c.cluster.replicas = 17;
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = default_config(Experiment::MomentsTable);
  c.point = {1.0, 2.0};
  CHECK_THROWS_AS(validate(c), ConfigError);
}

TEST_CASE("helpers") {
  const Vector g = logspace(1e-3, 10.0, 20);
  CHECK(g.size() == 20);
  CHECK(g.front() == 1e-3);
  CHECK(g.back() == 10.0);
  for (std::size_t k = 1; k < g.size(); ++k) CHECK(g[k] / g[k - 1] == doctest::Approx(std::pow(1e4, 1.0 / 19)));
  CHECK(budgeted_samples(EstimatorKind::GP, 5, BudgetMode::PerEval) == 10);
  CHECK(budgeted_samples(EstimatorKind::GP_Baseline, 5, BudgetMode::PerEval) == 10);
  CHECK(budgeted_samples(EstimatorKind::GP_AS, 5, BudgetMode::PerEval) == 5);
  CHECK(budgeted_samples(EstimatorKind::DD, 5, BudgetMode::PerEval) == 5);
  CHECK(budgeted_samples(EstimatorKind::GP, 5, BudgetMode::PerSample) == 5);

  ExperimentConfig c = default_config(Experiment::Fig3Sweep);
  const std::string h = config_hash(c);
  CHECK(h.size() == 16);
  c.threads = 8;
  c.output = "elsewhere.csv";
  CHECK(config_hash(c) == h);
  c.master_seed = 1;
  CHECK(config_hash(c) != h);
  CHECK(csv_comment_line(c) == "# pgrad fig3_sweep config_hash=" + config_hash(c) + " seed=1");
}

TEST_CASE("fig3 sweep: shape, determinism and the documented examples") {
  ExperimentConfig c = default_config(Experiment::Fig3Sweep);
  const auto rows = run_fig3_sweep(c);
  REQUIRE(rows.size() == 60);
  auto rmse = [&](EstimatorKind k, double sigma) {
    for (const Fig3Row& r : rows) {
      if (r.estimator == k && std::abs(r.sigma - sigma) < 1e-12 * sigma) return r.rmse_empirical;
    }
    FAIL("missing row");
    return 0.0;
  };
  const Vector& grid = c.sigmas;
  // GP error at the smallest sigma exceeds the error near sigma = 0.1 tenfold or more.
  double near_tenth = grid[0];
  for (double s : grid) {
    if (std::abs(std::log(s / 0.1)) < std::abs(std::log(near_tenth / 0.1))) near_tenth = s;
  }
  CHECK(rmse(EstimatorKind::GP, grid[0]) >= 10 * rmse(EstimatorKind::GP, near_tenth));
  const double dd0 = rmse(EstimatorKind::DD, grid[0]);
  for (double s : grid) CHECK(rmse(EstimatorKind::DD, s) == doctest::Approx(dd0).epsilon(0.05));
  for (const Fig3Row& r : rows) {
    if (r.sigma <= 0.1) CHECK(r.rmse_analytic == doctest::Approx(r.rmse_empirical).epsilon(0.1));
  }

  c.trials = 50;
  c.sigmas = {0.01, 0.5};
  const std::string one = fig3_csv(c, run_fig3_sweep(c));
  c.threads = 3;
  const std::string three = fig3_csv(c, run_fig3_sweep(c));
  CHECK(one == three);
  const auto ls = lines_of(one);
  REQUIRE(ls.size() == 2 + 6);
  CHECK(ls[0].rfind("# pgrad fig3_sweep config_hash=", 0) == 0);
  CHECK(ls[1] == "estimator,sigma,S,trials,rmse_empirical,rmse_analytic");
  c.budget_mode = BudgetMode::PerEval;
  CHECK(run_fig3_sweep(c)[0].samples == 10);
}

TEST_CASE("fig2 trajectories") {
  ExperimentConfig c = default_config(Experiment::Fig2Trajectory);
  c.fig2.runs = 2;
  c.fig2.steps = 20;
  const auto runs = run_fig2_trajectory(c);
  REQUIRE(runs.size() == 2);
  CHECK(runs[0].fixed_sigma.points.size() == 21);
  CHECK(runs[1].learned_sigma.points.size() == 21);
  CHECK(runs[0].seed != runs[1].seed);
  const std::string csv = fig2_csv(c, runs);
  const auto ls = lines_of(csv);
  CHECK(ls[1] == "variant,run,step,mu_0,mu_1,sigma,U_est,f_mu");
  CHECK(ls.size() == 2 + 2 * 2 * 21);
  c.threads = 2;
  CHECK(fig2_csv(c, run_fig2_trajectory(c)) == csv);
}

TEST_CASE("fig4 curves at toy scale") {
  ExperimentConfig c = small_fig4();
  const Fig4Result r = run_fig4_nn(c);
  // 2 GP sigmas + 1 GP_AS + baseline + DD, two runs each.
  CHECK(r.curves.size() == 10);
  CHECK(r.summary.size() == 5);
  for (const Fig4Curve& curve : r.curves) {
    CHECK(curve.loss.size() == 6);
    CHECK(curve.smoothed.size() == 6);
    CHECK(curve.smoothed[0] == curve.loss[0]);
    CHECK_FALSE(curve.non_finite);
  }
  CHECK((r.tuned_gp_sigma == 0.01 || r.tuned_gp_sigma == 1.0));
  // Per-eval budget: GP draws twice the samples.
  CHECK(r.curves[0].samples == 8);
  CHECK(r.curves.back().samples == 4);
  // All estimators start from the same parameters and minibatch within a run.
  const std::size_t n = r.curves.size();
  CHECK(r.curves[0].run == r.curves[n - 2].run);
  CHECK(r.curves[0].loss[0] == r.curves[n - 2].loss[0]);
  CHECK(r.curves[1].loss[0] == r.curves[n - 1].loss[0]);
  CHECK(r.curves[0].loss[0] != r.curves[1].loss[0]);
  const std::string csv = fig4_csv(c, r);
  CHECK(lines_of(csv)[1] == "label,estimator,sigma,S,run,step,loss,smoothed_loss,flag");
  c.threads = 4;
  CHECK(fig4_csv(c, run_fig4_nn(c)) == csv);
}

TEST_CASE("fig4 flags non-finite losses and continues") {
  ExperimentConfig c = small_fig4();
  c.fig4.runs = 1;
  c.fig4.steps = 30;
  c.fig4.gp_sigmas = {1e3};
  c.fig4.gp_as_sigmas = {};
  c.optimizer.learning_rate = 1e6;
  const Fig4Result r = run_fig4_nn(c);
  REQUIRE(r.curves.size() == 3);
  bool any = false;
  for (const Fig4Curve& curve : r.curves) any = any || curve.non_finite;
  if (any) CHECK(fig4_csv(c, r).find("non_finite") != std::string::npos);
  CHECK(r.curves.back().estimator == EstimatorKind::DD);
}

TEST_CASE("moments table with JSON-lines dump") {
  ExperimentConfig c = default_config(Experiment::MomentsTable);
  c.trials = 200;
  c.sigmas = {0.1};
  std::ostringstream dump;
  const auto rows = run_moments_table(c, &dump);
  CHECK(rows.size() == 2 * 5);
  CHECK(rows[0].objective == "quadratic10");
  const auto dump_lines = lines_of(dump.str());
  CHECK(dump_lines.size() == 10 * 8);
  CHECK(nlohmann::json::parse(dump_lines[0]).at("estimator") == "GP");
  const std::string csv = moments_csv(c, rows);
  CHECK(lines_of(csv)[1] == std::string("objective,") + kMomentsCsvHeader);
  CHECK(moments_csv(c, run_moments_table(c)) == csv);
}

TEST_CASE("cluster experiment") {
  ExperimentConfig c = default_config(Experiment::ClusterSim);
  c.cluster.rounds = 5;
  const auto reports = run_cluster(c);
  REQUIRE(reports.size() == 5);
  for (const ClusterReport& r : reports) CHECK(r.replicas_consistent);
  const auto ls = lines_of(cluster_csv(c, reports));
  CHECK(ls.size() == 2 + 25);
  CHECK(ls[2].substr(0, 3) == "GP,");
}
