// pgrad: experiment runner for the gradient estimators.
//
//   pgrad fig3 --out fig3.csv
//   pgrad fig4 --config fig4.json --seed 3 --threads 4 --out fig4.csv
//   pgrad moments --dump estimates.jsonl --out moments.csv
//
// Every subcommand accepts --config, --seed, --out, --threads, --budget-mode.
// Results go to --out (stdout when absent); a per-label summary goes to stderr.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "pgrad/errors.hpp"
#include "pgrad/experiments.hpp"

namespace {

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> threads;
  std::optional<std::string> budget_mode;
  std::string dump;         // moments only
  std::string json_report;  // cluster only
  std::string save_config;
};

void add_common(CLI::App* sub, CommonOptions& o) {
  sub->add_option("--config", o.config_path, "JSON config file (defaults when absent)");
  sub->add_option("--seed", o.seed, "master seed");
  sub->add_option("--out", o.out, "output CSV path (stdout when absent)");
  sub->add_option("--threads", o.threads, "worker threads")->check(CLI::PositiveNumber);
  sub->add_option("--budget-mode", o.budget_mode, "sample budget accounting")
      ->check(CLI::IsMember({"per-sample", "per-eval"}));
  sub->add_option("--save-config", o.save_config, "write the effective config as JSON");
}

pgrad::ExperimentConfig resolve(pgrad::Experiment e, const CommonOptions& o) {
  pgrad::ExperimentConfig c =
      o.config_path.empty() ? pgrad::default_config(e) : pgrad::load_config(o.config_path, e);
  if (c.experiment != e) {
    throw pgrad::ConfigError("config is for experiment '" +
                             std::string(pgrad::to_string(c.experiment)) + "', not '" +
                             std::string(pgrad::to_string(e)) + "'");
  }
  if (o.seed) c.master_seed = *o.seed;
  if (o.threads) c.threads = *o.threads;
  if (o.budget_mode) c.budget_mode = pgrad::parse_budget_mode(*o.budget_mode);
  if (!o.out.empty()) c.output = o.out;
  pgrad::validate(c);
  if (!o.save_config.empty()) pgrad::save_config(c, o.save_config);
  return c;
}

void emit(const pgrad::ExperimentConfig& c, const std::string& text) {
  if (c.output.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(c.output, std::ios::binary);
  if (!out) throw pgrad::ConfigError("cannot write output file '" + c.output + "'");
  out << text;
}

int run(pgrad::Experiment e, const CommonOptions& o) {
  using namespace pgrad;
  const ExperimentConfig c = resolve(e, o);
  switch (e) {
    case Experiment::Fig3Sweep:
      emit(c, fig3_csv(c, run_fig3_sweep(c)));
      break;
    case Experiment::Fig2Trajectory: {
      const auto runs = run_fig2_trajectory(c);
      for (const Fig2Run& r : runs) {
        std::fprintf(stderr, "run %zu: f(mu) %g -> fixed %g, learned %g (sigma %g)%s\n", r.run,
                     r.fixed_sigma.points.front().f_mu, r.fixed_sigma.final_point().f_mu,
                     r.learned_sigma.final_point().f_mu, r.learned_sigma.final_point().sigma,
                     r.learned_sigma.aborted ? " [learned run aborted]" : "");
      }
      emit(c, fig2_csv(c, runs));
      break;
    }
    case Experiment::Fig4Nn: {
      const Fig4Result result = run_fig4_nn(c);
      for (const Fig4Summary& s : result.summary) {
        std::fprintf(stderr, "%-24s median final smoothed loss %.6g\n", s.label.c_str(),
                     s.median_final);
      }
      std::fprintf(stderr, "tuned GP sigma %g\n", result.tuned_gp_sigma);
      emit(c, fig4_csv(c, result));
      break;
    }
    case Experiment::MomentsTable: {
      std::ofstream dump;
      if (!o.dump.empty()) {
        dump.open(o.dump, std::ios::binary);
        if (!dump) throw ConfigError("cannot write dump file '" + o.dump + "'");
      }
      emit(c, moments_csv(c, run_moments_table(c, o.dump.empty() ? nullptr : &dump)));
      break;
    }
    case Experiment::ClusterSim: {
      const auto reports = run_cluster(c);
      for (const ClusterReport& r : reports) {
        std::fprintf(stderr, "%-12s sigma %g: replicas consistent %s, %zu bytes/worker/round vs %zu\n",
                     std::string(to_string(r.mode)).c_str(), r.sigma,
                     r.replicas_consistent ? "yes" : "NO", 8 * payload_width(r.mode),
                     r.gradient_bytes_per_worker());
      }
      if (!o.json_report.empty()) {
        nlohmann::json j = nlohmann::json::array();
        for (const ClusterReport& r : reports) j.push_back(r.to_json());
        std::ofstream out(o.json_report, std::ios::binary);
        if (!out) throw ConfigError("cannot write report '" + o.json_report + "'");
        out << j.dump(2) << '\n';
      }
      emit(c, cluster_csv(c, reports));
      break;
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Zeroth-order and directional-derivative gradient estimator experiments"};
  app.require_subcommand(1);

  struct Sub {
    const char* name;
    const char* help;
    pgrad::Experiment experiment;
  };
  const Sub subs[] = {
      {"fig2", "SVO trajectories on the quadratic, fixed and learned sigma",
       pgrad::Experiment::Fig2Trajectory},
      {"fig3", "RMSE sweep over sigma on the quartic", pgrad::Experiment::Fig3Sweep},
      {"fig4", "MLP training curves under each estimator", pgrad::Experiment::Fig4Nn},
      {"cluster", "seed-sharing cluster simulation", pgrad::Experiment::ClusterSim},
      {"moments", "empirical vs analytic bias and variance table",
       pgrad::Experiment::MomentsTable},
  };

  CommonOptions options;
  std::optional<pgrad::Experiment> chosen;
  for (const Sub& s : subs) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    add_common(sub, options);
    if (s.experiment == pgrad::Experiment::MomentsTable) {
      sub->add_option("--dump", options.dump, "write sample estimates as JSON lines");
    }
    if (s.experiment == pgrad::Experiment::ClusterSim) {
      sub->add_option("--json", options.json_report, "write the full cluster report as JSON");
    }
    sub->callback([&chosen, e = s.experiment] { chosen = e; });
  }

  CLI11_PARSE(app, argc, argv);

  try {
    return run(*chosen, options);
  } catch (const pgrad::ConfigError& e) {
    std::fprintf(stderr, "pgrad: config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "pgrad: %s\n", e.what());
    return 1;
  }
}
