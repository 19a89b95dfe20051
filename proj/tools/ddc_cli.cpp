// command line front end: solve | estimate | experiment | verify
#include "ddc/cli.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"dynamic discrete choice: solvers, K-stage estimators, experiments"};
  app.require_subcommand(1);

  std::string config_path, data_path, out_dir = "out", suite = "all";
  std::string estimator = "kml", weight = "identity";
  int K = 1, workers = 0;
  bool full_scale = false, resume = false, force = false;

  CLI::App* solve = app.add_subcommand("solve", "solve the model CCP fixed point");
  solve->add_option("--config", config_path, "config file")->required();

  CLI::App* est = app.add_subcommand("estimate", "K-stage estimation on a dataset");
  est->add_option("--config", config_path, "config file")->required();
  est->add_option("--data", data_path, "dataset CSV (a,x,x_next)")->required();
  est->add_option("--k", K, "number of stages")->check(CLI::PositiveNumber);
  est->add_option("--estimator", estimator, "kml or kmd");
  est->add_option("--weight", weight, "identity or w_av (kmd only)");

  CLI::App* exp = app.add_subcommand("experiment", "run a Monte Carlo experiment");
  exp->add_option("--config", config_path, "config file")->required();
  exp->add_option("--out", out_dir, "output directory");
  exp->add_option("--workers", workers, "worker threads (0 = DDC_WORKERS or hardware)");
  exp->add_flag("--full-scale", full_scale, "use the full replication count");
  exp->add_flag("--resume", resume, "redo a partial run in the output directory");
  exp->add_flag("--force", force, "discard whatever is in the output directory");

  CLI::App* ver = app.add_subcommand("verify", "run property checks");
  ver->add_option("--suite", suite, "model | asymptotics | all");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (solve->parsed()) return ddc::cmd_solve(ddc::load_config_file(config_path), std::cout);
    if (est->parsed())
      return ddc::cmd_estimate(ddc::load_config_file(config_path), data_path, K, estimator,
                               weight, std::cout);
    if (exp->parsed())
      return ddc::cmd_experiment(ddc::load_config_file(config_path), out_dir, workers,
                                 full_scale, resume, force, std::cout);
    if (ver->parsed()) return ddc::cmd_verify(suite, std::cout);
  } catch (const ddc::json::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
