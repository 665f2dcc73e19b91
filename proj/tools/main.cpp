// cta-lab command line front end. Links only the C API.

#include <cstdio>
#include <cstdlib>
#include <string>

#include <CLI11.hpp>

#include "ctalab.h"

int main(int argc, char** argv) {
  CLI::App app{"cta-lab: boundary-determination experiments for semilinear elliptic "
               "problems on product manifolds"};
  app.footer(std::string("subcommands: ") + ctl_known_subcommands());

  std::string subcommand, config_path;
  std::string out_dir = "out";
  int jobs = 0;
  std::uint64_t seed = 0;

  app.add_option("subcommand", subcommand, "experiment stage to run")->required();
  app.add_option("--config", config_path, "experiment config file")->required();
  app.add_option("--out", out_dir, "output directory (env CTA_LAB_OUT)");
  app.add_option("--jobs", jobs, "worker threads (env CTA_LAB_JOBS)");
  app.add_option("--seed", seed, "random seed for sampled families");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  if (jobs == 0) {
    if (const char* env = std::getenv("CTA_LAB_JOBS")) jobs = std::atoi(env);
    if (jobs <= 0) jobs = 2;
  }
  if (out_dir == "out") {
    if (const char* env = std::getenv("CTA_LAB_OUT")) out_dir = env;
  }

  ctl_experiment* exp = nullptr;
  ctl_status st = ctl_experiment_create_from_file(config_path.c_str(), &exp);
  if (st != CTL_OK) {
    std::fprintf(stderr, "error: %s\n", ctl_last_error(nullptr));
    return static_cast<int>(st);
  }
  ctl_experiment_set_output_dir(exp, out_dir.c_str());
  ctl_experiment_set_jobs(exp, jobs);
  ctl_experiment_set_seed(exp, seed);

  st = ctl_experiment_run(exp, subcommand.c_str());
  if (st != CTL_OK) {
    std::fprintf(stderr, "error (%d): %s\n", static_cast<int>(st), ctl_last_error(exp));
  } else {
    std::printf("%s: artifacts written to %s\n", subcommand.c_str(), out_dir.c_str());
  }
  ctl_experiment_destroy(exp);
  return static_cast<int>(st);
}
