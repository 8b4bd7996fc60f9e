#include "gmm_audit/cli/run.hpp"

#include "CLI11.hpp"

#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"GMM estimation with weighting-matrix sensitivity audits"};
  app.set_version_flag("--version", GMM_AUDIT_VERSION);
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  std::uint64_t seed = 0;
  std::string output_dir;
  unsigned threads = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Override the config seed");
  auto* out_opt = app.add_option("--output-dir", output_dir, "Directory for report files");
  app.add_option("--threads", threads, "Worker threads (0: all cores)");

  std::string config;
  auto* run_cmd = app.add_subcommand("run", "Fit, infer and audit as described by a config file");
  run_cmd->add_option("config", config, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  app.add_subcommand("limit-lab", "Run a limit-experiment config")
      ->add_option("config", config, "Limit-lab config (JSON)")->required()->check(CLI::ExistingFile);
  auto* verify_cmd = app.add_subcommand("verify", "Run the exact limit-experiment checks");

  CLI11_PARSE(app, argc, argv);
  gmm_audit::set_threads(threads);

  gmm_audit::cli::RunOptions opts;
  if (*seed_opt) opts.seed = seed;
  if (*out_opt) opts.output_dir = output_dir;

  try {
    if (*verify_cmd) return gmm_audit::cli::verify(std::cout, opts.output_dir);
    const auto outcome = *run_cmd ? gmm_audit::cli::run(config, opts) : gmm_audit::cli::limit_lab_run(config, opts);
    if (outcome.exit_code != 0) {
      const auto& err = outcome.report.at("error");
      std::cerr << "gmm-audit: " << err.at("kind").get<std::string>() << " error: "
                << err.at("message").get<std::string>() << "\n";
    } else {
      std::cout << "wrote " << (outcome.output_dir / "report.json").string() << "\n";
    }
    return outcome.exit_code;
  } catch (const gmm_audit::Error& e) {
    std::cerr << "gmm-audit: " << e.what() << "\n";
    return 2;
  }
}
