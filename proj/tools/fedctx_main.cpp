#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "fedctx/fedctx.hpp"

namespace {

int cmd_run(const std::string& spec_path, const std::string& out_dir,
            const std::optional<std::uint64_t>& seed) {
  fedctx::ExperimentSpec spec = fedctx::load_spec_or_throw(spec_path);
  if (seed) spec.seed = *seed;
  const std::string out = fedctx::resolve_output_dir(out_dir, spec);
  std::cout << "writing results to " << out << '\n';
  return fedctx::run_experiment(spec, out);
}

int cmd_validate(const std::string& spec_path) {
  const auto problems = fedctx::validate_spec(spec_path);
  if (problems.empty()) {
    std::cout << spec_path << ": ok\n";
    return 0;
  }
  std::cerr << spec_path << ": " << problems.size() << " problem(s)\n";
  for (const auto& p : problems) std::cerr << "  " << p << '\n';
  return 1;
}

int cmd_gen_data(const std::string& spec_path, const std::string& out_dir,
                 const std::optional<std::uint64_t>& seed) {
  fedctx::ExperimentSpec spec = fedctx::load_spec_or_throw(spec_path);
  if (seed) spec.seed = *seed;
  fedctx::generate_dataset_files(spec, out_dir);
  std::cout << "wrote dataset to " << out_dir << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated learning simulator with contextual aggregation"};
  app.require_subcommand(1);

  std::string spec_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;

  auto add_seed = [&](CLI::App* cmd) {
    cmd->add_option("--seed", seed, "override the experiment master seed");
  };

  auto* run_cmd = app.add_subcommand("run", "execute every run in an experiment spec");
  run_cmd->add_option("spec", spec_path, "experiment spec file")->required();
  run_cmd->add_option("--out", out_dir,
                      "output directory (default: spec output, then $FEDCTX_OUT)");
  add_seed(run_cmd);

  auto* validate_cmd =
      app.add_subcommand("validate", "check an experiment spec without running it");
  validate_cmd->add_option("spec", spec_path, "experiment spec file")->required();

  auto* gen_cmd = app.add_subcommand("gen-data",
                                     "write a spec's synthetic dataset as CSV files");
  gen_cmd->add_option("spec", spec_path, "experiment spec file")->required();
  gen_cmd->add_option("--out", out_dir, "target directory")->required();
  add_seed(gen_cmd);

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) return cmd_run(spec_path, out_dir, seed);
    if (validate_cmd->parsed()) return cmd_validate(spec_path);
    if (gen_cmd->parsed()) return cmd_gen_data(spec_path, out_dir, seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}
