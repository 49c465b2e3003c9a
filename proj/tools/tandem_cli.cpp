// tandem_cli: run single tandem experiments, sweep grids of them, and
// aggregate results into plot-ready CSV.

#include <CLI11.hpp>

#include <optional>
#include <string>
#include <vector>

#include "tandem/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Tandem reinforcement learning experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::vector<std::string> overrides;
  auto* run = app.add_subcommand("run", "Run one experiment");
  run->add_option("config", config_path, "Config file")->required();
  run->add_option("--seed", seed, "Master seed (overrides run.seed)");
  run->add_option("--out", out, "Output directory for metrics.csv and manifest.txt");
  run->add_option("--override", overrides, "key=value, applied after the config file")->allow_extra_args(false);

  std::string sweep_path;
  int parallel = 1;
  bool resume = false;
  auto* sweep = app.add_subcommand("sweep", "Run every cell of a sweep file");
  sweep->add_option("sweep", sweep_path, "Sweep file")->required();
  sweep->add_option("--parallel", parallel, "Concurrent workers")->check(CLI::PositiveNumber);
  sweep->add_flag("--resume", resume, "Skip cells whose manifest already exists");

  std::string root;
  bool relative = false;
  std::optional<std::string> csv_out;
  auto* report = app.add_subcommand("report", "Aggregate completed runs across seeds");
  report->add_option("root", root, "Results root")->required();
  report->add_flag("--relative", relative, "Add relative passive performance columns");
  report->add_option("--csv", csv_out, "Write the table here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  if (*run) return tandem::run_command(config_path, seed, out, overrides);
  if (*sweep) return tandem::sweep_command(sweep_path, parallel, resume);
  return tandem::report_command(root, relative, csv_out);
}
