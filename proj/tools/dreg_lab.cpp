// dreg-lab: runs one experiment from a JSON config.
//
//   dreg-lab <toy-snr|train|bias-test> --config <path> [--seed N] [--out DIR]
//
// Exit status: 0 success, 1 configuration or usage error, 2 runtime failure.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "dreg/config.hpp"
#include "dreg/error.hpp"
#include "dreg/experiments.hpp"

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gradient-estimator lab: toy SNR sweeps, bias tests and VAE training"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  for (const char* name : {"toy-snr", "train", "bias-test"}) {
    CLI::App* sub = app.add_subcommand(name, std::string("run the ") + name + " experiment");
    sub->add_option("--config", config_path, "JSON config file")->required();
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--out", out_dir, "output directory (default: the config's output key)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  dreg::ExperimentConfig cfg;
  try {
    cfg = dreg::load_config(config_path, dreg::parse_experiment(command));
    if (seed) cfg.seed = *seed;
    if (!out_dir.empty()) cfg.output = out_dir;
    cfg.validate();
  } catch (const dreg::ConfigError& e) {
    std::cerr << "dreg-lab: config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "dreg-lab: config error: " << e.what() << "\n";
    return kExitConfig;
  }
  if (cfg.code_version != dreg::kCodeVersion)
    std::cerr << "dreg-lab: warning: config was written by " << cfg.code_version << ", running "
              << dreg::kCodeVersion << "\n";

  try {
    dreg::run_experiment(cfg, cfg.output);
  } catch (const dreg::ConfigError& e) {
    std::cerr << "dreg-lab: config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "dreg-lab: " << command << " failed: " << e.what() << "\n";
    return kExitRuntime;
  }
  std::cout << command << ": wrote " << cfg.output << "\n";
  return 0;
}
