#pragma once

// Experiment configuration: a JSON object read from disk, checked strictly
// (unknown keys are errors), and written back with every field resolved as
// the run manifest.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "dreg/estimators.hpp"
#include "dreg/models.hpp"
#include "dreg/optim.hpp"

namespace dreg {

inline constexpr std::string_view kCodeVersion = "dreg-lab 1.0.0";

enum class Experiment { kToySnr, kTrain, kBiasTest };
std::string_view experiment_name(Experiment e);
Experiment parse_experiment(std::string_view s);

enum class Reference { kExact, kMonteCarlo };

struct DataConfig {
  std::string source = "synthetic";  // "synthetic" or "mnist"
  std::size_t n = 1000;              // synthetic image count
  double train_fraction = 0.8;
  double valid_fraction = 0.1;
  double test_fraction = 0.1;
  std::string train_images;  // IDX3 paths for mnist
  std::string test_images;
  std::size_t mnist_valid = 10000;
};

struct ExperimentConfig {
  Experiment experiment = Experiment::kToySnr;
  std::uint64_t seed = 1;
  std::string output = "out";
  std::string code_version{kCodeVersion};

  ToyConfig toy;
  double perturb_sigma = 0.01;
  VaeConfig vae;

  /// toy-snr and bias-test sweep these; train uses `estimator`.
  std::vector<EstimatorSpec> estimators;
  EstimatorSpec estimator{EstimatorId::kIwaeDreg, {}};
  std::vector<std::size_t> k_grid;
  std::size_t k = 8;

  std::size_t trials = 10;
  std::size_t samples = 1000;
  Reference reference = Reference::kExact;
  std::size_t reference_samples = 1000000;
  double p_threshold = 0.01;

  AdamConfig optimizer;
  std::size_t batch_size = 20;
  std::size_t steps = 2000;
  std::size_t epochs = 0;  // 0: bounded by steps only
  std::size_t eval_every = 50;
  std::size_t eval_k = 8;
  std::size_t eval_points = 0;  // 0: the whole test split
  double ema_decay = 0.99;
  DataConfig data;

  /// Throws ConfigError on any inconsistent setting.
  void validate() const;
};

/// Defaults for one experiment kind.
ExperimentConfig default_config(Experiment e);

/// Parses a JSON config. Missing keys take the experiment's defaults (the
/// experiment key itself may be omitted when `fallback` is supplied).
/// Throws ConfigError on syntax errors, unknown keys, or bad values.
ExperimentConfig parse_config(std::string_view text,
                              std::optional<Experiment> fallback = std::nullopt);
ExperimentConfig load_config(const std::filesystem::path& path,
                             std::optional<Experiment> fallback = std::nullopt);

/// Fully resolved config, one key per field, stable key order.
std::string manifest_text(const ExperimentConfig& cfg);

}  // namespace dreg
