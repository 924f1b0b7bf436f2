#pragma once

// The three experiment drivers. Each run_* function computes its result in
// memory; write_* turns it into the CSV/report files, and run_experiment
// does both and adds the manifest.

#include <filesystem>
#include <string>
#include <vector>

#include "dreg/config.hpp"
#include "dreg/diagnostics.hpp"
#include "dreg/params.hpp"

namespace dreg {

// ------------------------------------------------------------------ toy-snr ---
// All phi-gradients are reported in the ascent convention, so the RWS
// inference updates are negated and every estimator is comparable with
// the standard IWAE gradient.

struct ToySnrRow {
  EstimatorSpec estimator;
  std::size_t k = 0;
  std::size_t trial = 0;
  std::size_t coordinate = 0;
  double mean = 0.0;
  double variance = 0.0;
  double bias2 = 0.0;
  double snr = 0.0;
};

/// Trial-averaged statistics per (estimator, K, coordinate). snr_signal uses
/// the reference (E[standard IWAE gradient]) as numerator.
struct ToySnrSummaryRow {
  EstimatorSpec estimator;
  std::size_t k = 0;
  std::size_t coordinate = 0;
  double snr = 0.0;
  double snr_signal = 0.0;
  double variance = 0.0;
  double bias2 = 0.0;
};

struct TTestRow {
  EstimatorSpec estimator;
  std::string reference;
  std::size_t k = 0;
  std::size_t trial = 0;
  TTestResult test;
};

struct ToySnrResult {
  std::size_t n_phi = 0;
  std::vector<ToySnrRow> rows;
  std::vector<ToySnrSummaryRow> summary;
  std::vector<TTestRow> ttests;
  /// Reference mean per (K, trial), in k_grid-major order.
  std::vector<std::vector<double>> references;
};

ToySnrResult run_toy_snr(const ExperimentConfig& cfg);
void write_toy_snr(const ToySnrResult& r, const std::filesystem::path& dir);

// ---------------------------------------------------------------- bias-test ---

struct BiasVerdict {
  EstimatorSpec estimator;
  std::string reference;
  std::size_t k = 0;
  std::size_t trial = 0;
  std::vector<TTestResult> coordinates;
  double min_p = 1.0;
  bool bias_detected = false;
};

struct BiasTestResult {
  std::size_t n = 0;
  double p_threshold = 0.01;
  std::vector<BiasVerdict> verdicts;
  std::vector<std::string> skipped;
};

/// Name of the estimator a candidate is tested against: RWS-wake for
/// RWS-DReG, JVI1 for JVI1-DReG, the matching mixture of IWAE and RWS-wake
/// for DReG(alpha), standard IWAE otherwise.
std::string bias_reference_name(const EstimatorSpec& s);

BiasTestResult run_bias_test(const ExperimentConfig& cfg);
std::string bias_report_text(const BiasTestResult& r);
void write_bias_test(const BiasTestResult& r, const std::filesystem::path& dir);

// -------------------------------------------------------------------- train ---

struct TrainRow {
  std::size_t step = 0;
  double train_objective = 0.0;
  double heldout_bound = 0.0;
  double heldout_jvi = 0.0;  // JVI modes only
  double var_trace_theta = 0.0;
  double var_trace_phi = 0.0;
};

struct TrainResult {
  EstimatorSpec estimator;
  std::size_t k = 0;
  bool two_updates = false;  // RWS modes update theta and phi separately
  bool logs_jvi = false;
  std::vector<TrainRow> rows;
  ParamVector params;
};

/// Throws Error on divergence after saving the last finite parameters to
/// `divergence_checkpoint` (when non-empty).
TrainResult run_train(const ExperimentConfig& cfg,
                      const std::filesystem::path& divergence_checkpoint = {});
void write_train(const TrainResult& r, const std::filesystem::path& dir);

// ----------------------------------------------------------------------------

/// Runs cfg.experiment, writing its outputs and manifest.json into `dir`.
void run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& dir);

}  // namespace dreg
