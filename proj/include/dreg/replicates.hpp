#pragma once

// Repeated estimator evaluation under common random numbers. Replicate r
// draws its K x d noise block from a fixed offset of one stream, and every
// requested estimator is computed from the same log-weight batch, so
// differences between estimators isolate the estimators themselves.

#include <cstdint>
#include <vector>

#include "dreg/estimators.hpp"
#include "dreg/models.hpp"

namespace dreg {

enum class Execution { kParallel, kSerial };
enum class WeightSource { kAuto, kTape };

struct ReplicatePlan {
  std::vector<EstimatorSpec> estimators;
  std::size_t k = 1;
  std::size_t n = 1000;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
  /// Also record IWAE_K (and JVI1 when K >= 2) per replicate.
  bool record_bounds = false;
  /// Skip this many replicates into the stream (for chunked runs).
  std::uint64_t first_replicate = 0;
};

struct ReplicateResult {
  std::size_t n = 0;
  std::size_t n_phi = 0;
  /// One n x n_phi row-major matrix per estimator in plan order.
  std::vector<std::vector<double>> phi;
  std::vector<double> iwae;
  std::vector<double> jvi;

  std::span<const double> row(std::size_t estimator, std::size_t r) const {
    return std::span<const double>(phi[estimator]).subspan(r * n_phi, n_phi);
  }
};

/// Noise block of replicate r (absolute index) under a plan.
NoiseBatch replicate_noise(const ReplicatePlan& plan, std::size_t latent_dim, std::uint64_t r);

/// Runs the plan. The parallel path splits replicates across OpenMP threads,
/// each writing its own rows, so its output is bit-identical to the serial
/// path. WeightSource::kTape forces the per-sample tape even when the model
/// has a closed form.
ReplicateResult run_replicates(const Model& model, const ParamVector& params,
                               std::span<const double> x, const ReplicatePlan& plan,
                               Execution exec = Execution::kParallel,
                               WeightSource source = WeightSource::kAuto);

/// Number of OpenMP threads the parallel path would use.
int parallel_threads();

}  // namespace dreg
