#pragma once

#include <span>
#include <vector>

#include "dreg/tape.hpp"

namespace dreg {

/// Diagonal Gaussian N(mean, diag(exp(log_scale))^2) recorded on a tape.
struct DiagGaussian {
  std::vector<tape::Var> mean;
  std::vector<tape::Var> log_scale;

  DiagGaussian() = default;
  /// Throws on dimension mismatch or a non-finite / zero scale.
  DiagGaussian(std::vector<tape::Var> mean, std::vector<tape::Var> log_scale);

  std::size_t dim() const { return mean.size(); }
};

/// z = mean + exp(log_scale) * eps, recorded so dz/d(mean, log_scale) flows.
std::vector<tape::Var> sample_reparam(const DiagGaussian& q, std::span<const double> eps);

/// log N(z; mean, scale^2), summed over coordinates.
tape::Var log_prob(const DiagGaussian& q, std::span<const tape::Var> z);

/// Same distribution with every parameter node passed through stop_gradient.
DiagGaussian stopped(const DiagGaussian& q);

/// Factorized Bernoulli log-likelihood in the log-sigmoid form
/// x*l - softplus(l); x must be 0/1.
tape::Var bernoulli_log_prob(std::span<const tape::Var> logits, std::span<const double> x);

/// Plain-double counterpart of log_prob for a single coordinate.
double normal_log_density(double z, double mean, double log_scale);

inline constexpr double kHalfLog2Pi = 0.91893853320467274178;

}  // namespace dreg
