#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dreg/gaussian.hpp"
#include "dreg/log_weights.hpp"
#include "dreg/params.hpp"
#include "dreg/rng.hpp"
#include "dreg/tape.hpp"

namespace dreg {

/// A latent-variable model p_theta(x, z) with an amortized Gaussian
/// inference network q_phi(z | x). Parameters arrive as tape nodes laid out
/// per layout(); the same builders serve live, stopped and frozen copies.
class Model {
 public:
  virtual ~Model() = default;

  virtual const ParamLayout& layout() const = 0;
  virtual std::size_t latent_dim() const = 0;
  virtual std::size_t obs_dim() const = 0;

  virtual DiagGaussian inference(tape::Graph& g, std::span<const tape::Var> params,
                                 std::span<const double> x) const = 0;

  virtual tape::Var log_joint(tape::Graph& g, std::span<const tape::Var> params,
                              std::span<const double> x,
                              std::span<const tape::Var> z) const = 0;

  /// Fills `out` analytically when the model has a closed form; returns false
  /// when callers must fall back to the tape.
  virtual bool closed_form_log_weights(const ParamVector& params, std::span<const double> x,
                                       const NoiseBatch& noise, LogWeightBatch& out) const {
    (void)params, (void)x, (void)noise, (void)out;
    return false;
  }
};

// ---------------------------------------------------------------------------
// Linear-Gaussian toy: z ~ N(theta, I), x | z ~ N(z, I),
// q(z | x) = N(A x + b, v I) with v fixed (2/3 by default).

struct ToyConfig {
  std::size_t dim = 4;
  double q_variance = 2.0 / 3.0;
  /// Shared-parameter variant: b is replaced by theta / 2, so theta feeds
  /// both p and q.
  bool tie_bias_to_theta = false;
};

class ToyModel final : public Model {
 public:
  explicit ToyModel(ToyConfig cfg = {});

  const ParamLayout& layout() const override { return layout_; }
  std::size_t latent_dim() const override { return cfg_.dim; }
  std::size_t obs_dim() const override { return cfg_.dim; }
  const ToyConfig& config() const { return cfg_; }

  DiagGaussian inference(tape::Graph& g, std::span<const tape::Var> params,
                         std::span<const double> x) const override;
  tape::Var log_joint(tape::Graph& g, std::span<const tape::Var> params,
                      std::span<const double> x,
                      std::span<const tape::Var> z) const override;
  bool closed_form_log_weights(const ParamVector& params, std::span<const double> x,
                               const NoiseBatch& noise, LogWeightBatch& out) const override;

  /// Assemble a parameter vector; `b` is ignored in the tied variant.
  ParamVector make_params(std::span<const double> theta, std::span<const double> a,
                          std::span<const double> b) const;

  /// Mean of q(z | x) under the given parameters.
  std::vector<double> inference_mean(const ParamVector& p, std::span<const double> x) const;

 private:
  ToyConfig cfg_;
  ParamLayout layout_;
};

/// log N(x; theta, 2I), the exact marginal likelihood.
double toy_log_marginal(const ToyModel& m, const ParamVector& p, std::span<const double> x);

struct ToyInference {
  std::vector<double> a;  // d x d row-major
  std::vector<double> b;
};

/// Posterior mean map of the toy model: p(z | x) = N((x + theta) / 2, I / 2),
/// so A* = I / 2 and b* = theta / 2.
ToyInference toy_optimal_inference(std::span<const double> theta);

/// One toy trial: generative theta ~ N(0, I), an observation x drawn from the
/// model, and parameters at the optimum perturbed by N(0, sigma^2).
struct ToyTrial {
  std::vector<double> theta_true;
  std::vector<double> x;
  ParamVector params;
};
ToyTrial make_toy_trial(const ToyModel& m, double perturb_sigma, std::uint64_t seed,
                        std::uint64_t trial);

// ---------------------------------------------------------------------------
// MLP variational autoencoder with two tanh hidden layers on each side,
// isotropic Gaussian prior and factorized Bernoulli likelihood.

struct VaeConfig {
  std::size_t latent = 10;
  std::size_t hidden = 20;
  std::size_t obs = 64;
};

class MlpVae final : public Model {
 public:
  explicit MlpVae(VaeConfig cfg = {});

  const ParamLayout& layout() const override { return layout_; }
  std::size_t latent_dim() const override { return cfg_.latent; }
  std::size_t obs_dim() const override { return cfg_.obs; }
  const VaeConfig& config() const { return cfg_; }

  DiagGaussian inference(tape::Graph& g, std::span<const tape::Var> params,
                         std::span<const double> x) const override;
  tape::Var log_joint(tape::Graph& g, std::span<const tape::Var> params,
                      std::span<const double> x,
                      std::span<const tape::Var> z) const override;

  /// Decoder logits for a latent vector.
  std::vector<tape::Var> decode(tape::Graph& g, std::span<const tape::Var> params,
                                std::span<const tape::Var> z) const;

  /// Glorot-uniform weights, zero biases.
  ParamVector init_params(std::uint64_t seed) const;

 private:
  VaeConfig cfg_;
  ParamLayout layout_;
};

}  // namespace dreg
