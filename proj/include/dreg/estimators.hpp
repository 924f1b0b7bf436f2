#pragma once

// Multi-sample bounds and their gradient estimators: standard IWAE, STL,
// IWAE-DReG, the reweighted wake-sleep updates and their doubly
// reparameterized forms, DReG(alpha), first-order jackknife (JVI), and the
// stop-gradient surrogate objectives that reproduce each update from a
// single backward pass.
//
// Sign conventions. Every estimator except the two RWS inference-network
// updates returns an ascent direction for its objective. RWS-wake and
// RWS-DReG return the gradient of the KL surrogate, i.e. a direction to
// descend; DReG(alpha) at alpha = 1 is therefore the negative of RWS-DReG.
// ascent_direction() converts any estimate to the ascent convention used by
// the surrogate objectives.

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dreg/log_weights.hpp"
#include "dreg/models.hpp"
#include "dreg/rng.hpp"
#include "dreg/tape.hpp"

namespace dreg {

enum class EstimatorId {
  kIwae,
  kStl,
  kIwaeDreg,
  kRwsWake,
  kRwsDreg,
  kDregAlpha,
  kJvi1,
  kJvi1Dreg,
};

struct EstimatorSpec {
  EstimatorId id = EstimatorId::kIwae;
  std::optional<double> alpha;

  /// "IWAE", "STL", "IWAE-DReG", "RWS-wake", "RWS-DReG", "DReG(0.5)", "JVI1", "JVI1-DReG".
  std::string name() const;
  /// Parses name(); "DReG(<alpha>)" carries its own alpha.
  static EstimatorSpec parse(std::string_view s);
  /// Throws when alpha is missing for DReG(alpha), present otherwise, or out of [0, 1].
  void validate() const;

  bool operator==(const EstimatorSpec&) const = default;
};

/// True for estimators that need K >= 2.
bool requires_two_samples(EstimatorId id);

struct GradEstimate {
  EstimatorSpec spec;
  std::size_t k = 0;
  std::vector<double> phi_grad;    // over layout.indices(Role::kPhi)
  std::vector<double> theta_grad;  // over layout.indices(Role::kTheta); may be empty

  void validate() const;
};

// ---------------------------------------------------------------- weights ---

/// Per-sample log weights and partials. Uses the model's closed form when it
/// has one, otherwise the tape.
LogWeightBatch log_weights(const Model& model, const ParamVector& params,
                           std::span<const double> x, const NoiseBatch& noise);

/// Serial tape reference: one small graph per sample, latent z re-entered as
/// a leaf so the z-path and the direct parameter path separate cleanly.
LogWeightBatch log_weights_tape(const Model& model, const ParamVector& params,
                                std::span<const double> x, const NoiseBatch& noise);

/// softmax(log_w) with max shift. Throws on an all -inf batch.
std::vector<double> normalized_weights(std::span<const double> log_w);

/// log mean exp(log_w).
double iwae_bound(std::span<const double> log_w);
inline double iwae_bound(const LogWeightBatch& lw) { return iwae_bound(lw.log_w); }

/// K * IWAE_K - (K-1)/K * sum_i IWAE_{K-1}(leave out i). Requires K >= 2.
double jvi1_estimate(std::span<const double> log_w);
inline double jvi1_estimate(const LogWeightBatch& lw) { return jvi1_estimate(lw.log_w); }

// ------------------------------------------------------------- estimators ---
// The batch-level forms need the layout to split theta and phi; they throw
// when the layout has shared parameters (use surrogate_loss instead).

GradEstimate iwae_grad_standard(const LogWeightBatch& lw, const ParamLayout& layout);
GradEstimate iwae_grad_stl(const LogWeightBatch& lw, const ParamLayout& layout);
GradEstimate iwae_grad_dreg(const LogWeightBatch& lw, const ParamLayout& layout);
GradEstimate rws_theta_grad(const LogWeightBatch& lw, const ParamLayout& layout);
GradEstimate rws_wake_phi_grad(const LogWeightBatch& lw, const ParamLayout& layout);
GradEstimate rws_dreg_phi_grad(const LogWeightBatch& lw, const ParamLayout& layout);
GradEstimate dreg_alpha_phi_grad(double alpha, const LogWeightBatch& lw, const ParamLayout& layout);
GradEstimate jvi1_grad(const LogWeightBatch& lw, const ParamLayout& layout);
GradEstimate jvi1_dreg_grad(const LogWeightBatch& lw, const ParamLayout& layout);

/// Dispatch by spec.
GradEstimate estimate(const EstimatorSpec& spec, const LogWeightBatch& lw, const ParamLayout& layout);
GradEstimate estimate(const EstimatorSpec& spec, const Model& model, const ParamVector& params,
                      std::span<const double> x, const NoiseBatch& noise);

/// Split of the standard phi-gradient into the score term
/// -w~_i d log q(z_i|x)/d phi and the path term w~_i (d log w_i/d z_i)(d z_i/d phi),
/// one row per sample over the phi coordinates. Rows of both sum to the
/// standard phi-gradient.
struct TotalDerivativeTerms {
  std::size_t k = 0;
  std::size_t n_phi = 0;
  std::vector<double> score;  // K x n_phi
  std::vector<double> path;   // K x n_phi
};
TotalDerivativeTerms decompose_total_derivative(const LogWeightBatch& lw, const ParamLayout& layout);

/// Full-length (layout-sized) update in the ascent convention: theta and
/// phi slices scattered back, RWS inference updates negated.
std::vector<double> ascent_direction(const GradEstimate& g, const ParamLayout& layout);

// ------------------------------------------------------------- surrogates ---

enum class SurrogateKind { kIwae, kDregIwae, kRws, kDregRws, kStl, kDregAlpha };

std::string_view surrogate_name(SurrogateKind kind);
SurrogateKind parse_surrogate(std::string_view s);

/// Records the surrogate objective for one observation. Its backward pass
/// yields the corresponding update (ascent convention) for every parameter,
/// shared ones included. Quantities marked "stopped w.r.t. z" evaluate the
/// model at stop_gradient(z_i); "stopped w.r.t. parameters" evaluate it with
/// stop_gradient(params) but the live z_i; normalized weights are fully
/// stopped.
tape::Var surrogate_loss(tape::Graph& g, SurrogateKind kind, const Model& model,
                         std::span<const tape::Var> params, std::span<const double> x,
                         const NoiseBatch& noise, std::optional<double> alpha = std::nullopt);

/// The same objective with every stopped quantity computed from `frozen`
/// parameter nodes instead of stop_gradient nodes. With `frozen` bound to
/// constants equal to `params`, differentiating the value by finite
/// differences in `params` reproduces the surrogate's backward pass.
tape::Var surrogate_loss_frozen(tape::Graph& g, SurrogateKind kind, const Model& model,
                                std::span<const tape::Var> params,
                                std::span<const tape::Var> frozen, std::span<const double> x,
                                const NoiseBatch& noise, std::optional<double> alpha = std::nullopt);

/// Convenience: gradient of surrogate_loss over the whole layout.
std::vector<double> surrogate_gradient(SurrogateKind kind, const Model& model,
                                       const ParamVector& params, std::span<const double> x,
                                       const NoiseBatch& noise,
                                       std::optional<double> alpha = std::nullopt);

/// log w_i with full dependence on the parameters, one node per sample.
std::vector<tape::Var> record_log_weights(tape::Graph& g, const Model& model,
                                          std::span<const tape::Var> params,
                                          std::span<const double> x, const NoiseBatch& noise);

tape::Var record_iwae_bound(std::span<const tape::Var> log_w);
tape::Var record_jvi1_estimate(std::span<const tape::Var> log_w);

/// Objective whose backward pass is the JVI1 update: the plain jackknife
/// estimate when dreg is false, the doubly reparameterized surrogate
/// otherwise. Value is the JVI1 estimate in both cases.
struct RecordedObjective {
  tape::Var surrogate;
  double value = 0.0;
};
RecordedObjective jvi1_objective(tape::Graph& g, const Model& model,
                                 std::span<const tape::Var> params, std::span<const double> x,
                                 const NoiseBatch& noise, bool dreg);

/// Surrogate reproducing an estimator's update (ascent convention).
SurrogateKind surrogate_for(EstimatorId id);

/// Training objective for any estimator: the surrogate to differentiate and,
/// as value, IWAE_K (JVI1 for the jackknife estimators).
RecordedObjective training_objective(tape::Graph& g, const EstimatorSpec& spec,
                                     const Model& model, std::span<const tape::Var> params,
                                     std::span<const double> x, const NoiseBatch& noise);

/// Per-sample JVI1 coefficients on the total derivative (a) and on the
/// DReG path term (b), from the log weights alone.
struct JviCoefficients {
  std::vector<double> total;
  std::vector<double> path;
};
JviCoefficients jvi1_coefficients(std::span<const double> log_w);

}  // namespace dreg
