#include "dreg/replicates.hpp"

#include <exception>
#include <mutex>

#include <omp.h>

namespace dreg {

namespace {

void run_one(const Model& model, const ParamVector& params, std::span<const double> x,
             const ReplicatePlan& plan, WeightSource source, std::size_t r, ReplicateResult& out) {
  const NoiseBatch noise = replicate_noise(plan, model.latent_dim(), plan.first_replicate + r);
  const LogWeightBatch lw = source == WeightSource::kTape
                                ? log_weights_tape(model, params, x, noise)
                                : log_weights(model, params, x, noise);
  for (std::size_t e = 0; e < plan.estimators.size(); ++e) {
    const GradEstimate g = estimate(plan.estimators[e], lw, model.layout());
    g.validate();
    std::copy(g.phi_grad.begin(), g.phi_grad.end(),
              out.phi[e].begin() + static_cast<std::ptrdiff_t>(r * out.n_phi));
  }
  if (plan.record_bounds) {
    out.iwae[r] = iwae_bound(lw);
    if (plan.k >= 2) out.jvi[r] = jvi1_estimate(lw);
  }
}

}  // namespace

NoiseBatch replicate_noise(const ReplicatePlan& plan, std::size_t latent_dim, std::uint64_t r) {
  return NoiseBatch::draw(plan.k, latent_dim, plan.seed, plan.stream, r * plan.k * latent_dim);
}

int parallel_threads() { return omp_get_max_threads(); }

ReplicateResult run_replicates(const Model& model, const ParamVector& params,
                               std::span<const double> x, const ReplicatePlan& plan,
                               Execution exec, WeightSource source) {
  if (plan.k == 0) throw Error("replicates: K must be at least 1");
  for (const auto& spec : plan.estimators) {
    spec.validate();
    if (requires_two_samples(spec.id) && plan.k < 2)
      throw Error("replicates: " + spec.name() + " requires K >= 2");
  }
  ReplicateResult out;
  out.n = plan.n;
  out.n_phi = model.layout().indices(Role::kPhi).size();
  out.phi.assign(plan.estimators.size(), std::vector<double>(plan.n * out.n_phi, 0.0));
  if (plan.record_bounds) {
    out.iwae.assign(plan.n, 0.0);
    if (plan.k >= 2) out.jvi.assign(plan.n, 0.0);
  }

  if (exec == Execution::kSerial) {
    for (std::size_t r = 0; r < plan.n; ++r) run_one(model, params, x, plan, source, r, out);
    return out;
  }

  std::exception_ptr failure;
  std::mutex failure_mutex;
  const auto n = static_cast<std::int64_t>(plan.n);
#pragma omp parallel for schedule(static)
  for (std::int64_t r = 0; r < n; ++r) {
    try {
      run_one(model, params, x, plan, source, static_cast<std::size_t>(r), out);
    } catch (...) {
      std::lock_guard<std::mutex> lock(failure_mutex);
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

}  // namespace dreg
