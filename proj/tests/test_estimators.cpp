#include <doctest.h>

#include <cmath>

#include "dreg/estimators.hpp"
#include "helpers.hpp"

using namespace dreg;
using dreg::testing::max_abs_diff;
using dreg::testing::max_rel_diff;
using dreg::testing::negated;

namespace {

struct Fixture {
  ToyModel model{ToyConfig{3}};
  ToyTrial trial = dreg::testing::rough_trial(model);
  NoiseBatch eps = dreg::testing::noise(5, 3);
  LogWeightBatch lw = log_weights(model, trial.params, trial.x, eps);
};

/// Exact-posterior configuration: q-variance 1/2 at the optimal mean map.
struct PosteriorFixture {
  ToyModel model{ToyConfig{2, 0.5}};
  ParamVector params;
  std::vector<double> x{0.7, -1.3};
  PosteriorFixture() {
    const std::vector<double> theta{0.4, -0.2};
    const auto opt = toy_optimal_inference(theta);
    params = model.make_params(theta, opt.a, opt.b);
  }
};

std::vector<double> tape_iwae_gradient(const Model& m, const ParamVector& p, std::span<const double> x,
                                       const NoiseBatch& eps) {
  tape::Graph g;
  const auto live = g.leaves(p.flat);
  const auto lw = record_log_weights(g, m, live, x, eps);
  return g.backward(record_iwae_bound(lw)).gather(live);
}

std::vector<double> objective_gradient(const Model& m, const ParamVector& p, std::span<const double> x,
                                       const NoiseBatch& eps, bool dreg) {
  tape::Graph g;
  const auto live = g.leaves(p.flat);
  const auto obj = jvi1_objective(g, m, live, x, eps, dreg);
  return g.backward(obj.surrogate).gather(live);
}

/// Central-difference check of a surrogate whose stopped quantities are
/// pinned at `p`.
double surrogate_fd_error(SurrogateKind kind, const Model& m, const ParamVector& p,
                          std::span<const double> x, const NoiseBatch& eps,
                          std::optional<double> alpha = std::nullopt) {
  const std::vector<double> at = p.flat;
  const std::vector<double> xs(x.begin(), x.end());
  tape::TapeFunction f = [&, at, xs](tape::Graph& g, std::span<const tape::Var> live) {
    std::vector<tape::Var> frozen;
    for (double v : at) frozen.push_back(g.constant(v));
    return surrogate_loss_frozen(g, kind, m, live, frozen, xs, eps, alpha);
  };
  // The frozen and stop-gradient forms must agree on value and gradient.
  const auto frozen_grad = tape::value_and_gradient(f, at).gradient;
  const auto stop_grad = surrogate_gradient(kind, m, p, x, eps, alpha);
  CHECK(max_rel_diff(frozen_grad, stop_grad) < 1e-12);
  return tape::finite_diff_check(f, at, 1e-5);
}

}  // namespace

TEST_SUITE("estimators") {
  TEST_CASE("closed-form toy partials equal the tape reference") {
    Fixture f;
    const auto tape = log_weights_tape(f.model, f.trial.params, f.trial.x, f.eps);
    CHECK(max_rel_diff(f.lw.log_w, tape.log_w) < 1e-12);
    CHECK(max_rel_diff(f.lw.path, tape.path) < 1e-12);
    CHECK(max_rel_diff(f.lw.dlogp, tape.dlogp) < 1e-12);
    CHECK(max_rel_diff(f.lw.dlogq, tape.dlogq) < 1e-12);
    CHECK(max_rel_diff(f.lw.dlogw_dz, tape.dlogw_dz) < 1e-12);
    CHECK(tape.noise_seed == f.eps.seed);
    CHECK(tape.noise_stream == f.eps.stream);
  }

  TEST_CASE("log weights at the exact posterior are constant and equal the marginal") {
    PosteriorFixture p;
    const auto lw = log_weights(p.model, p.params, p.x, dreg::testing::noise(16, 2));
    const double marginal = toy_log_marginal(p.model, p.params, p.x);
    for (double v : lw.log_w) CHECK(v == doctest::Approx(marginal).epsilon(1e-12));
  }

  TEST_CASE("normalized weights form a probability vector; K=1 gives weight 1") {
    Fixture f;
    const auto w = normalized_weights(f.lw.log_w);
    double s = 0.0;
    for (double v : w) {
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
    const std::vector<double> one{-123.4};
    CHECK(normalized_weights(one)[0] == 1.0);
    const std::vector<double> dead(3, -INFINITY);
    CHECK_THROWS_AS(normalized_weights(dead), Error);
  }

  TEST_CASE("iwae bound") {
    const std::vector<double> single{-2.5};
    CHECK(iwae_bound(single) == -2.5);
    const std::vector<double> equal(7, 1.25);
    CHECK(iwae_bound(equal) == doctest::Approx(1.25).epsilon(1e-15));
    const std::vector<double> big{1000.0, 1000.0};
    CHECK(iwae_bound(big) == doctest::Approx(1000.0));
  }

  TEST_CASE("standard IWAE gradient equals the tape gradient of the bound") {
    Fixture f;
    const auto g = iwae_grad_standard(f.lw, f.model.layout());
    const auto full = tape_iwae_gradient(f.model, f.trial.params, f.trial.x, f.eps);
    CHECK(max_rel_diff(ascent_direction(g, f.model.layout()), full) < 1e-12);
  }

  TEST_CASE("K=1 standard phi-gradient is the total derivative including the score term") {
    Fixture f;
    const auto eps = dreg::testing::noise(1, 3);
    const auto lw = log_weights(f.model, f.trial.params, f.trial.x, eps);
    const auto g = iwae_grad_standard(lw, f.model.layout());
    const auto phi = f.model.layout().indices(Role::kPhi);
    for (std::size_t j = 0; j < phi.size(); ++j)
      CHECK(g.phi_grad[j] ==
            doctest::Approx(lw.path[phi[j]] + lw.dlogp[phi[j]] - lw.dlogq[phi[j]]).epsilon(1e-14));
  }

  TEST_CASE("total-derivative decomposition sums to the standard phi-gradient") {
    Fixture f;
    const auto t = decompose_total_derivative(f.lw, f.model.layout());
    const auto g = iwae_grad_standard(f.lw, f.model.layout());
    std::vector<double> sum(t.n_phi, 0.0);
    std::vector<double> score(t.n_phi, 0.0);
    for (std::size_t i = 0; i < t.k; ++i)
      for (std::size_t j = 0; j < t.n_phi; ++j) {
        sum[j] += t.score[i * t.n_phi + j] + t.path[i * t.n_phi + j];
        score[j] += t.score[i * t.n_phi + j];
      }
    CHECK(max_rel_diff(sum, g.phi_grad) < 1e-12);
    // The wake update is the summed score term with the sign flipped twice.
    CHECK(max_rel_diff(score, rws_wake_phi_grad(f.lw, f.model.layout()).phi_grad) < 1e-14);
  }

  TEST_CASE("exact collapses at K=1") {
    ToyModel m(ToyConfig{3});
    const auto trial = dreg::testing::rough_trial(m, 3);
    for (std::uint64_t s = 0; s < 5; ++s) {
      const auto lw = log_weights(m, trial.params, trial.x, dreg::testing::noise(1, 3, s));
      const auto& layout = m.layout();
      const auto dreg_g = iwae_grad_dreg(lw, layout).phi_grad;
      CHECK(max_rel_diff(dreg_g, iwae_grad_stl(lw, layout).phi_grad) < 1e-12);
      for (double v : rws_dreg_phi_grad(lw, layout).phi_grad) CHECK(v == 0.0);
      for (double alpha : {0.0, 0.3, 0.5, 1.0}) {
        auto expect = dreg_g;
        for (auto& v : expect) v *= 1.0 - alpha;
        CHECK(max_rel_diff(dreg_alpha_phi_grad(alpha, lw, layout).phi_grad, expect) < 1e-12);
      }
    }
  }

  TEST_CASE("DReG(alpha) endpoints and midpoint") {
    Fixture f;
    const auto& layout = f.model.layout();
    CHECK(max_rel_diff(dreg_alpha_phi_grad(0.0, f.lw, layout).phi_grad,
                       iwae_grad_dreg(f.lw, layout).phi_grad) < 1e-12);
    CHECK(max_rel_diff(dreg_alpha_phi_grad(1.0, f.lw, layout).phi_grad,
                       negated(rws_dreg_phi_grad(f.lw, layout).phi_grad)) < 1e-12);
    auto half_stl = iwae_grad_stl(f.lw, layout).phi_grad;
    for (auto& v : half_stl) v *= 0.5;
    CHECK(max_rel_diff(dreg_alpha_phi_grad(0.5, f.lw, layout).phi_grad, half_stl) < 1e-12);
    CHECK_THROWS_AS(dreg_alpha_phi_grad(1.5, f.lw, layout), ConfigError);
    CHECK_THROWS_AS(dreg_alpha_phi_grad(-0.1, f.lw, layout), ConfigError);
  }

  TEST_CASE("RWS theta-gradient equals the IWAE theta-gradient with disjoint parameters") {
    Fixture f;
    const auto& layout = f.model.layout();
    CHECK(max_rel_diff(rws_theta_grad(f.lw, layout).theta_grad,
                       iwae_grad_standard(f.lw, layout).theta_grad) < 1e-12);
    CHECK(rws_theta_grad(f.lw, layout).phi_grad.empty());
    CHECK(rws_wake_phi_grad(f.lw, layout).theta_grad.empty());
  }

  TEST_CASE("K=1 RWS theta-gradient is the joint score") {
    Fixture f;
    const auto lw = log_weights(f.model, f.trial.params, f.trial.x, dreg::testing::noise(1, 3));
    const auto g = rws_theta_grad(lw, f.model.layout());
    for (std::size_t j = 0; j < 3; ++j) CHECK(g.theta_grad[j] == doctest::Approx(lw.dlogp[j]));
  }

  TEST_CASE("IWAE-DReG and RWS-DReG vanish per sample when q is the posterior") {
    PosteriorFixture p;
    for (std::size_t k : {1u, 2u, 16u}) {
      const auto lw = log_weights(p.model, p.params, p.x, dreg::testing::noise(k, 2, k));
      for (double v : iwae_grad_dreg(lw, p.model.layout()).phi_grad) CHECK(std::abs(v) < 1e-12);
      for (double v : rws_dreg_phi_grad(lw, p.model.layout()).phi_grad) CHECK(std::abs(v) < 1e-12);
    }
  }

  TEST_CASE("surrogate backward equals the direct estimator for every kind") {
    Fixture f;
    const auto& layout = f.model.layout();
    auto surrogate = [&](SurrogateKind kind, std::optional<double> alpha = std::nullopt) {
      return surrogate_gradient(kind, f.model, f.trial.params, f.trial.x, f.eps, alpha);
    };
    auto direct = [&](const GradEstimate& theta, const GradEstimate& phi) {
      GradEstimate g = phi;
      g.theta_grad = theta.theta_grad;
      return ascent_direction(g, layout);
    };
    const auto rws_theta = rws_theta_grad(f.lw, layout);
    CHECK(max_rel_diff(surrogate(SurrogateKind::kIwae),
                       ascent_direction(iwae_grad_standard(f.lw, layout), layout)) < 1e-12);
    CHECK(max_rel_diff(surrogate(SurrogateKind::kDregIwae),
                       ascent_direction(iwae_grad_dreg(f.lw, layout), layout)) < 1e-12);
    CHECK(max_rel_diff(surrogate(SurrogateKind::kRws),
                       direct(rws_theta, rws_wake_phi_grad(f.lw, layout))) < 1e-12);
    CHECK(max_rel_diff(surrogate(SurrogateKind::kDregRws),
                       direct(rws_theta, rws_dreg_phi_grad(f.lw, layout))) < 1e-12);
    CHECK(max_rel_diff(surrogate(SurrogateKind::kStl),
                       ascent_direction(iwae_grad_stl(f.lw, layout), layout)) < 1e-12);
    for (double alpha : {0.0, 0.25, 0.5, 1.0})
      CHECK(max_rel_diff(surrogate(SurrogateKind::kDregAlpha, alpha),
                         direct(rws_theta, dreg_alpha_phi_grad(alpha, f.lw, layout))) < 1e-12);
  }

  TEST_CASE("surrogate backward equals the direct estimator on the VAE") {
    MlpVae m(VaeConfig{2, 3, 6});
    auto p = m.init_params(5);
    p = perturb_params(p, 0.3, 9);
    const std::vector<double> x{1, 0, 0, 1, 1, 0};
    const auto eps = dreg::testing::noise(4, 2);
    const auto lw = log_weights(m, p, x, eps);
    const auto& layout = m.layout();
    CHECK(max_rel_diff(surrogate_gradient(SurrogateKind::kDregIwae, m, p, x, eps),
                       ascent_direction(iwae_grad_dreg(lw, layout), layout)) < 1e-12);
    CHECK(max_rel_diff(surrogate_gradient(SurrogateKind::kIwae, m, p, x, eps),
                       tape_iwae_gradient(m, p, x, eps)) < 1e-12);
    GradEstimate rws = rws_dreg_phi_grad(lw, layout);
    rws.theta_grad = rws_theta_grad(lw, layout).theta_grad;
    CHECK(max_rel_diff(surrogate_gradient(SurrogateKind::kDregRws, m, p, x, eps),
                       ascent_direction(rws, layout)) < 1e-12);
  }

  TEST_CASE("DReG(0.5) and STL surrogates differ by half on the path term") {
    Fixture f;
    const auto& layout = f.model.layout();
    const auto half = surrogate_gradient(SurrogateKind::kDregAlpha, f.model, f.trial.params,
                                         f.trial.x, f.eps, 0.5);
    const auto stl = surrogate_gradient(SurrogateKind::kStl, f.model, f.trial.params, f.trial.x, f.eps);
    for (std::size_t j : layout.indices(Role::kPhi))
      CHECK(half[j] == doctest::Approx(0.5 * stl[j]).epsilon(1e-12));
    for (std::size_t j : layout.indices(Role::kTheta))
      CHECK(half[j] == doctest::Approx(stl[j]).epsilon(1e-12));
  }

  TEST_CASE("IWAE surrogate with two equal weights averages the two total derivatives") {
    PosteriorFixture p;
    const auto eps = dreg::testing::noise(2, 2);
    const auto lw = log_weights(p.model, p.params, p.x, eps);
    const auto grad = surrogate_gradient(SurrogateKind::kIwae, p.model, p.params, p.x, eps);
    for (std::size_t j = 0; j < grad.size(); ++j) {
      double mean = 0.0;
      for (std::size_t i = 0; i < 2; ++i)
        mean += 0.5 * (lw.path[i * lw.n_params + j] + lw.dlogp[i * lw.n_params + j] -
                       lw.dlogq[i * lw.n_params + j]);
      CHECK(grad[j] == doctest::Approx(mean).epsilon(1e-12));
    }
  }

  TEST_CASE("surrogates match central finite differences") {
    Fixture f;
    const auto eps = dreg::testing::noise(3, 3, 1);
    for (auto kind : {SurrogateKind::kIwae, SurrogateKind::kDregIwae, SurrogateKind::kRws,
                      SurrogateKind::kDregRws, SurrogateKind::kStl}) {
      CAPTURE(surrogate_name(kind));
      CHECK(surrogate_fd_error(kind, f.model, f.trial.params, f.trial.x, eps) < 1e-5);
    }
    CHECK(surrogate_fd_error(SurrogateKind::kDregAlpha, f.model, f.trial.params, f.trial.x, eps, 0.3) <
          1e-5);
  }

  TEST_CASE("shared-parameter toy: surrogates are finite and match finite differences") {
    ToyModel m(ToyConfig{2, 2.0 / 3.0, true});
    CHECK(m.layout().has_shared());
    const auto trial = dreg::testing::rough_trial(m, 1);
    const auto eps = dreg::testing::noise(4, 2, 2);
    for (auto kind : {SurrogateKind::kIwae, SurrogateKind::kDregIwae, SurrogateKind::kRws,
                      SurrogateKind::kDregRws, SurrogateKind::kStl}) {
      CAPTURE(surrogate_name(kind));
      const auto g = surrogate_gradient(kind, m, trial.params, trial.x, eps);
      for (double v : g) CHECK(std::isfinite(v));
      CHECK(surrogate_fd_error(kind, m, trial.params, trial.x, eps) < 1e-5);
    }
    // The shared IWAE surrogate is still the gradient of the bound itself.
    CHECK(max_rel_diff(surrogate_gradient(SurrogateKind::kIwae, m, trial.params, trial.x, eps),
                       tape_iwae_gradient(m, trial.params, trial.x, eps)) < 1e-12);
    const auto lw = log_weights(m, trial.params, trial.x, eps);
    CHECK_THROWS_AS(iwae_grad_dreg(lw, m.layout()), Error);
  }

  TEST_CASE("VAE surrogates match finite differences") {
    MlpVae m(VaeConfig{2, 3, 5});
    const auto p = perturb_params(m.init_params(1), 0.2, 4);
    const std::vector<double> x{1, 1, 0, 0, 1};
    const auto eps = dreg::testing::noise(3, 2, 3);
    for (auto kind : {SurrogateKind::kIwae, SurrogateKind::kDregIwae, SurrogateKind::kDregRws}) {
      CAPTURE(surrogate_name(kind));
      CHECK(surrogate_fd_error(kind, m, p, x, eps) < 1e-5);
    }
  }

  TEST_CASE("surrogate argument errors") {
    Fixture f;
    tape::Graph g;
    const auto live = g.leaves(f.trial.params.flat);
    CHECK_THROWS_AS(surrogate_loss(g, SurrogateKind::kDregAlpha, f.model, live, f.trial.x, f.eps),
                    ConfigError);
    CHECK_THROWS_AS(parse_surrogate("nope"), ConfigError);
    CHECK(parse_surrogate("DReG-RWS") == SurrogateKind::kDregRws);
  }

  TEST_CASE("JVI1 estimate") {
    const std::vector<double> lw{0.0, 1.0};
    CHECK(jvi1_estimate(lw) == doctest::Approx(0.740229).epsilon(1e-6));
    const double direct = 2.0 * std::log((1.0 + std::exp(1.0)) / 2.0) - 0.5 * (0.0 + 1.0);
    CHECK(jvi1_estimate(lw) == doctest::Approx(direct).epsilon(1e-15));
    const std::vector<double> equal(6, -3.5);
    CHECK(jvi1_estimate(equal) == doctest::Approx(-3.5).epsilon(1e-14));
    const std::vector<double> one{1.0};
    CHECK_THROWS_AS(jvi1_estimate(one), Error);
  }

  TEST_CASE("JVI1 estimate agrees with the quadratic leave-one-out form") {
    Fixture f;
    const auto& lw = f.lw.log_w;
    const std::size_t k = lw.size();
    double inner = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      std::vector<double> rest;
      for (std::size_t j = 0; j < k; ++j)
        if (j != i) rest.push_back(lw[j]);
      inner += iwae_bound(rest);
    }
    const double kd = static_cast<double>(k);
    CHECK(jvi1_estimate(lw) == doctest::Approx(kd * iwae_bound(lw) - (kd - 1) / kd * inner).epsilon(1e-13));
  }

  TEST_CASE("JVI1 gradient equals the tape gradient of the recorded estimate") {
    Fixture f;
    tape::Graph g;
    const auto live = g.leaves(f.trial.params.flat);
    const auto lw = record_log_weights(g, f.model, live, f.trial.x, f.eps);
    const auto est = record_jvi1_estimate(lw);
    CHECK(est.value() == doctest::Approx(jvi1_estimate(f.lw)).epsilon(1e-13));
    const auto tape_grad = g.backward(est).gather(live);
    const auto& layout = f.model.layout();
    CHECK(max_rel_diff(ascent_direction(jvi1_grad(f.lw, layout), layout), tape_grad) < 1e-12);
    CHECK(max_rel_diff(objective_gradient(f.model, f.trial.params, f.trial.x, f.eps, false),
                       tape_grad) < 1e-12);
    CHECK(max_rel_diff(objective_gradient(f.model, f.trial.params, f.trial.x, f.eps, true),
                       ascent_direction(jvi1_dreg_grad(f.lw, layout), layout)) < 1e-12);
  }

  TEST_CASE("JVI1-DReG path coefficients match the per-term expansion") {
    Fixture f;
    const auto& lw = f.lw.log_w;
    const std::size_t k = lw.size();
    const double kd = static_cast<double>(k);
    const auto c = jvi1_coefficients(lw);
    const auto w = normalized_weights(lw);
    std::vector<double> b(k), a(k);
    for (std::size_t j = 0; j < k; ++j) {
      a[j] = kd * w[j];
      b[j] = kd * w[j] * w[j];
    }
    for (std::size_t i = 0; i < k; ++i) {
      std::vector<double> rest;
      for (std::size_t j = 0; j < k; ++j)
        if (j != i) rest.push_back(lw[j]);
      const auto wr = normalized_weights(rest);
      std::size_t r = 0;
      for (std::size_t j = 0; j < k; ++j) {
        if (j == i) continue;
        a[j] -= (kd - 1) / kd * wr[r];
        b[j] -= (kd - 1) / kd * wr[r] * wr[r];
        ++r;
      }
    }
    CHECK(max_abs_diff(c.total, a) < 1e-13);
    CHECK(max_abs_diff(c.path, b) < 1e-13);
    double s = 0.0;
    for (double v : c.total) s += v;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-13));
  }

  TEST_CASE("JVI1 gradients with equal weights and equal partials") {
    PosteriorFixture p;
    LogWeightBatch lw;
    const std::size_t k = 4;
    const std::size_t n = p.model.layout().size();
    lw.resize(k, 2, n);
    for (std::size_t i = 0; i < k; ++i) {
      lw.log_w[i] = -1.0;
      for (std::size_t j = 0; j < n; ++j) lw.path[i * n + j] = 0.1 * static_cast<double>(j + 1);
    }
    const auto phi = p.model.layout().indices(Role::kPhi);
    const auto a = jvi1_grad(lw, p.model.layout());
    const auto b = jvi1_dreg_grad(lw, p.model.layout());
    for (std::size_t j = 0; j < phi.size(); ++j) {
      CHECK(a.phi_grad[j] == doctest::Approx(0.1 * static_cast<double>(phi[j] + 1)).epsilon(1e-13));
      // Each n-sample DReG term is path / n, so K/K - (K-1)/K * K/(K-1) cancels.
      CHECK(std::abs(b.phi_grad[j]) < 1e-14);
    }
    // Equal weights only arise at the posterior: the path term is zero there
    // and the standard form keeps just the (mean-zero) score term.
    const auto real = log_weights(p.model, p.params, p.x, dreg::testing::noise(k, 2));
    for (double v : jvi1_dreg_grad(real, p.model.layout()).phi_grad) CHECK(std::abs(v) < 1e-12);
    CHECK(max_abs_diff(jvi1_grad(real, p.model.layout()).phi_grad,
                       rws_wake_phi_grad(real, p.model.layout()).phi_grad) < 1e-12);
  }

  TEST_CASE("estimator names round-trip") {
    for (const char* name : {"IWAE", "STL", "IWAE-DReG", "RWS-wake", "RWS-DReG", "JVI1", "JVI1-DReG"})
      CHECK(EstimatorSpec::parse(name).name() == name);
    const auto a = EstimatorSpec::parse("DReG(0.25)");
    CHECK(a.id == EstimatorId::kDregAlpha);
    CHECK(*a.alpha == 0.25);
    CHECK(a.name() == "DReG(0.25)");
    CHECK_THROWS_AS(EstimatorSpec::parse("DReG(2)"), ConfigError);
    CHECK_THROWS_AS(EstimatorSpec::parse("DReG(x)"), ConfigError);
    CHECK_THROWS_AS(EstimatorSpec::parse("bogus"), ConfigError);
    CHECK_THROWS_AS((EstimatorSpec{EstimatorId::kIwae, 0.5}.validate()), ConfigError);
    CHECK_THROWS_AS((EstimatorSpec{EstimatorId::kDregAlpha, {}}.validate()), ConfigError);
  }

  TEST_CASE("GradEstimate rejects non-finite entries") {
    GradEstimate g;
    g.phi_grad = {1.0, NAN};
    CHECK_THROWS_AS(g.validate(), Error);
  }

  TEST_CASE("estimators are deterministic functions of params, x and noise") {
    Fixture f;
    const auto again = log_weights(f.model, f.trial.params, f.trial.x,
                                   NoiseBatch::draw(5, 3, f.eps.seed, f.eps.stream));
    for (const char* name : {"IWAE", "STL", "IWAE-DReG", "RWS-wake", "RWS-DReG", "DReG(0.3)", "JVI1", "JVI1-DReG"}) {
      const auto spec = EstimatorSpec::parse(name);
      const auto a = estimate(spec, f.lw, f.model.layout());
      const auto b = estimate(spec, again, f.model.layout());
      CHECK(a.phi_grad == b.phi_grad);
      CHECK(a.theta_grad == b.theta_grad);
    }
  }
}
