#include <doctest.h>

#include <cmath>

#include "dreg/gaussian.hpp"
#include "oracles.hpp"

using namespace dreg;
using dreg::testing::reinforce_integral;
using dreg::testing::reparam_integral;
using dreg::testing::trapezoid;

TEST_SUITE("gaussian") {
  TEST_CASE("log_prob matches the scalar density") {
    tape::Graph g;
    const DiagGaussian q({g.leaf(0.3), g.leaf(-1.0)}, {g.leaf(0.2), g.leaf(-0.7)});
    const std::vector<tape::Var> z{g.constant(1.1), g.constant(-0.4)};
    const double ref = normal_log_density(1.1, 0.3, 0.2) + normal_log_density(-0.4, -1.0, -0.7);
    CHECK(log_prob(q, z).value() == doctest::Approx(ref).epsilon(1e-15));
    CHECK(normal_log_density(0.0, 0.0, 0.0) == doctest::Approx(-kHalfLog2Pi));
  }

  TEST_CASE("density integrates to one") {
    const double mu = 0.4, ls = std::log(1.7);
    const double mass = trapezoid([&](double z) { return std::exp(normal_log_density(z, mu, ls)); },
                                  mu - 25.0, mu + 25.0, 20000);
    CHECK(std::abs(mass - 1.0) < 1e-6);
  }

  TEST_CASE("reparameterized sample and its partials") {
    tape::Graph g;
    const tape::Var m = g.leaf(0.5);
    const tape::Var s = g.leaf(std::log(2.0));
    const DiagGaussian q({m}, {s});
    const std::vector<double> eps{-0.75};
    const auto z = sample_reparam(q, eps);
    CHECK(z[0].value() == doctest::Approx(0.5 - 1.5));
    const auto gr = g.backward(z[0]);
    CHECK(gr[m] == 1.0);
    CHECK(gr[s] == doctest::Approx(-1.5));
  }

  TEST_CASE("log-density of its own reparameterized sample has zero mean gradient") {
    // d/dmu log q(mu + s eps) = 0 pathwise, so the whole signal is in the score.
    tape::Graph g;
    const tape::Var m = g.leaf(0.2);
    const DiagGaussian q({m}, {g.constant(0.1)});
    const std::vector<double> eps{1.3};
    const auto z = sample_reparam(q, eps);
    CHECK(g.backward(log_prob(q, z))[m] == doctest::Approx(0.0).epsilon(1e-15));
  }

  TEST_CASE("stopped copy shares values and blocks gradients") {
    tape::Graph g;
    const tape::Var m = g.leaf(0.2);
    const tape::Var s = g.leaf(-0.3);
    const DiagGaussian q({m}, {s});
    const DiagGaussian qs = stopped(q);
    const std::vector<double> eps{0.9};
    const auto z = sample_reparam(q, eps);
    const tape::Var a = log_prob(q, z);
    const tape::Var b = log_prob(qs, z);
    CHECK(a.value() == b.value());
    const auto gb = g.backward(b);
    const auto ga = g.backward(a);
    // Through z only: d/dmu = -(z - mu)/s^2 * dz/dmu.
    CHECK(gb[m] == doctest::Approx(-0.9 / std::exp(-0.3)));
    CHECK(ga[m] == doctest::Approx(0.0).epsilon(1e-15));
  }

  TEST_CASE("bernoulli log-likelihood is stable for large logits") {
    tape::Graph g;
    const std::vector<tape::Var> l{g.leaf(800.0), g.leaf(-800.0), g.leaf(0.0)};
    const std::vector<double> x{1.0, 0.0, 1.0};
    const tape::Var lp = bernoulli_log_prob(l, x);
    CHECK(lp.value() == doctest::Approx(-std::log(2.0)));
    const auto gr = g.backward(lp);
    CHECK(gr[l[0]] == doctest::Approx(0.0));
    CHECK(gr[l[2]] == doctest::Approx(0.5));
    const std::vector<double> wrong{1.0, 1.0};
    CHECK_THROWS_AS(bernoulli_log_prob(l, wrong), Error);
  }

  TEST_CASE("score-function and pathwise integrals agree") {
    // d/dmu E_q[f(z)] computed both ways for a smooth f.
    const double mu = 0.3, sigma = 0.8;
    auto f = [](double z) { return std::sin(z) + 0.25 * z * z; };
    auto df = [](double z) { return std::cos(z) + 0.5 * z; };
    const double score = reinforce_integral(f, mu, sigma);
    const double path = reparam_integral(df, mu, sigma);
    CHECK(score == doctest::Approx(path).epsilon(1e-8));
    CHECK(path == doctest::Approx(std::cos(mu) * std::exp(-0.5 * sigma * sigma) + 0.5 * mu).epsilon(1e-8));
  }

  TEST_CASE("construction errors") {
    tape::Graph g;
    CHECK_THROWS_AS(DiagGaussian({g.leaf(0.0)}, {}), Error);
    CHECK_THROWS_AS(DiagGaussian({g.leaf(0.0)}, {g.leaf(-800.0)}), Error);
    const DiagGaussian q({g.leaf(0.0)}, {g.leaf(0.0)});
    const std::vector<double> eps{1.0, 2.0};
    CHECK_THROWS_AS(sample_reparam(q, eps), Error);
  }
}
