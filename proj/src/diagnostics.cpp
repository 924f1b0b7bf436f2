#include "dreg/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <boost/math/distributions/students_t.hpp>
#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "dreg/replicates.hpp"

namespace dreg {

// ---------------------------------------------------------------- moments ---

void Moments::add(std::span<const double> x) {
  if (x.size() != mean.size()) throw Error("Moments: dimension mismatch");
  ++n;
  const double nd = static_cast<double>(n);
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double delta = x[j] - mean[j];
    mean[j] += delta / nd;
    m2[j] += delta * (x[j] - mean[j]);
  }
}

void Moments::merge(const Moments& other) {
  if (other.n == 0) return;
  if (n == 0) {
    *this = other;
    return;
  }
  if (other.dim() != dim()) throw Error("Moments: dimension mismatch");
  const double na = static_cast<double>(n);
  const double nb = static_cast<double>(other.n);
  const double nt = na + nb;
  for (std::size_t j = 0; j < dim(); ++j) {
    const double delta = other.mean[j] - mean[j];
    mean[j] += delta * nb / nt;
    m2[j] += other.m2[j] + delta * delta * na * nb / nt;
  }
  n += other.n;
}

std::vector<double> Moments::variance() const {
  if (n < 2) throw Error("estimator stats need at least 2 samples");
  std::vector<double> v(dim());
  for (std::size_t j = 0; j < dim(); ++j) v[j] = m2[j] / static_cast<double>(n - 1);
  return v;
}

// ------------------------------------------------------------------ stats ---

namespace {

EstimatorStats make_stats(const Moments& m, std::span<const double> ref,
                          std::span<const double> signal) {
  if (ref.size() != m.dim()) throw Error("estimator_stats: reference mean has wrong dimension");
  EstimatorStats s;
  s.n = m.n;
  s.mean = m.mean;
  s.variance = m.variance();
  const std::size_t d = m.dim();
  s.bias2.resize(d);
  s.snr.resize(d);
  s.snr_defined.resize(d);
  for (std::size_t j = 0; j < d; ++j) {
    const double b = s.mean[j] - ref[j];
    s.bias2[j] = b * b;
    const double num = std::abs(signal[j]);
    if (s.variance[j] > 0.0) {
      s.snr[j] = num / std::sqrt(s.variance[j]);
      s.snr_defined[j] = true;
    } else {
      s.snr[j] = num > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
      s.snr_defined[j] = false;
    }
  }
  return s;
}

}  // namespace

EstimatorStats estimator_stats(std::span<const double> samples, std::size_t dim,
                               std::span<const double> reference_mean) {
  if (dim == 0 || samples.size() % dim != 0) throw Error("estimator_stats: ragged sample matrix");
  Moments m(dim);
  for (std::size_t r = 0; r < samples.size() / dim; ++r) m.add(samples.subspan(r * dim, dim));
  return estimator_stats(m, reference_mean);
}

EstimatorStats estimator_stats(const Moments& m, std::span<const double> reference_mean) {
  return make_stats(m, reference_mean, m.mean);
}

EstimatorStats estimator_stats_with_signal(const Moments& m, std::span<const double> reference_mean,
                                           std::span<const double> signal) {
  if (signal.size() != m.dim()) throw Error("estimator_stats: signal has wrong dimension");
  return make_stats(m, reference_mean, signal);
}

// ----------------------------------------------------------------- t-test ---

double student_t_two_sided_p(double t, double dof) {
  if (std::isnan(t)) return 1.0;
  if (std::isinf(t)) return 0.0;
  const boost::math::students_t dist(dof);
  return std::clamp(2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t))), 0.0, 1.0);
}

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b,
                          std::size_t coordinate) {
  if (a.size() != b.size()) throw Error("paired_t_test: samples differ in length");
  if (a.size() < 2) throw Error("paired_t_test: need at least 2 pairs");
  Moments m(1);
  double scale = 0.0, largest = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    m.add(std::span<const double>(&d, 1));
    scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
    largest = std::max(largest, std::abs(d));
  }
  TTestResult r;
  r.n = a.size();
  r.coordinate = coordinate;
  r.mean_diff = m.mean[0];
  if (largest <= kRoundoffTolerance * scale) {
    // Equal up to rounding: the t statistic would only measure round-off.
    r.degenerate = true;
    return r;
  }
  const double var = m.variance()[0];
  if (var <= 0.0) {
    r.degenerate = true;
    r.t = r.mean_diff == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), r.mean_diff);
    r.p = r.mean_diff == 0.0 ? 1.0 : 0.0;
    return r;
  }
  r.se = std::sqrt(var / static_cast<double>(r.n));
  r.t = r.mean_diff / r.se;
  r.p = student_t_two_sided_p(r.t, static_cast<double>(r.n - 1));
  return r;
}

TTestResult paired_t_test_column(std::span<const double> a, std::span<const double> b,
                                 std::size_t dim, std::size_t coordinate) {
  if (a.size() != b.size() || dim == 0 || a.size() % dim != 0 || coordinate >= dim)
    throw Error("paired_t_test: bad sample matrices");
  const std::size_t n = a.size() / dim;
  std::vector<double> ca(n), cb(n);
  for (std::size_t r = 0; r < n; ++r) {
    ca[r] = a[r * dim + coordinate];
    cb[r] = b[r * dim + coordinate];
  }
  return paired_t_test(ca, cb, coordinate);
}

double ks_uniform_statistic(std::span<const double> sample) {
  if (sample.empty()) throw Error("ks: empty sample");
  std::vector<double> s(sample.begin(), sample.end());
  std::sort(s.begin(), s.end());
  const double n = static_cast<double>(s.size());
  double d = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double u = std::clamp(s[i], 0.0, 1.0);
    d = std::max({d, (static_cast<double>(i) + 1.0) / n - u, u - static_cast<double>(i) / n});
  }
  return d;
}

double ks_asymptotic_p(double statistic, std::size_t n) {
  const double sn = std::sqrt(static_cast<double>(n));
  // Stephens' small-sample adjustment of the Kolmogorov limit.
  const double x = (sn + 0.12 + 0.11 / sn) * statistic;
  if (x < 1e-3) return 1.0;
  double p = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * x * x);
    p += (k % 2 == 1 ? 2.0 : -2.0) * term;
    if (term < 1e-16) break;
  }
  return std::clamp(p, 0.0, 1.0);
}

// ------------------------------------------------------------------ slope ---

SlopeFit loglog_slope(std::span<const std::pair<double, double>> points) {
  if (points.size() < 3) throw Error("loglog_slope: need at least 3 points");
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto [k, s] = points[i];
    if (!(s > 0.0)) throw Error("loglog_slope: statistic must be positive");
    if (!(k > 0.0)) throw Error("loglog_slope: K must be positive");
    if (i > 0 && !(k > points[i - 1].first)) throw Error("loglog_slope: K must increase strictly");
    lx.push_back(std::log(k));
    ly.push_back(std::log(s));
  }
  const double n = static_cast<double>(lx.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  SlopeFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double ssr = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    const double e = ly[i] - (f.intercept + f.slope * lx[i]);
    ssr += e * e;
  }
  f.stderr_slope = std::sqrt(ssr / (n - 2.0) / sxx);
  return f;
}

// -------------------------------------------------------------------- EMA ---

VarianceTraceEma::VarianceTraceEma(std::size_t dim, double decay)
    : decay_(decay), m1_(dim, 0.0), m2_(dim, 0.0) {
  if (!(decay > 0.0 && decay < 1.0)) throw Error("VarianceTraceEma: decay must lie in (0, 1)");
}

void VarianceTraceEma::update(std::span<const double> g) {
  if (g.size() != m1_.size()) throw Error("VarianceTraceEma: dimension mismatch");
  for (std::size_t j = 0; j < g.size(); ++j) {
    m1_[j] = decay_ * m1_[j] + (1.0 - decay_) * g[j];
    m2_[j] = decay_ * m2_[j] + (1.0 - decay_) * g[j] * g[j];
  }
  ++steps_;
  decay_pow_ *= decay_;
}

double VarianceTraceEma::correction() const { return 1.0 - decay_pow_; }

double VarianceTraceEma::value() const {
  if (steps_ == 0 || m1_.empty()) return 0.0;
  const double c = correction();
  double acc = 0.0;
  for (std::size_t j = 0; j < m1_.size(); ++j) {
    const double mean = m1_[j] / c;
    acc += std::max(0.0, m2_[j] / c - mean * mean);
  }
  return acc / static_cast<double>(m1_.size());
}

// -------------------------------------------------------- reference means ---

ReferenceMean reference_mean(const Model& model, const ParamVector& params,
                             std::span<const double> x, std::size_t k, std::size_t n_ref,
                             std::uint64_t seed, std::uint64_t stream) {
  if (n_ref < 2) throw Error("reference_mean: need at least 2 samples");
  ReplicatePlan plan;
  plan.estimators = {EstimatorSpec{EstimatorId::kIwae, {}}};
  plan.k = k;
  plan.seed = seed;
  plan.stream = stream;
  // Chunked so memory stays bounded at large n_ref; chunks merge in order.
  constexpr std::size_t kChunk = 100000;
  Moments total;
  for (std::size_t done = 0; done < n_ref; done += kChunk) {
    plan.first_replicate = done;
    plan.n = std::min(kChunk, n_ref - done);
    const auto res = run_replicates(model, params, x, plan);
    Moments m(res.n_phi);
    for (std::size_t r = 0; r < res.n; ++r) m.add(res.row(0, r));
    total.merge(m);
  }
  ReferenceMean out;
  out.n = total.n;
  out.mean = total.mean;
  const auto var = total.variance();
  out.stderr_mean.resize(var.size());
  for (std::size_t j = 0; j < var.size(); ++j)
    out.stderr_mean[j] = std::sqrt(var[j] / static_cast<double>(total.n));
  return out;
}

namespace {

/// Nodes and weights of 12-point Gauss-Legendre on each unit segment of [lo, hi].
void segment_rule(double lo, double hi, std::vector<double>& nodes, std::vector<double>& weights) {
  using Rule = boost::math::quadrature::gauss<double, 12>;
  const auto& abs = Rule::abscissa();
  const auto& wts = Rule::weights();
  const int segments = static_cast<int>(std::lround(hi - lo));
  for (int s = 0; s < segments; ++s) {
    const double c = lo + s + 0.5;
    for (std::size_t i = 0; i < abs.size(); ++i) {
      nodes.push_back(c - 0.5 * abs[i]);
      weights.push_back(0.5 * wts[i]);
      nodes.push_back(c + 0.5 * abs[i]);
      weights.push_back(0.5 * wts[i]);
    }
  }
}

}  // namespace

double toy_expected_gradient_factor(double delta_norm, double q_variance, std::size_t dim,
                                    std::size_t k) {
  if (k == 0) throw Error("toy expected gradient: K must be at least 1");
  if (dim == 0) throw Error("toy expected gradient: dimension must be positive");
  const double s = std::sqrt(q_variance);

  std::vector<double> un, uw;
  segment_rule(-10.0, 10.0, un, uw);
  std::vector<double> rn{0.0}, rw{1.0};
  if (dim > 1) {
    rn.clear();
    rw.clear();
    segment_rule(0.0, 10.0, rn, rw);
    // chi density with dim - 1 degrees of freedom
    const double nu = static_cast<double>(dim - 1);
    const double log_norm = (nu / 2.0 - 1.0) * std::log(2.0) + boost::math::lgamma(nu / 2.0);
    for (std::size_t i = 0; i < rn.size(); ++i)
      rw[i] *= std::exp((nu - 1.0) * std::log(rn[i]) - 0.5 * rn[i] * rn[i] - log_norm);
  }

  // Flattened (probability, log omega, f) over the product grid.
  const std::size_t n = un.size() * rn.size();
  std::vector<double> prob(n), log_omega(n), f(n);
  double max_lo = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < un.size(); ++i) {
    const double u = un[i];
    const double pu = uw[i] * std::exp(-0.5 * u * u) / std::sqrt(2.0 * std::numbers::pi);
    for (std::size_t j = 0; j < rn.size(); ++j) {
      const double r = rn[j];
      const std::size_t at = i * rn.size() + j;
      const double a = delta_norm + s * u;
      prob[at] = pu * rw[j];
      log_omega[at] = -a * a - s * s * r * r + 0.5 * (u * u + r * r);
      f[at] = a;
      max_lo = std::max(max_lo, log_omega[at]);
    }
  }
  // Normalize omega to unit mean; the t-integral is scale invariant.
  double mean_omega = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean_omega += prob[i] * std::exp(log_omega[i] - max_lo);
  const double shift = max_lo + std::log(mean_omega);
  std::vector<double> omega(n);
  for (std::size_t i = 0; i < n; ++i) omega[i] = std::exp(log_omega[i] - shift);

  if (k == 1) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += prob[i] * f[i];
    return acc;
  }

  // K * int_0^inf L(t)^{K-1} M(t) dt on y = log t with the trapezoid rule.
  const double kd = static_cast<double>(k);
  const double y_lo = std::log(1e-12 / kd);
  const double y_hi = std::log(1e6);
  const double dy = 0.05;
  const auto steps = static_cast<std::int64_t>(std::ceil((y_hi - y_lo) / dy));
  std::vector<double> vals(static_cast<std::size_t>(steps + 1));
#pragma omp parallel for schedule(static)
  for (std::int64_t si = 0; si <= steps; ++si) {
    const double t = std::exp(y_lo + static_cast<double>(si) * dy);
    double l = 0.0, m = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double e = prob[i] * std::exp(-t * omega[i]);
      l += e;
      m += e * omega[i] * f[i];
    }
    vals[static_cast<std::size_t>(si)] = t * m * std::pow(l, kd - 1.0);
  }
  double acc = 0.5 * (vals.front() + vals.back());
  for (std::size_t i = 1; i + 1 < vals.size(); ++i) acc += vals[i];
  return kd * acc * dy;
}

std::vector<double> toy_expected_iwae_phi_grad(const ToyModel& m, const ParamVector& params,
                                               std::span<const double> x, std::size_t k) {
  const ToyConfig& cfg = m.config();
  if (cfg.tie_bias_to_theta) throw Error("toy expected gradient: untied bias required");
  const std::size_t d = cfg.dim;
  const auto mu = m.inference_mean(params, x);
  const auto theta = params.slice("theta");
  std::vector<double> delta(d);
  double norm2 = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    delta[j] = mu[j] - 0.5 * (x[j] + theta[j]);
    norm2 += delta[j] * delta[j];
  }
  const double norm = std::sqrt(norm2);
  std::vector<double> grad_mu(d, 0.0);
  if (norm > 0.0) {
    const double h = toy_expected_gradient_factor(norm, cfg.q_variance, d, k);
    for (std::size_t j = 0; j < d; ++j) grad_mu[j] = -2.0 * h * delta[j] / norm;
  }
  // Chain rule through mu = A x + b onto the phi coordinates in layout order.
  const auto& layout = m.layout();
  const auto phi_idx = layout.indices(Role::kPhi);
  const std::size_t a_off = layout.find("A").offset;
  const std::size_t b_off = layout.find("b").offset;
  std::vector<double> full(layout.size(), 0.0);
  for (std::size_t kk = 0; kk < d; ++kk) {
    full[b_off + kk] = grad_mu[kk];
    for (std::size_t l = 0; l < d; ++l) full[a_off + kk * d + l] = grad_mu[kk] * x[l];
  }
  std::vector<double> out(phi_idx.size());
  for (std::size_t j = 0; j < phi_idx.size(); ++j) out[j] = full[phi_idx[j]];
  return out;
}

}  // namespace dreg
