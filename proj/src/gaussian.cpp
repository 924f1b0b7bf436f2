#include "dreg/gaussian.hpp"

#include <array>
#include <cmath>
#include <string>

namespace dreg {

using tape::Var;

DiagGaussian::DiagGaussian(std::vector<Var> m, std::vector<Var> ls)
    : mean(std::move(m)), log_scale(std::move(ls)) {
  if (mean.size() != log_scale.size())
    throw Error("DiagGaussian: mean has " + std::to_string(mean.size()) +
                " entries, log-scale has " + std::to_string(log_scale.size()));
  for (const auto& l : log_scale) {
    const double s = std::exp(l.value());
    if (!(s > 0.0) || !std::isfinite(s)) throw Error("DiagGaussian: scale is not positive and finite");
  }
}

std::vector<Var> sample_reparam(const DiagGaussian& q, std::span<const double> eps) {
  if (eps.size() != q.dim()) throw Error("sample_reparam: noise dimension mismatch");
  std::vector<Var> z;
  z.reserve(q.dim());
  for (std::size_t j = 0; j < q.dim(); ++j) z.push_back(q.mean[j] + exp(q.log_scale[j]) * eps[j]);
  return z;
}

Var log_prob(const DiagGaussian& q, std::span<const Var> z) {
  if (z.size() != q.dim()) throw Error("log_prob: dimension mismatch");
  std::vector<Var> terms;
  terms.reserve(q.dim());
  for (std::size_t j = 0; j < q.dim(); ++j) {
    const Var standardized = (z[j] - q.mean[j]) * exp(-q.log_scale[j]);
    terms.push_back(-kHalfLog2Pi - q.log_scale[j] - 0.5 * square(standardized));
  }
  return tape::sum(terms);
}

DiagGaussian stopped(const DiagGaussian& q) {
  DiagGaussian out;
  out.mean.reserve(q.dim());
  out.log_scale.reserve(q.dim());
  for (const auto& m : q.mean) out.mean.push_back(tape::stop_gradient(m));
  for (const auto& l : q.log_scale) out.log_scale.push_back(tape::stop_gradient(l));
  return out;
}

Var bernoulli_log_prob(std::span<const Var> logits, std::span<const double> x) {
  if (logits.size() != x.size()) throw Error("bernoulli_log_prob: dimension mismatch");
  if (logits.empty()) throw Error("bernoulli_log_prob: empty input");
  tape::Graph& g = *logits[0].graph();
  const Var zero = g.constant(0.0);
  std::vector<Var> terms;
  terms.reserve(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    if (x[j] != 0.0 && x[j] != 1.0) throw Error("bernoulli_log_prob: observation is not binary");
    const Var l = logits[j];
    // softplus(l) = max(l, 0) + log(1 + exp(-|l|))
    const std::array<Var, 2> pos{l, zero};
    const std::array<Var, 2> mag{l, -l};
    const Var softplus = tape::max(pos) + log(1.0 + exp(-tape::max(mag)));
    terms.push_back(x[j] == 1.0 ? l - softplus : -softplus);
  }
  return tape::sum(terms);
}

double normal_log_density(double z, double mean, double log_scale) {
  const double u = (z - mean) * std::exp(-log_scale);
  return -kHalfLog2Pi - log_scale - 0.5 * u * u;
}

}  // namespace dreg
