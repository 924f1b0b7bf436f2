#include "dreg/estimators.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <limits>
#include <string>

namespace dreg {

using tape::Graph;
using tape::Var;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double lse2(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

double log_sum_exp(std::span<const double> v) {
  double m = kNegInf;
  for (double x : v) m = std::max(m, x);
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

/// LSE of v with entry i removed, for every i, in O(K).
std::vector<double> leave_one_out_lse(std::span<const double> v) {
  const std::size_t k = v.size();
  std::vector<double> prefix(k + 1, kNegInf);
  std::vector<double> suffix(k + 1, kNegInf);
  for (std::size_t i = 0; i < k; ++i) prefix[i + 1] = lse2(prefix[i], v[i]);
  for (std::size_t i = k; i-- > 0;) suffix[i] = lse2(suffix[i + 1], v[i]);
  std::vector<double> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = lse2(prefix[i], suffix[i + 1]);
  return out;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

void check_batch(const LogWeightBatch& lw, const ParamLayout& layout) {
  if (lw.k == 0) throw Error("estimator: K must be at least 1");
  if (lw.n_params != layout.size())
    throw Error("estimator: log-weight batch does not match the parameter layout");
  if (layout.has_shared())
    throw Error("estimator: shared parameters need a surrogate objective");
}

void check_two(const LogWeightBatch& lw) {
  if (lw.k < 2) throw Error("JVI1 requires K >= 2");
}

/// sum_i c_i * m[i, idx] for the selected coordinates of a K x P matrix.
std::vector<double> weighted_rows(std::span<const double> c, const std::vector<double>& m,
                                  std::size_t n_params, const std::vector<std::size_t>& idx) {
  std::vector<double> out(idx.size(), 0.0);
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double* row = m.data() + i * n_params;
    const double ci = c[i];
    for (std::size_t j = 0; j < idx.size(); ++j) out[j] += ci * row[idx[j]];
  }
  return out;
}

/// sum_i c_i * (path + dlogp - dlogq)[i, idx].
std::vector<double> weighted_total(std::span<const double> c, const LogWeightBatch& lw,
                                   const std::vector<std::size_t>& idx) {
  std::vector<double> out(idx.size(), 0.0);
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double* path = lw.path.data() + i * lw.n_params;
    const double* dlp = lw.dlogp.data() + i * lw.n_params;
    const double* dlq = lw.dlogq.data() + i * lw.n_params;
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const std::size_t p = idx[j];
      out[j] += c[i] * (path[p] + dlp[p] - dlq[p]);
    }
  }
  return out;
}

std::vector<double> squared_weights(std::span<const double> log_w) {
  const double lse = log_sum_exp(log_w);
  std::vector<double> out(log_w.size());
  for (std::size_t i = 0; i < log_w.size(); ++i) out[i] = std::exp(2.0 * (log_w[i] - lse));
  return out;
}

GradEstimate make(EstimatorId id, std::size_t k, std::optional<double> alpha = std::nullopt) {
  GradEstimate g;
  g.spec = {id, alpha};
  g.k = k;
  return g;
}

}  // namespace

// ------------------------------------------------------------------ specs ---

std::string EstimatorSpec::name() const {
  switch (id) {
    case EstimatorId::kIwae: return "IWAE";
    case EstimatorId::kStl: return "STL";
    case EstimatorId::kIwaeDreg: return "IWAE-DReG";
    case EstimatorId::kRwsWake: return "RWS-wake";
    case EstimatorId::kRwsDreg: return "RWS-DReG";
    case EstimatorId::kDregAlpha: {
      char buf[64];
      auto [end, ec] = std::to_chars(buf, buf + sizeof buf, alpha.value_or(0.0));
      (void)ec;
      return "DReG(" + std::string(buf, end) + ")";
    }
    case EstimatorId::kJvi1: return "JVI1";
    case EstimatorId::kJvi1Dreg: return "JVI1-DReG";
  }
  return "?";
}

EstimatorSpec EstimatorSpec::parse(std::string_view s) {
  const std::string l = lower(s);
  if (l == "iwae") return {EstimatorId::kIwae, {}};
  if (l == "stl") return {EstimatorId::kStl, {}};
  if (l == "iwae-dreg") return {EstimatorId::kIwaeDreg, {}};
  if (l == "rws-wake" || l == "rws") return {EstimatorId::kRwsWake, {}};
  if (l == "rws-dreg") return {EstimatorId::kRwsDreg, {}};
  if (l == "jvi1") return {EstimatorId::kJvi1, {}};
  if (l == "jvi1-dreg") return {EstimatorId::kJvi1Dreg, {}};
  if (l.starts_with("dreg(") && l.ends_with(")")) {
    const std::string_view num(l.data() + 5, l.size() - 6);
    double a = 0.0;
    auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), a);
    if (ec != std::errc() || ptr != num.data() + num.size())
      throw ConfigError("bad alpha in estimator name '" + std::string(s) + "'");
    EstimatorSpec spec{EstimatorId::kDregAlpha, a};
    spec.validate();
    return spec;
  }
  throw ConfigError("unknown estimator '" + std::string(s) + "'");
}

void EstimatorSpec::validate() const {
  if (id == EstimatorId::kDregAlpha) {
    if (!alpha) throw ConfigError("DReG(alpha) requires alpha");
    if (!(*alpha >= 0.0 && *alpha <= 1.0)) throw ConfigError("DReG alpha must lie in [0, 1]");
  } else if (alpha) {
    throw ConfigError("alpha is only meaningful for DReG(alpha)");
  }
}

bool requires_two_samples(EstimatorId id) {
  return id == EstimatorId::kJvi1 || id == EstimatorId::kJvi1Dreg;
}

void GradEstimate::validate() const {
  spec.validate();
  for (double v : phi_grad)
    if (!std::isfinite(v)) throw Error("non-finite phi gradient from " + spec.name());
  for (double v : theta_grad)
    if (!std::isfinite(v)) throw Error("non-finite theta gradient from " + spec.name());
}

// ---------------------------------------------------------------- weights ---

void LogWeightBatch::resize(std::size_t k_, std::size_t latent, std::size_t params) {
  k = k_;
  latent_dim = latent;
  n_params = params;
  log_w.assign(k, 0.0);
  dlogw_dz.assign(k * latent, 0.0);
  path.assign(k * params, 0.0);
  dlogp.assign(k * params, 0.0);
  dlogq.assign(k * params, 0.0);
}

LogWeightBatch log_weights(const Model& model, const ParamVector& params,
                           std::span<const double> x, const NoiseBatch& noise) {
  if (noise.k == 0) throw Error("log_weights: K must be at least 1");
  LogWeightBatch out;
  if (!model.closed_form_log_weights(params, x, noise, out))
    return log_weights_tape(model, params, x, noise);
  for (double v : out.log_w)
    if (!std::isfinite(v)) throw Error("log_weights: non-finite log weight");
  return out;
}

LogWeightBatch log_weights_tape(const Model& model, const ParamVector& params,
                                std::span<const double> x, const NoiseBatch& noise) {
  const std::size_t d = model.latent_dim();
  const std::size_t n = model.layout().size();
  if (noise.k == 0) throw Error("log_weights: K must be at least 1");
  if (noise.dim != d) throw Error("log_weights: noise dimension does not match the latent");
  if (params.flat.size() != n) throw Error("log_weights: parameter size does not match the model");

  LogWeightBatch out;
  out.resize(noise.k, d, n);
  out.noise_seed = noise.seed;
  out.noise_stream = noise.stream;
  out.noise_offset = noise.offset;

  Graph g;
  for (std::size_t i = 0; i < noise.k; ++i) {
    g.clear();
    const auto live = g.leaves(params.flat);
    const DiagGaussian q = model.inference(g, live, x);
    const auto z = sample_reparam(q, noise.row(i));
    // z re-entered as leaves: gradients w.r.t. them are d/dz with params fixed.
    const auto z_leaf = g.leaves(tape::values(z));
    const Var lp = model.log_joint(g, live, x, z_leaf);
    const Var lq = log_prob(q, z_leaf);

    const auto gp = g.backward(lp);
    const auto gq = g.backward(lq);
    const auto dp = gp.gather(live);
    const auto dq = gq.gather(live);
    const auto dpz = gp.gather(z_leaf);
    const auto dqz = gq.gather(z_leaf);

    std::vector<double> gz(d);
    for (std::size_t j = 0; j < d; ++j) gz[j] = dpz[j] - dqz[j];
    const auto path = g.backward(z, gz).gather(live);

    out.log_w[i] = lp.value() - lq.value();
    std::copy(gz.begin(), gz.end(), out.dlogw_dz.begin() + static_cast<std::ptrdiff_t>(i * d));
    const auto at = static_cast<std::ptrdiff_t>(i * n);
    std::copy(path.begin(), path.end(), out.path.begin() + at);
    std::copy(dp.begin(), dp.end(), out.dlogp.begin() + at);
    std::copy(dq.begin(), dq.end(), out.dlogq.begin() + at);
  }
  return out;
}

std::vector<double> normalized_weights(std::span<const double> log_w) {
  if (log_w.empty()) throw Error("normalized_weights: empty batch");
  const double lse = log_sum_exp(log_w);
  if (!std::isfinite(lse)) throw Error("normalized_weights: degenerate weights");
  std::vector<double> out(log_w.size());
  for (std::size_t i = 0; i < log_w.size(); ++i) out[i] = std::exp(log_w[i] - lse);
  return out;
}

double iwae_bound(std::span<const double> log_w) {
  if (log_w.empty()) throw Error("iwae_bound: K must be at least 1");
  return log_sum_exp(log_w) - std::log(static_cast<double>(log_w.size()));
}

double jvi1_estimate(std::span<const double> log_w) {
  const std::size_t k = log_w.size();
  if (k < 2) throw Error("JVI1 requires K >= 2");
  const double kd = static_cast<double>(k);
  const auto loo = leave_one_out_lse(log_w);
  double inner = 0.0;
  for (double l : loo) inner += l - std::log(kd - 1.0);
  return kd * iwae_bound(log_w) - (kd - 1.0) / kd * inner;
}

JviCoefficients jvi1_coefficients(std::span<const double> log_w) {
  const std::size_t k = log_w.size();
  if (k < 2) throw Error("JVI1 requires K >= 2");
  const double kd = static_cast<double>(k);
  const double c = (kd - 1.0) / kd;
  const double lse = log_sum_exp(log_w);
  const auto loo = leave_one_out_lse(log_w);

  // Leave-one-out term i contributes w_j / S_{-i} (squared for the path
  // form) for every j != i. Summing over i != j in log space:
  //   sum_{i != j} exp(lw_j - L_{-i}) = exp(lw_j + LSE_{i != j}(-L_{-i})).
  std::vector<double> neg1(k), neg2(k);
  for (std::size_t i = 0; i < k; ++i) {
    neg1[i] = -loo[i];
    neg2[i] = -2.0 * loo[i];
  }
  const auto s1 = leave_one_out_lse(neg1);
  const auto s2 = leave_one_out_lse(neg2);

  JviCoefficients out;
  out.total.resize(k);
  out.path.resize(k);
  for (std::size_t j = 0; j < k; ++j) {
    const double r = log_w[j] - lse;
    out.total[j] = kd * std::exp(r) - c * std::exp(log_w[j] + s1[j]);
    out.path[j] = kd * std::exp(2.0 * r) - c * std::exp(2.0 * log_w[j] + s2[j]);
  }
  return out;
}

// ------------------------------------------------------------- estimators ---

GradEstimate iwae_grad_standard(const LogWeightBatch& lw, const ParamLayout& layout) {
  check_batch(lw, layout);
  const auto w = normalized_weights(lw.log_w);
  GradEstimate g = make(EstimatorId::kIwae, lw.k);
  g.theta_grad = weighted_total(w, lw, layout.indices(Role::kTheta));
  g.phi_grad = weighted_total(w, lw, layout.indices(Role::kPhi));
  return g;
}

GradEstimate iwae_grad_stl(const LogWeightBatch& lw, const ParamLayout& layout) {
  check_batch(lw, layout);
  const auto w = normalized_weights(lw.log_w);
  GradEstimate g = make(EstimatorId::kStl, lw.k);
  g.theta_grad = weighted_total(w, lw, layout.indices(Role::kTheta));
  g.phi_grad = weighted_rows(w, lw.path, lw.n_params, layout.indices(Role::kPhi));
  return g;
}

GradEstimate iwae_grad_dreg(const LogWeightBatch& lw, const ParamLayout& layout) {
  check_batch(lw, layout);
  const auto w = normalized_weights(lw.log_w);
  const auto w2 = squared_weights(lw.log_w);
  GradEstimate g = make(EstimatorId::kIwaeDreg, lw.k);
  g.theta_grad = weighted_total(w, lw, layout.indices(Role::kTheta));
  g.phi_grad = weighted_rows(w2, lw.path, lw.n_params, layout.indices(Role::kPhi));
  return g;
}

GradEstimate rws_theta_grad(const LogWeightBatch& lw, const ParamLayout& layout) {
  check_batch(lw, layout);
  const auto w = normalized_weights(lw.log_w);
  GradEstimate g = make(EstimatorId::kRwsWake, lw.k);
  g.theta_grad = weighted_rows(w, lw.dlogp, lw.n_params, layout.indices(Role::kTheta));
  return g;
}

GradEstimate rws_wake_phi_grad(const LogWeightBatch& lw, const ParamLayout& layout) {
  check_batch(lw, layout);
  auto w = normalized_weights(lw.log_w);
  for (auto& v : w) v = -v;
  GradEstimate g = make(EstimatorId::kRwsWake, lw.k);
  g.phi_grad = weighted_rows(w, lw.dlogq, lw.n_params, layout.indices(Role::kPhi));
  return g;
}

GradEstimate rws_dreg_phi_grad(const LogWeightBatch& lw, const ParamLayout& layout) {
  check_batch(lw, layout);
  const auto w = normalized_weights(lw.log_w);
  const auto w2 = squared_weights(lw.log_w);
  std::vector<double> c(lw.k);
  for (std::size_t i = 0; i < lw.k; ++i) c[i] = w2[i] - w[i];
  GradEstimate g = make(EstimatorId::kRwsDreg, lw.k);
  g.phi_grad = weighted_rows(c, lw.path, lw.n_params, layout.indices(Role::kPhi));
  return g;
}

GradEstimate dreg_alpha_phi_grad(double alpha, const LogWeightBatch& lw, const ParamLayout& layout) {
  EstimatorSpec{EstimatorId::kDregAlpha, alpha}.validate();
  check_batch(lw, layout);
  const auto w = normalized_weights(lw.log_w);
  const auto w2 = squared_weights(lw.log_w);
  std::vector<double> c(lw.k);
  for (std::size_t i = 0; i < lw.k; ++i) c[i] = alpha * w[i] + (1.0 - 2.0 * alpha) * w2[i];
  GradEstimate g = make(EstimatorId::kDregAlpha, lw.k, alpha);
  g.phi_grad = weighted_rows(c, lw.path, lw.n_params, layout.indices(Role::kPhi));
  return g;
}

GradEstimate jvi1_grad(const LogWeightBatch& lw, const ParamLayout& layout) {
  check_batch(lw, layout);
  check_two(lw);
  const auto c = jvi1_coefficients(lw.log_w);
  GradEstimate g = make(EstimatorId::kJvi1, lw.k);
  g.theta_grad = weighted_total(c.total, lw, layout.indices(Role::kTheta));
  g.phi_grad = weighted_total(c.total, lw, layout.indices(Role::kPhi));
  return g;
}

GradEstimate jvi1_dreg_grad(const LogWeightBatch& lw, const ParamLayout& layout) {
  check_batch(lw, layout);
  check_two(lw);
  const auto c = jvi1_coefficients(lw.log_w);
  GradEstimate g = make(EstimatorId::kJvi1Dreg, lw.k);
  g.theta_grad = weighted_total(c.total, lw, layout.indices(Role::kTheta));
  g.phi_grad = weighted_rows(c.path, lw.path, lw.n_params, layout.indices(Role::kPhi));
  return g;
}

GradEstimate estimate(const EstimatorSpec& spec, const LogWeightBatch& lw, const ParamLayout& layout) {
  spec.validate();
  switch (spec.id) {
    case EstimatorId::kIwae: return iwae_grad_standard(lw, layout);
    case EstimatorId::kStl: return iwae_grad_stl(lw, layout);
    case EstimatorId::kIwaeDreg: return iwae_grad_dreg(lw, layout);
    case EstimatorId::kRwsWake: {
      GradEstimate g = rws_wake_phi_grad(lw, layout);
      g.theta_grad = rws_theta_grad(lw, layout).theta_grad;
      return g;
    }
    case EstimatorId::kRwsDreg: {
      GradEstimate g = rws_dreg_phi_grad(lw, layout);
      g.theta_grad = rws_theta_grad(lw, layout).theta_grad;
      return g;
    }
    case EstimatorId::kDregAlpha: {
      GradEstimate g = dreg_alpha_phi_grad(*spec.alpha, lw, layout);
      g.theta_grad = rws_theta_grad(lw, layout).theta_grad;
      return g;
    }
    case EstimatorId::kJvi1: return jvi1_grad(lw, layout);
    case EstimatorId::kJvi1Dreg: return jvi1_dreg_grad(lw, layout);
  }
  throw Error("estimate: unknown estimator");
}

GradEstimate estimate(const EstimatorSpec& spec, const Model& model, const ParamVector& params,
                      std::span<const double> x, const NoiseBatch& noise) {
  return estimate(spec, log_weights(model, params, x, noise), model.layout());
}

TotalDerivativeTerms decompose_total_derivative(const LogWeightBatch& lw, const ParamLayout& layout) {
  check_batch(lw, layout);
  const auto w = normalized_weights(lw.log_w);
  const auto idx = layout.indices(Role::kPhi);
  TotalDerivativeTerms t;
  t.k = lw.k;
  t.n_phi = idx.size();
  t.score.resize(lw.k * idx.size());
  t.path.resize(lw.k * idx.size());
  for (std::size_t i = 0; i < lw.k; ++i) {
    const auto dq = lw.dlogq_row(i);
    const auto path = lw.path_row(i);
    for (std::size_t j = 0; j < idx.size(); ++j) {
      t.score[i * idx.size() + j] = -w[i] * dq[idx[j]];
      t.path[i * idx.size() + j] = w[i] * path[idx[j]];
    }
  }
  return t;
}

std::vector<double> ascent_direction(const GradEstimate& g, const ParamLayout& layout) {
  std::vector<double> out(layout.size(), 0.0);
  const auto ti = layout.indices(Role::kTheta);
  const auto pi = layout.indices(Role::kPhi);
  if (!g.theta_grad.empty()) {
    if (g.theta_grad.size() != ti.size()) throw Error("ascent_direction: theta size mismatch");
    for (std::size_t j = 0; j < ti.size(); ++j) out[ti[j]] = g.theta_grad[j];
  }
  if (!g.phi_grad.empty()) {
    if (g.phi_grad.size() != pi.size()) throw Error("ascent_direction: phi size mismatch");
    const bool descend = g.spec.id == EstimatorId::kRwsWake || g.spec.id == EstimatorId::kRwsDreg;
    for (std::size_t j = 0; j < pi.size(); ++j) out[pi[j]] = descend ? -g.phi_grad[j] : g.phi_grad[j];
  }
  return out;
}

// ------------------------------------------------------------- surrogates ---

std::string_view surrogate_name(SurrogateKind kind) {
  switch (kind) {
    case SurrogateKind::kIwae: return "IWAE";
    case SurrogateKind::kDregIwae: return "DReG-IWAE";
    case SurrogateKind::kRws: return "RWS";
    case SurrogateKind::kDregRws: return "DReG-RWS";
    case SurrogateKind::kStl: return "STL";
    case SurrogateKind::kDregAlpha: return "DReG-alpha";
  }
  return "?";
}

SurrogateKind parse_surrogate(std::string_view s) {
  const std::string l = lower(s);
  if (l == "iwae") return SurrogateKind::kIwae;
  if (l == "dreg-iwae" || l == "iwae-dreg") return SurrogateKind::kDregIwae;
  if (l == "rws") return SurrogateKind::kRws;
  if (l == "dreg-rws" || l == "rws-dreg") return SurrogateKind::kDregRws;
  if (l == "stl") return SurrogateKind::kStl;
  if (l == "dreg-alpha" || l == "dreg(alpha)") return SurrogateKind::kDregAlpha;
  throw ConfigError("unknown surrogate kind '" + std::string(s) + "'");
}

namespace {

/// Per-sample pieces of the surrogate objectives. In "stop" mode the frozen
/// copies are stop_gradient nodes of the live graph; in "frozen" mode they
/// are recomputed from separately supplied parameter nodes.
class SurrogateParts {
 public:
  SurrogateParts(Graph& g, const Model& model, std::span<const Var> live,
                 std::span<const Var> frozen, std::span<const double> x, const NoiseBatch& noise)
      : g_(g), model_(model), live_(live), x_(x), noise_(noise), stop_mode_(frozen.empty()) {
    const std::size_t n = model.layout().size();
    if (live.size() != n) throw Error("surrogate: parameter size does not match the model");
    if (!stop_mode_ && frozen.size() != n)
      throw Error("surrogate: frozen parameter size does not match the model");
    if (noise.k == 0) throw Error("surrogate: K must be at least 1");
    if (noise.dim != model.latent_dim())
      throw Error("surrogate: noise dimension does not match the latent");

    q_live_ = model.inference(g, live, x);
    if (stop_mode_) {
      frozen_.reserve(n);
      for (const Var& p : live) frozen_.push_back(g.stop_gradient(p));
      q_frozen_ = stopped(q_live_);
    } else {
      frozen_.assign(frozen.begin(), frozen.end());
      q_frozen_ = model.inference(g, frozen_, x);
    }
    const std::size_t k = noise.k;
    z_.resize(k);
    z_bar_.resize(k);
    lw_.resize(k);
    lp_tilde_.resize(k);
    lq_tilde_.resize(k);
    for (std::size_t i = 0; i < k; ++i) {
      z_[i] = sample_reparam(q_live_, noise.row(i));
      if (stop_mode_) {
        z_bar_[i].reserve(z_[i].size());
        for (const Var& zj : z_[i]) z_bar_[i].push_back(g.stop_gradient(zj));
      } else {
        z_bar_[i] = sample_reparam(q_frozen_, noise.row(i));
      }
    }
  }

  std::size_t k() const { return noise_.k; }
  /// log w_i values as of the last normalized() call.
  const std::vector<double>& log_weight_values() const { return lw_values_; }

  /// log w_i, fully live.
  Var log_w(std::size_t i) {
    if (!lw_[i].valid())
      lw_[i] = model_.log_joint(g_, live_, x_, z_[i]) - log_prob(q_live_, z_[i]);
    return lw_[i];
  }
  /// log p~: live parameters, stopped z.
  Var log_p_tilde(std::size_t i) {
    if (!lp_tilde_[i].valid()) lp_tilde_[i] = model_.log_joint(g_, live_, x_, z_bar_[i]);
    return lp_tilde_[i];
  }
  /// log q~: live parameters, stopped z.
  Var log_q_tilde(std::size_t i) {
    if (!lq_tilde_[i].valid()) lq_tilde_[i] = log_prob(q_live_, z_bar_[i]);
    return lq_tilde_[i];
  }
  /// log w^: stopped parameters, live z.
  Var log_w_hat(std::size_t i) {
    return model_.log_joint(g_, frozen_, x_, z_[i]) - log_prob(q_frozen_, z_[i]);
  }

  /// Fully stopped normalized weights w_bar_i / sum_j w_bar_j and their
  /// squares, as tape nodes with no path to any live parameter. In stop mode
  /// the log weights come from log p~ - log q~ (same values as log w_i)
  /// unless the live log w_i is needed anyway.
  void normalized(std::vector<Var>& w, std::vector<Var>& w2, bool live_log_w) {
    const std::size_t k = noise_.k;
    std::vector<Var> lw_bar(k);
    for (std::size_t i = 0; i < k; ++i) {
      if (stop_mode_) {
        lw_bar[i] = g_.stop_gradient(live_log_w ? log_w(i) : log_p_tilde(i) - log_q_tilde(i));
      } else {
        lw_bar[i] = model_.log_joint(g_, frozen_, x_, z_bar_[i]) - log_prob(q_frozen_, z_bar_[i]);
      }
    }
    lw_values_ = tape::values(lw_bar);
    const Var lse = tape::log_sum_exp(lw_bar);
    w.resize(k);
    w2.resize(k);
    for (std::size_t i = 0; i < k; ++i) {
      const Var r = lw_bar[i] - lse;
      w[i] = tape::exp(r);
      w2[i] = tape::exp(2.0 * r);
    }
  }

 private:
  Graph& g_;
  const Model& model_;
  std::span<const Var> live_;
  std::span<const double> x_;
  const NoiseBatch& noise_;
  bool stop_mode_;
  std::vector<Var> frozen_;
  DiagGaussian q_live_;
  DiagGaussian q_frozen_;
  std::vector<std::vector<Var>> z_;
  std::vector<std::vector<Var>> z_bar_;
  std::vector<Var> lw_;
  std::vector<Var> lp_tilde_;
  std::vector<Var> lq_tilde_;
  std::vector<double> lw_values_;
};

Var build_surrogate(Graph& g, SurrogateKind kind, SurrogateParts& parts, std::optional<double> alpha) {
  if (kind == SurrogateKind::kDregAlpha) {
    if (!alpha) throw ConfigError("DReG(alpha) surrogate requires alpha");
    if (!(*alpha >= 0.0 && *alpha <= 1.0)) throw ConfigError("DReG alpha must lie in [0, 1]");
  }
  std::vector<Var> w, w2;
  parts.normalized(w, w2, kind == SurrogateKind::kIwae);
  std::vector<Var> terms;
  terms.reserve(2 * parts.k());
  for (std::size_t i = 0; i < parts.k(); ++i) {
    switch (kind) {
      case SurrogateKind::kIwae:
        terms.push_back(w[i] * parts.log_w(i));
        break;
      case SurrogateKind::kDregIwae:
        terms.push_back(w[i] * parts.log_p_tilde(i));
        terms.push_back(w2[i] * parts.log_w_hat(i));
        break;
      case SurrogateKind::kRws:
        terms.push_back(w[i] * (parts.log_p_tilde(i) + parts.log_q_tilde(i)));
        break;
      case SurrogateKind::kDregRws:
        terms.push_back(w[i] * parts.log_p_tilde(i));
        terms.push_back((w[i] - w2[i]) * parts.log_w_hat(i));
        break;
      case SurrogateKind::kStl:
        terms.push_back(w[i] * (parts.log_p_tilde(i) + parts.log_w_hat(i)));
        break;
      case SurrogateKind::kDregAlpha: {
        const double a = *alpha;
        terms.push_back(w[i] * parts.log_p_tilde(i));
        terms.push_back((a * w[i] + (1.0 - 2.0 * a) * w2[i]) * parts.log_w_hat(i));
        break;
      }
    }
  }
  (void)g;
  return tape::sum(terms);
}

}  // namespace

Var surrogate_loss(Graph& g, SurrogateKind kind, const Model& model, std::span<const Var> params,
                   std::span<const double> x, const NoiseBatch& noise, std::optional<double> alpha) {
  SurrogateParts parts(g, model, params, {}, x, noise);
  return build_surrogate(g, kind, parts, alpha);
}

Var surrogate_loss_frozen(Graph& g, SurrogateKind kind, const Model& model,
                          std::span<const Var> params, std::span<const Var> frozen,
                          std::span<const double> x, const NoiseBatch& noise,
                          std::optional<double> alpha) {
  if (frozen.empty()) throw Error("surrogate_loss_frozen: frozen parameters required");
  SurrogateParts parts(g, model, params, frozen, x, noise);
  return build_surrogate(g, kind, parts, alpha);
}

std::vector<double> surrogate_gradient(SurrogateKind kind, const Model& model,
                                       const ParamVector& params, std::span<const double> x,
                                       const NoiseBatch& noise, std::optional<double> alpha) {
  Graph g;
  const auto live = g.leaves(params.flat);
  const Var loss = surrogate_loss(g, kind, model, live, x, noise, alpha);
  return g.backward(loss).gather(live);
}

std::vector<Var> record_log_weights(Graph& g, const Model& model, std::span<const Var> params,
                                    std::span<const double> x, const NoiseBatch& noise) {
  SurrogateParts parts(g, model, params, {}, x, noise);
  std::vector<Var> out;
  out.reserve(noise.k);
  for (std::size_t i = 0; i < noise.k; ++i) out.push_back(parts.log_w(i));
  return out;
}

Var record_iwae_bound(std::span<const Var> log_w) {
  if (log_w.empty()) throw Error("iwae_bound: K must be at least 1");
  return tape::log_sum_exp(log_w) - std::log(static_cast<double>(log_w.size()));
}

Var record_jvi1_estimate(std::span<const Var> log_w) {
  const std::size_t k = log_w.size();
  if (k < 2) throw Error("JVI1 requires K >= 2");
  const double kd = static_cast<double>(k);
  std::vector<Var> inner;
  inner.reserve(k);
  std::vector<Var> rest(k - 1);
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t r = 0;
    for (std::size_t j = 0; j < k; ++j)
      if (j != i) rest[r++] = log_w[j];
    inner.push_back(record_iwae_bound(rest));
  }
  return kd * record_iwae_bound(log_w) - ((kd - 1.0) / kd) * tape::sum(inner);
}

RecordedObjective jvi1_objective(Graph& g, const Model& model, std::span<const Var> params,
                                 std::span<const double> x, const NoiseBatch& noise, bool dreg) {
  if (noise.k < 2) throw Error("JVI1 requires K >= 2");
  SurrogateParts parts(g, model, params, {}, x, noise);
  std::vector<Var> lw;
  lw.reserve(noise.k);
  if (!dreg) {
    for (std::size_t i = 0; i < noise.k; ++i) lw.push_back(parts.log_w(i));
    const Var est = record_jvi1_estimate(lw);
    return {est, est.value()};
  }
  for (std::size_t i = 0; i < noise.k; ++i) lw.push_back(parts.log_p_tilde(i) - parts.log_q_tilde(i));
  const auto lw_values = tape::values(lw);
  const auto c = jvi1_coefficients(lw_values);
  std::vector<Var> terms;
  terms.reserve(2 * noise.k);
  for (std::size_t i = 0; i < noise.k; ++i) {
    terms.push_back(c.total[i] * parts.log_p_tilde(i));
    terms.push_back(c.path[i] * parts.log_w_hat(i));
  }
  return {tape::sum(terms), jvi1_estimate(lw_values)};
}

SurrogateKind surrogate_for(EstimatorId id) {
  switch (id) {
    case EstimatorId::kIwae: return SurrogateKind::kIwae;
    case EstimatorId::kStl: return SurrogateKind::kStl;
    case EstimatorId::kIwaeDreg: return SurrogateKind::kDregIwae;
    case EstimatorId::kRwsWake: return SurrogateKind::kRws;
    case EstimatorId::kRwsDreg: return SurrogateKind::kDregRws;
    case EstimatorId::kDregAlpha: return SurrogateKind::kDregAlpha;
    case EstimatorId::kJvi1:
    case EstimatorId::kJvi1Dreg: break;
  }
  throw Error("no weighted surrogate for the JVI estimators");
}

RecordedObjective training_objective(Graph& g, const EstimatorSpec& spec, const Model& model,
                                     std::span<const Var> params, std::span<const double> x,
                                     const NoiseBatch& noise) {
  spec.validate();
  if (spec.id == EstimatorId::kJvi1 || spec.id == EstimatorId::kJvi1Dreg)
    return jvi1_objective(g, model, params, x, noise, spec.id == EstimatorId::kJvi1Dreg);
  if (requires_two_samples(spec.id) && noise.k < 2)
    throw ConfigError(spec.name() + " requires K >= 2");
  SurrogateParts parts(g, model, params, {}, x, noise);
  const Var s = build_surrogate(g, surrogate_for(spec.id), parts, spec.alpha);
  return {s, iwae_bound(parts.log_weight_values())};
}

}  // namespace dreg
