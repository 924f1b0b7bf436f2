#include "dreg/models.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace dreg {

using tape::Var;

namespace {

void expect_dim(std::size_t got, std::size_t want, const char* what) {
  if (got != want)
    throw Error(std::string(what) + ": dimension mismatch (got " + std::to_string(got) +
                ", expected " + std::to_string(want) + ")");
}

std::span<const Var> sub(std::span<const Var> params, const ParamSlice& s) {
  return params.subspan(s.offset, s.length);
}

bool is_binary(std::span<const double> x) {
  for (double v : x)
    if (v != 0.0 && v != 1.0) return false;
  return true;
}

/// W x + b for a data vector x. Binary inputs select weight columns instead
/// of multiplying by constants.
std::vector<Var> affine_data(tape::Graph& g, std::span<const Var> w, std::span<const Var> b,
                             std::span<const double> x) {
  const std::size_t rows = b.size();
  const std::size_t cols = x.size();
  std::vector<Var> out;
  out.reserve(rows);
  if (is_binary(x)) {
    std::vector<Var> picked;
    picked.reserve(cols + 1);
    for (std::size_t r = 0; r < rows; ++r) {
      picked.clear();
      for (std::size_t c = 0; c < cols; ++c)
        if (x[c] == 1.0) picked.push_back(w[r * cols + c]);
      picked.push_back(b[r]);
      out.push_back(tape::sum(picked));
    }
    return out;
  }
  std::vector<Var> xs;
  xs.reserve(cols);
  for (double v : x) xs.push_back(g.constant(v));
  for (std::size_t r = 0; r < rows; ++r)
    out.push_back(tape::dot(w.subspan(r * cols, cols), xs) + b[r]);
  return out;
}

std::vector<Var> affine(std::span<const Var> w, std::span<const Var> b, std::span<const Var> in) {
  const std::size_t cols = in.size();
  std::vector<Var> out;
  out.reserve(b.size());
  for (std::size_t r = 0; r < b.size(); ++r)
    out.push_back(tape::dot(w.subspan(r * cols, cols), in) + b[r]);
  return out;
}

std::vector<Var> tanh_all(std::vector<Var> v) {
  for (auto& e : v) e = tape::tanh(e);
  return v;
}

}  // namespace

// ------------------------------------------------------------------ toy ----

ToyModel::ToyModel(ToyConfig cfg) : cfg_(cfg) {
  if (cfg_.dim == 0) throw Error("ToyModel: dimension must be positive");
  if (!(cfg_.q_variance > 0.0)) throw Error("ToyModel: q variance must be positive");
  layout_.add("theta", cfg_.dim, cfg_.tie_bias_to_theta ? Role::kShared : Role::kTheta);
  layout_.add("A", cfg_.dim * cfg_.dim, Role::kPhi);
  if (!cfg_.tie_bias_to_theta) layout_.add("b", cfg_.dim, Role::kPhi);
}

ParamVector ToyModel::make_params(std::span<const double> theta, std::span<const double> a,
                                  std::span<const double> b) const {
  expect_dim(theta.size(), cfg_.dim, "ToyModel::make_params theta");
  expect_dim(a.size(), cfg_.dim * cfg_.dim, "ToyModel::make_params A");
  ParamVector p(layout_);
  std::copy(theta.begin(), theta.end(), p.slice("theta").begin());
  std::copy(a.begin(), a.end(), p.slice("A").begin());
  if (!cfg_.tie_bias_to_theta) {
    expect_dim(b.size(), cfg_.dim, "ToyModel::make_params b");
    std::copy(b.begin(), b.end(), p.slice("b").begin());
  }
  return p;
}

std::vector<double> ToyModel::inference_mean(const ParamVector& p, std::span<const double> x) const {
  const std::size_t d = cfg_.dim;
  expect_dim(x.size(), d, "ToyModel::inference_mean");
  const auto a = p.slice("A");
  const auto theta = p.slice("theta");
  std::vector<double> mu(d, 0.0);
  for (std::size_t k = 0; k < d; ++k) {
    double acc = cfg_.tie_bias_to_theta ? 0.5 * theta[k] : p.slice("b")[k];
    for (std::size_t l = 0; l < d; ++l) acc += a[k * d + l] * x[l];
    mu[k] = acc;
  }
  return mu;
}

DiagGaussian ToyModel::inference(tape::Graph& g, std::span<const Var> params,
                                 std::span<const double> x) const {
  const std::size_t d = cfg_.dim;
  expect_dim(params.size(), layout_.size(), "ToyModel::inference params");
  expect_dim(x.size(), d, "ToyModel::inference x");
  const auto a = sub(params, layout_.find("A"));
  const auto theta = sub(params, layout_.find("theta"));
  std::vector<Var> xs;
  xs.reserve(d);
  for (double v : x) xs.push_back(g.constant(v));
  std::vector<Var> mean;
  std::vector<Var> log_scale;
  mean.reserve(d);
  log_scale.reserve(d);
  const double ls = 0.5 * std::log(cfg_.q_variance);
  for (std::size_t k = 0; k < d; ++k) {
    const Var bias = cfg_.tie_bias_to_theta ? 0.5 * theta[k] : sub(params, layout_.find("b"))[k];
    mean.push_back(tape::dot(a.subspan(k * d, d), xs) + bias);
    log_scale.push_back(g.constant(ls));
  }
  return DiagGaussian(std::move(mean), std::move(log_scale));
}

Var ToyModel::log_joint(tape::Graph& g, std::span<const Var> params, std::span<const double> x,
                        std::span<const Var> z) const {
  const std::size_t d = cfg_.dim;
  expect_dim(params.size(), layout_.size(), "ToyModel::log_joint params");
  expect_dim(x.size(), d, "ToyModel::log_joint x");
  expect_dim(z.size(), d, "ToyModel::log_joint z");
  const auto theta = sub(params, layout_.find("theta"));
  std::vector<Var> terms;
  terms.reserve(2 * d);
  for (std::size_t j = 0; j < d; ++j) {
    terms.push_back(-0.5 * square(z[j] - theta[j]));
    terms.push_back(-0.5 * square(g.constant(x[j]) - z[j]));
  }
  return tape::sum(terms) - 2.0 * kHalfLog2Pi * static_cast<double>(d);
}

bool ToyModel::closed_form_log_weights(const ParamVector& p, std::span<const double> x,
                                       const NoiseBatch& noise, LogWeightBatch& out) const {
  if (cfg_.tie_bias_to_theta) return false;
  const std::size_t d = cfg_.dim;
  expect_dim(x.size(), d, "ToyModel::log_weights x");
  expect_dim(noise.dim, d, "ToyModel::log_weights noise");
  const std::size_t k = noise.k;
  const std::size_t n_params = layout_.size();
  out.resize(k, d, n_params);
  out.noise_seed = noise.seed;
  out.noise_stream = noise.stream;
  out.noise_offset = noise.offset;

  const auto theta = p.slice("theta");
  const std::size_t a_off = layout_.find("A").offset;
  const std::size_t b_off = layout_.find("b").offset;
  const auto mu = inference_mean(p, x);
  const double s = std::sqrt(cfg_.q_variance);
  const double log_s = 0.5 * std::log(cfg_.q_variance);

  for (std::size_t i = 0; i < k; ++i) {
    const auto eps = noise.row(i);
    double lp = 0.0;
    double lq = 0.0;
    double* path = out.path.data() + i * n_params;
    double* dlp = out.dlogp.data() + i * n_params;
    double* dlq = out.dlogq.data() + i * n_params;
    double* gz = out.dlogw_dz.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) {
      const double z = mu[j] + s * eps[j];
      lp += -0.5 * (z - theta[j]) * (z - theta[j]) - 0.5 * (x[j] - z) * (x[j] - z);
      lq += -kHalfLog2Pi - log_s - 0.5 * eps[j] * eps[j];
      const double g = (theta[j] - z) + (x[j] - z) + eps[j] / s;
      const double score = eps[j] / s;
      gz[j] = g;
      dlp[j] = z - theta[j];
      path[b_off + j] = g;
      dlq[b_off + j] = score;
      for (std::size_t l = 0; l < d; ++l) {
        path[a_off + j * d + l] = g * x[l];
        dlq[a_off + j * d + l] = score * x[l];
      }
    }
    lp -= 2.0 * kHalfLog2Pi * static_cast<double>(d);
    out.log_w[i] = lp - lq;
  }
  return true;
}

double toy_log_marginal(const ToyModel& m, const ParamVector& p, std::span<const double> x) {
  const std::size_t d = m.config().dim;
  expect_dim(x.size(), d, "toy_log_marginal");
  const auto theta = p.slice("theta");
  double acc = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double r = x[j] - theta[j];
    acc += -0.5 * std::log(4.0 * std::numbers::pi) - 0.25 * r * r;
  }
  return acc;
}

ToyInference toy_optimal_inference(std::span<const double> theta) {
  const std::size_t d = theta.size();
  ToyInference out;
  out.a.assign(d * d, 0.0);
  out.b.resize(d);
  for (std::size_t k = 0; k < d; ++k) {
    out.a[k * d + k] = 0.5;
    out.b[k] = 0.5 * theta[k];
  }
  return out;
}

ToyTrial make_toy_trial(const ToyModel& m, double perturb_sigma, std::uint64_t seed,
                        std::uint64_t trial) {
  const std::size_t d = m.config().dim;
  ToyTrial t;
  const CounterRng prm(seed, stream_id(StreamTag::kTrialParams, trial));
  const CounterRng dat(seed, stream_id(StreamTag::kTrialData, trial));
  t.theta_true.resize(d);
  t.x.resize(d);
  for (std::size_t j = 0; j < d; ++j) {
    t.theta_true[j] = prm.normal(j);
    const double z = t.theta_true[j] + dat.normal(2 * j);
    t.x[j] = z + dat.normal(2 * j + 1);
  }
  const auto opt = toy_optimal_inference(t.theta_true);
  t.params = perturb_params(m.make_params(t.theta_true, opt.a, opt.b), perturb_sigma,
                            derive_seed(seed, trial));
  return t;
}

// ------------------------------------------------------------------ VAE ----

MlpVae::MlpVae(VaeConfig cfg) : cfg_(cfg) {
  if (cfg_.latent == 0 || cfg_.hidden == 0 || cfg_.obs == 0)
    throw Error("MlpVae: sizes must be positive");
  const std::size_t h = cfg_.hidden;
  layout_.add("dec_w1", h * cfg_.latent, Role::kTheta);
  layout_.add("dec_b1", h, Role::kTheta);
  layout_.add("dec_w2", h * h, Role::kTheta);
  layout_.add("dec_b2", h, Role::kTheta);
  layout_.add("dec_w3", cfg_.obs * h, Role::kTheta);
  layout_.add("dec_b3", cfg_.obs, Role::kTheta);
  layout_.add("enc_w1", h * cfg_.obs, Role::kPhi);
  layout_.add("enc_b1", h, Role::kPhi);
  layout_.add("enc_w2", h * h, Role::kPhi);
  layout_.add("enc_b2", h, Role::kPhi);
  layout_.add("enc_w3", 2 * cfg_.latent * h, Role::kPhi);
  layout_.add("enc_b3", 2 * cfg_.latent, Role::kPhi);
}

DiagGaussian MlpVae::inference(tape::Graph& g, std::span<const Var> params,
                               std::span<const double> x) const {
  expect_dim(params.size(), layout_.size(), "MlpVae::inference params");
  expect_dim(x.size(), cfg_.obs, "MlpVae::inference x");
  auto h1 = tanh_all(affine_data(g, sub(params, layout_.find("enc_w1")),
                                 sub(params, layout_.find("enc_b1")), x));
  auto h2 = tanh_all(affine(sub(params, layout_.find("enc_w2")), sub(params, layout_.find("enc_b2")), h1));
  auto out = affine(sub(params, layout_.find("enc_w3")), sub(params, layout_.find("enc_b3")), h2);
  std::vector<Var> mean(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(cfg_.latent));
  std::vector<Var> log_scale(out.begin() + static_cast<std::ptrdiff_t>(cfg_.latent), out.end());
  return DiagGaussian(std::move(mean), std::move(log_scale));
}

std::vector<Var> MlpVae::decode(tape::Graph&, std::span<const Var> params,
                                std::span<const Var> z) const {
  expect_dim(z.size(), cfg_.latent, "MlpVae::decode z");
  auto h1 = tanh_all(affine(sub(params, layout_.find("dec_w1")), sub(params, layout_.find("dec_b1")), z));
  auto h2 = tanh_all(affine(sub(params, layout_.find("dec_w2")), sub(params, layout_.find("dec_b2")), h1));
  return affine(sub(params, layout_.find("dec_w3")), sub(params, layout_.find("dec_b3")), h2);
}

Var MlpVae::log_joint(tape::Graph& g, std::span<const Var> params, std::span<const double> x,
                      std::span<const Var> z) const {
  expect_dim(params.size(), layout_.size(), "MlpVae::log_joint params");
  expect_dim(x.size(), cfg_.obs, "MlpVae::log_joint x");
  expect_dim(z.size(), cfg_.latent, "MlpVae::log_joint z");
  std::vector<Var> prior;
  prior.reserve(z.size());
  for (const auto& zj : z) prior.push_back(square(zj));
  const Var log_prior = -0.5 * tape::sum(prior) - kHalfLog2Pi * static_cast<double>(cfg_.latent);
  return log_prior + bernoulli_log_prob(decode(g, params, z), x);
}

ParamVector MlpVae::init_params(std::uint64_t seed) const {
  ParamVector p(layout_);
  const CounterRng rng(seed, stream_id(StreamTag::kInit, 0));
  auto fill = [&](const char* name, std::size_t fan_out, std::size_t fan_in) {
    const auto& s = layout_.find(name);
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (std::size_t i = 0; i < s.length; ++i)
      p.flat[s.offset + i] = limit * (2.0 * rng.uniform(s.offset + i) - 1.0);
  };
  const std::size_t h = cfg_.hidden;
  fill("dec_w1", h, cfg_.latent);
  fill("dec_w2", h, h);
  fill("dec_w3", cfg_.obs, h);
  fill("enc_w1", h, cfg_.obs);
  fill("enc_w2", h, h);
  fill("enc_w3", 2 * cfg_.latent, h);
  return p;
}

}  // namespace dreg
