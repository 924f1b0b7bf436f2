#include "dreg/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <sstream>
#include <tuple>

#include "dreg/data.hpp"
#include "dreg/output.hpp"
#include "dreg/replicates.hpp"

namespace dreg {

namespace {

bool is_descent(EstimatorId id) { return id == EstimatorId::kRwsWake || id == EstimatorId::kRwsDreg; }

bool applicable(const EstimatorSpec& s, std::size_t k) { return !requires_two_samples(s.id) || k >= 2; }

std::size_t index_of(std::vector<EstimatorSpec>& list, const EstimatorSpec& s) {
  auto it = std::find(list.begin(), list.end(), s);
  if (it != list.end()) return static_cast<std::size_t>(it - list.begin());
  list.push_back(s);
  return list.size() - 1;
}

std::vector<double> ascent_rows(const ReplicateResult& r, std::size_t e, const EstimatorSpec& s) {
  std::vector<double> out = r.phi[e];
  if (is_descent(s.id))
    for (double& v : out) v = -v;
  return out;
}

ToyModel checked_toy(const ExperimentConfig& cfg) {
  if (cfg.toy.tie_bias_to_theta)
    throw ConfigError("gradient sweeps need separate inference parameters (toy.tie_bias_to_theta)");
  return ToyModel(cfg.toy);
}

std::string str(std::size_t v) { return std::to_string(v); }

}  // namespace

// ------------------------------------------------------------------ toy-snr ---

ToySnrResult run_toy_snr(const ExperimentConfig& cfg) {
  if (cfg.experiment != Experiment::kToySnr) throw ConfigError("run_toy_snr: wrong experiment");
  cfg.validate();
  const ToyModel model = checked_toy(cfg);
  const EstimatorSpec iwae{EstimatorId::kIwae, {}};

  ToySnrResult out;
  out.n_phi = model.layout().indices(Role::kPhi).size();
  const std::size_t d = out.n_phi;

  struct Acc {
    std::vector<double> snr, snr_signal, variance, bias2;
  };
  // (estimator, K) -> trial sums
  std::vector<std::vector<Acc>> acc(cfg.estimators.size(), std::vector<Acc>(cfg.k_grid.size()));
  std::vector<std::vector<std::size_t>> counts(cfg.estimators.size(),
                                               std::vector<std::size_t>(cfg.k_grid.size(), 0));

  std::vector<ToyTrial> trials;
  for (std::size_t t = 0; t < cfg.trials; ++t)
    trials.push_back(make_toy_trial(model, cfg.perturb_sigma, cfg.seed, t));

  for (std::size_t ki = 0; ki < cfg.k_grid.size(); ++ki) {
    const std::size_t k = cfg.k_grid[ki];
    ReplicatePlan plan;
    plan.k = k;
    plan.n = cfg.samples;
    plan.seed = derive_seed(cfg.seed, k);
    const std::size_t iwae_idx = index_of(plan.estimators, iwae);
    std::vector<std::optional<std::size_t>> slot(cfg.estimators.size());
    for (std::size_t e = 0; e < cfg.estimators.size(); ++e)
      if (applicable(cfg.estimators[e], k)) slot[e] = index_of(plan.estimators, cfg.estimators[e]);

    for (std::size_t t = 0; t < cfg.trials; ++t) {
      const ToyTrial& tr = trials[t];
      std::vector<double> ref;
      if (cfg.reference == Reference::kExact) {
        ref = toy_expected_iwae_phi_grad(model, tr.params, tr.x, k);
      } else {
        ref = reference_mean(model, tr.params, tr.x, k, cfg.reference_samples, plan.seed,
                             stream_id(StreamTag::kEval, t))
                  .mean;
      }
      out.references.push_back(ref);

      plan.stream = stream_id(StreamTag::kNoise, t);
      const ReplicateResult res = run_replicates(model, tr.params, tr.x, plan);
      const std::vector<double> base = ascent_rows(res, iwae_idx, iwae);

      for (std::size_t e = 0; e < cfg.estimators.size(); ++e) {
        if (!slot[e]) continue;
        const EstimatorSpec& spec = cfg.estimators[e];
        const std::vector<double> rows = ascent_rows(res, *slot[e], spec);
        Moments m(d);
        for (std::size_t r = 0; r < res.n; ++r)
          m.add(std::span<const double>(rows).subspan(r * d, d));
        const EstimatorStats s = estimator_stats(m, ref);
        const EstimatorStats sig = estimator_stats_with_signal(m, ref, ref);
        Acc& a = acc[e][ki];
        if (a.snr.empty()) a = {std::vector<double>(d, 0.0), std::vector<double>(d, 0.0),
                                std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
        for (std::size_t j = 0; j < d; ++j) {
          out.rows.push_back({spec, k, t, j, s.mean[j], s.variance[j], s.bias2[j], s.snr[j]});
          a.snr[j] += s.snr[j];
          a.snr_signal[j] += sig.snr[j];
          a.variance[j] += s.variance[j];
          a.bias2[j] += s.bias2[j];
        }
        ++counts[e][ki];
        if (spec == iwae) continue;
        for (std::size_t j = 0; j < d; ++j)
          out.ttests.push_back({spec, "IWAE", k, t, paired_t_test_column(rows, base, d, j)});
      }
    }
  }

  for (std::size_t e = 0; e < cfg.estimators.size(); ++e) {
    for (std::size_t ki = 0; ki < cfg.k_grid.size(); ++ki) {
      const std::size_t c = counts[e][ki];
      if (c == 0) continue;
      const Acc& a = acc[e][ki];
      const double inv = 1.0 / static_cast<double>(c);
      for (std::size_t j = 0; j < d; ++j)
        out.summary.push_back({cfg.estimators[e], cfg.k_grid[ki], j, a.snr[j] * inv,
                               a.snr_signal[j] * inv, a.variance[j] * inv, a.bias2[j] * inv});
    }
  }

  // Rows ordered by estimator (config order), K, trial, coordinate.
  auto rank = [&](const EstimatorSpec& s) {
    return std::find(cfg.estimators.begin(), cfg.estimators.end(), s) - cfg.estimators.begin();
  };
  std::stable_sort(out.rows.begin(), out.rows.end(), [&](const ToySnrRow& a, const ToySnrRow& b) {
    return std::tuple(rank(a.estimator), a.k, a.trial, a.coordinate) <
           std::tuple(rank(b.estimator), b.k, b.trial, b.coordinate);
  });
  std::stable_sort(out.ttests.begin(), out.ttests.end(), [&](const TTestRow& a, const TTestRow& b) {
    return std::tuple(rank(a.estimator), a.k, a.trial, a.test.coordinate) <
           std::tuple(rank(b.estimator), b.k, b.trial, b.test.coordinate);
  });
  return out;
}

void write_toy_snr(const ToySnrResult& r, const std::filesystem::path& dir) {
  CsvTable stats({"estimator", "K", "trial", "coordinate", "mean", "variance", "bias2", "snr"});
  for (const auto& row : r.rows)
    stats.row({row.estimator.name(), str(row.k), str(row.trial), str(row.coordinate),
               format_number(row.mean), format_number(row.variance), format_number(row.bias2),
               format_number(row.snr)});
  CsvTable summary({"estimator", "K", "coordinate", "snr", "snr_signal", "variance", "bias2"});
  for (const auto& row : r.summary)
    summary.row({row.estimator.name(), str(row.k), str(row.coordinate), format_number(row.snr),
                 format_number(row.snr_signal), format_number(row.variance),
                 format_number(row.bias2)});
  CsvTable tt({"estimator", "reference", "K", "trial", "coordinate", "mean_diff", "t", "p", "n"});
  for (const auto& row : r.ttests)
    tt.row({row.estimator.name(), row.reference, str(row.k), str(row.trial),
            str(row.test.coordinate), format_number(row.test.mean_diff), format_number(row.test.t),
            format_number(row.test.p), str(row.test.n)});
  stats.write(dir / "toy_snr.csv");
  summary.write(dir / "toy_snr_summary.csv");
  tt.write(dir / "toy_snr_ttest.csv");
}

// ---------------------------------------------------------------- bias-test ---

std::string bias_reference_name(const EstimatorSpec& s) {
  switch (s.id) {
    case EstimatorId::kRwsDreg: return "RWS-wake";
    case EstimatorId::kJvi1Dreg: return "JVI1";
    case EstimatorId::kDregAlpha: {
      const double a = s.alpha.value_or(0.0);
      return format_number(1.0 - a) + "*IWAE-" + format_number(a) + "*RWS-wake";
    }
    default: return "IWAE";
  }
}

BiasTestResult run_bias_test(const ExperimentConfig& cfg) {
  if (cfg.experiment != Experiment::kBiasTest) throw ConfigError("run_bias_test: wrong experiment");
  cfg.validate();
  const ToyModel model = checked_toy(cfg);
  const std::size_t d = model.layout().indices(Role::kPhi).size();
  const EstimatorSpec iwae{EstimatorId::kIwae, {}};
  const EstimatorSpec wake{EstimatorId::kRwsWake, {}};
  const EstimatorSpec jvi{EstimatorId::kJvi1, {}};

  BiasTestResult out;
  out.n = cfg.samples;
  out.p_threshold = cfg.p_threshold;
  for (std::size_t k : cfg.k_grid) {
    ReplicatePlan plan;
    plan.k = k;
    plan.n = cfg.samples;
    plan.seed = derive_seed(cfg.seed, k);
    std::vector<std::optional<std::size_t>> slot(cfg.estimators.size());
    for (std::size_t e = 0; e < cfg.estimators.size(); ++e) {
      const EstimatorSpec& s = cfg.estimators[e];
      if (!applicable(s, k)) {
        out.skipped.push_back(s.name() + " at K=" + str(k) + " (needs K >= 2)");
        continue;
      }
      slot[e] = index_of(plan.estimators, s);
      switch (s.id) {
        case EstimatorId::kRwsDreg: index_of(plan.estimators, wake); break;
        case EstimatorId::kJvi1Dreg: index_of(plan.estimators, jvi); break;
        case EstimatorId::kDregAlpha:
          index_of(plan.estimators, iwae);
          index_of(plan.estimators, wake);
          break;
        default: index_of(plan.estimators, iwae); break;
      }
    }
    if (plan.estimators.empty()) continue;
    auto find = [&](const EstimatorSpec& s) {
      return static_cast<std::size_t>(
          std::find(plan.estimators.begin(), plan.estimators.end(), s) - plan.estimators.begin());
    };

    for (std::size_t t = 0; t < cfg.trials; ++t) {
      const ToyTrial tr = make_toy_trial(model, cfg.perturb_sigma, cfg.seed, t);
      plan.stream = stream_id(StreamTag::kNoise, t);
      const ReplicateResult res = run_replicates(model, tr.params, tr.x, plan);
      for (std::size_t e = 0; e < cfg.estimators.size(); ++e) {
        if (!slot[e]) continue;
        const EstimatorSpec& s = cfg.estimators[e];
        // Both sides in the estimator's own sign convention.
        std::vector<double> ref;
        switch (s.id) {
          case EstimatorId::kRwsDreg: ref = res.phi[find(wake)]; break;
          case EstimatorId::kJvi1Dreg: ref = res.phi[find(jvi)]; break;
          case EstimatorId::kDregAlpha: {
            const double a = *s.alpha;
            const auto& gi = res.phi[find(iwae)];
            const auto& gw = res.phi[find(wake)];
            ref.resize(gi.size());
            for (std::size_t i = 0; i < gi.size(); ++i) ref[i] = (1.0 - a) * gi[i] - a * gw[i];
            break;
          }
          default: ref = res.phi[find(iwae)]; break;
        }
        BiasVerdict v;
        v.estimator = s;
        v.reference = bias_reference_name(s);
        v.k = k;
        v.trial = t;
        for (std::size_t j = 0; j < d; ++j) {
          v.coordinates.push_back(paired_t_test_column(res.phi[*slot[e]], ref, d, j));
          v.min_p = std::min(v.min_p, v.coordinates.back().p);
        }
        v.bias_detected = v.min_p < cfg.p_threshold;
        out.verdicts.push_back(std::move(v));
      }
    }
  }
  return out;
}

std::string bias_report_text(const BiasTestResult& r) {
  std::ostringstream os;
  os << "paired t-tests on phi-gradients, n = " << r.n << ", threshold p = "
     << format_number(r.p_threshold) << "\n";
  for (const auto& v : r.verdicts) {
    os << "\n" << v.estimator.name() << " vs " << v.reference << ", K = " << v.k << ", trial "
       << v.trial << "\n";
    for (const auto& c : v.coordinates) {
      os << "  coordinate " << c.coordinate << ": t = " << format_number(c.t)
         << ", p = " << format_number(c.p);
      if (c.degenerate) os << " (identical samples)";
      os << "\n";
    }
    os << "  verdict: " << (v.bias_detected ? "bias detected" : "no bias detected")
       << " (min p = " << format_number(v.min_p) << ")\n";
  }
  for (const auto& s : r.skipped) os << "\nskipped: " << s << "\n";
  return os.str();
}

void write_bias_test(const BiasTestResult& r, const std::filesystem::path& dir) {
  CsvTable tt({"estimator", "reference", "K", "trial", "coordinate", "mean_diff", "t", "p", "n"});
  for (const auto& v : r.verdicts)
    for (const auto& c : v.coordinates)
      tt.row({v.estimator.name(), v.reference, str(v.k), str(v.trial), str(c.coordinate),
              format_number(c.mean_diff), format_number(c.t), format_number(c.p), str(c.n)});
  tt.write(dir / "bias_test.csv");
  write_file_atomic(dir / "bias_test_report.txt", bias_report_text(r));
}

// -------------------------------------------------------------------- train ---

namespace {

struct TrainData {
  Dataset train;
  Dataset heldout;
};

TrainData load_train_data(const ExperimentConfig& cfg) {
  const DataConfig& dc = cfg.data;
  Splits s;
  if (dc.source == "synthetic") {
    const Dataset all = synthetic_dataset(dc.n, cfg.vae.obs, cfg.vae.latent,
                                          derive_seed(cfg.seed, 0x5A17), cfg.vae.hidden);
    s = split(all, dc.train_fraction, dc.valid_fraction, dc.test_fraction,
              derive_seed(cfg.seed, 0x5B11));
  } else {
    if (!std::filesystem::exists(dc.train_images))
      throw Error("dataset missing: " + dc.train_images);
    if (!std::filesystem::exists(dc.test_images)) throw Error("dataset missing: " + dc.test_images);
    s = mnist_standard_split(load_idx(dc.train_images), load_idx(dc.test_images), dc.mnist_valid);
  }
  if (s.train.obs_dim != cfg.vae.obs)
    throw ConfigError("data has " + str(s.train.obs_dim) + " pixels but vae.obs is " +
                      str(cfg.vae.obs));
  return {std::move(s.train), std::move(s.test)};
}

bool finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

TrainResult run_train(const ExperimentConfig& cfg, const std::filesystem::path& divergence_checkpoint) {
  if (cfg.experiment != Experiment::kTrain) throw ConfigError("run_train: wrong experiment");
  cfg.validate();
  const TrainData data = load_train_data(cfg);
  const MlpVae model(cfg.vae);
  const ParamLayout& layout = model.layout();
  const std::size_t n_params = layout.size();
  const std::size_t latent = cfg.vae.latent;
  const auto theta_idx = layout.indices(Role::kTheta);
  const auto phi_idx = layout.indices(Role::kPhi);

  TrainResult out;
  out.estimator = cfg.estimator;
  out.k = cfg.k;
  out.two_updates = is_descent(cfg.estimator.id);
  out.logs_jvi = requires_two_samples(cfg.estimator.id);
  out.params = model.init_params(derive_seed(cfg.seed, static_cast<std::uint64_t>(StreamTag::kInit)));

  const std::size_t n_train = data.train.n;
  const std::size_t batch = cfg.batch_size;
  std::size_t total_steps = cfg.steps;
  if (cfg.epochs > 0) total_steps = std::min(total_steps, (cfg.epochs * n_train + batch - 1) / batch);

  // Held-out points: fixed binarization and fixed noise, so successive
  // evaluations differ only through the parameters.
  const std::size_t n_eval = cfg.eval_points == 0 ? data.heldout.n
                                                  : std::min(cfg.eval_points, data.heldout.n);
  std::vector<std::vector<double>> eval_x(n_eval);
  const std::uint64_t eval_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(StreamTag::kEval));
  for (std::size_t i = 0; i < n_eval; ++i) eval_x[i] = binarize_row(data.heldout, i, eval_seed, 0);

  auto evaluate = [&](const ParamVector& p, double& bound, double& jvi) {
    std::vector<double> b(n_eval), j(n_eval, 0.0);
#pragma omp parallel
    {
      tape::Graph g;
#pragma omp for schedule(static)
      for (std::size_t i = 0; i < n_eval; ++i) {
        g.clear();
        const auto live = g.leaves(p.flat);
        const NoiseBatch noise = NoiseBatch::draw(cfg.eval_k, latent, eval_seed,
                                                  stream_id(StreamTag::kEval, 0), i * cfg.eval_k * latent);
        const auto lw = tape::values(record_log_weights(g, model, live, eval_x[i], noise));
        b[i] = iwae_bound(lw);
        if (out.logs_jvi) j[i] = jvi1_estimate(lw);
      }
    }
    bound = 0.0;
    jvi = 0.0;
    for (std::size_t i = 0; i < n_eval; ++i) {
      bound += b[i];
      jvi += j[i];
    }
    bound /= static_cast<double>(n_eval);
    jvi /= static_cast<double>(n_eval);
  };

  Adam adam(n_params, cfg.optimizer);
  VarianceTraceEma ema_theta(theta_idx.size(), cfg.ema_decay);
  VarianceTraceEma ema_phi(phi_idx.size(), cfg.ema_decay);

  std::vector<std::vector<double>> grads(batch);
  std::vector<double> values(batch);
  std::vector<double> g_mean(n_params), g_theta(theta_idx.size()), g_phi(phi_idx.size());

  for (std::size_t step = 0; step <= total_steps; ++step) {
    const CounterRng pick(cfg.seed, stream_id(StreamTag::kBatch, step));
    const std::uint64_t epoch = step * batch / n_train;
    std::exception_ptr failure;
#pragma omp parallel
    {
      tape::Graph g;
#pragma omp for schedule(static)
      for (std::size_t b = 0; b < batch; ++b) {
        try {
          const auto idx = static_cast<std::size_t>(pick.uniform(b) * static_cast<double>(n_train));
          const auto x = binarize_row(data.train, std::min(idx, n_train - 1), cfg.seed, epoch);
          const NoiseBatch noise = NoiseBatch::draw(cfg.k, latent, cfg.seed,
                                                    stream_id(StreamTag::kNoise, step), b * cfg.k * latent);
          g.clear();
          const auto live = g.leaves(out.params.flat);
          const RecordedObjective obj = training_objective(g, cfg.estimator, model, live, x, noise);
          grads[b] = g.backward(obj.surrogate).gather(live);
          values[b] = obj.value;
        } catch (...) {
#pragma omp critical
          if (!failure) failure = std::current_exception();
        }
      }
    }
    if (failure) std::rethrow_exception(failure);

    // Ordered reduction keeps the result independent of the thread count.
    double objective = 0.0;
    std::fill(g_mean.begin(), g_mean.end(), 0.0);
    for (std::size_t b = 0; b < batch; ++b) {
      objective += values[b];
      for (std::size_t i = 0; i < n_params; ++i) g_mean[i] += grads[b][i];
    }
    const double inv = 1.0 / static_cast<double>(batch);
    objective *= inv;
    for (double& v : g_mean) v *= inv;

    if (!std::isfinite(objective) || !finite(g_mean)) {
      if (!divergence_checkpoint.empty()) save_checkpoint(out.params, divergence_checkpoint);
      throw Error("training diverged at step " + str(step) + " (non-finite objective or gradient)" +
                  (divergence_checkpoint.empty() ? std::string()
                                                 : "; last good parameters in " +
                                                       divergence_checkpoint.string()));
    }

    if (step < total_steps) {
      for (std::size_t i = 0; i < theta_idx.size(); ++i) g_theta[i] = g_mean[theta_idx[i]];
      for (std::size_t i = 0; i < phi_idx.size(); ++i) g_phi[i] = g_mean[phi_idx[i]];
      ema_theta.update(g_theta);
      ema_phi.update(g_phi);
    }

    if (step % cfg.eval_every == 0 || step == total_steps) {
      TrainRow row;
      row.step = step;
      row.train_objective = objective;
      evaluate(out.params, row.heldout_bound, row.heldout_jvi);
      row.var_trace_theta = ema_theta.value();
      row.var_trace_phi = ema_phi.value();
      out.rows.push_back(row);
    }

    if (step < total_steps) {
      if (out.two_updates) {
        // RWS: the generative model follows the IWAE-weighted theta update,
        // the inference network its own wake objective.
        adam.step(out.params.flat, g_mean, theta_idx);
        adam.step(out.params.flat, g_mean, phi_idx);
      } else {
        adam.step(out.params.flat, g_mean);
      }
    }
  }
  return out;
}

void write_train(const TrainResult& r, const std::filesystem::path& dir) {
  CsvTable t({"step", "estimator", "K", "train_objective", "heldout_bound", "var_trace_theta",
              "var_trace_phi"});
  for (const auto& row : r.rows)
    t.row({str(row.step), r.estimator.name(), str(r.k), format_number(row.train_objective),
           format_number(row.heldout_bound), format_number(row.var_trace_theta),
           format_number(row.var_trace_phi)});
  t.write(dir / "train.csv");
  if (r.logs_jvi) {
    CsvTable j({"step", "estimator", "K", "heldout_jvi"});
    for (const auto& row : r.rows)
      j.row({str(row.step), r.estimator.name(), str(r.k), format_number(row.heldout_jvi)});
    j.write(dir / "train_jvi.csv");
  }
  save_checkpoint(r.params, dir / "checkpoint.bin");
}

// ----------------------------------------------------------------------------

void run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& dir) {
  cfg.validate();
  std::filesystem::create_directories(dir);
  switch (cfg.experiment) {
    case Experiment::kToySnr: write_toy_snr(run_toy_snr(cfg), dir); break;
    case Experiment::kBiasTest: write_bias_test(run_bias_test(cfg), dir); break;
    case Experiment::kTrain: write_train(run_train(cfg, dir / "checkpoint_last_good.bin"), dir); break;
  }
  write_file_atomic(dir / "manifest.json", manifest_text(cfg));
}

}  // namespace dreg
