#include "dreg/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace dreg {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

/// Reads keys out of one JSON object and reports whatever was left unread.
class Reader {
 public:
  Reader(const json& obj, std::string prefix) : obj_(obj), prefix_(std::move(prefix)) {
    if (!obj.is_object()) throw ConfigError(where("") + "must be an object");
  }

  const json* get(const std::string& key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  void size(const std::string& key, std::size_t& out) {
    if (const json* v = get(key)) out = to_size(*v, key);
  }
  void u64(const std::string& key, std::uint64_t& out) {
    if (const json* v = get(key)) {
      if (!v->is_number_unsigned()) throw ConfigError(where(key) + "must be a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void number(const std::string& key, double& out) {
    if (const json* v = get(key)) {
      if (!v->is_number()) throw ConfigError(where(key) + "must be a number");
      out = v->get<double>();
      if (!std::isfinite(out)) throw ConfigError(where(key) + "must be finite");
    }
  }
  void string(const std::string& key, std::string& out) {
    if (const json* v = get(key)) {
      if (!v->is_string()) throw ConfigError(where(key) + "must be a string");
      out = v->get<std::string>();
    }
  }
  void boolean(const std::string& key, bool& out) {
    if (const json* v = get(key)) {
      if (!v->is_boolean()) throw ConfigError(where(key) + "must be true or false");
      out = v->get<bool>();
    }
  }
  std::optional<Reader> child(const std::string& key) {
    if (const json* v = get(key)) return Reader(*v, prefix_ + key + ".");
    return std::nullopt;
  }

  std::size_t to_size(const json& v, const std::string& key) const {
    if (!v.is_number_unsigned()) throw ConfigError(where(key) + "must be a non-negative integer");
    return v.get<std::size_t>();
  }

  std::string where(const std::string& key) const { return "config key '" + prefix_ + key + "' "; }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it)
      if (!seen_.contains(it.key()))
        throw ConfigError("unknown config key '" + prefix_ + it.key() + "'");
  }

 private:
  const json& obj_;
  std::string prefix_;
  std::set<std::string> seen_;
};

EstimatorSpec parse_estimator(const std::string& name, const json* alpha, bool strict) {
  const bool bare = name == "DReG" || name == "dreg";
  std::optional<double> a;
  if (alpha && !alpha->is_null()) {
    if (!alpha->is_number()) throw ConfigError("config key 'alpha' must be a number or null");
    a = alpha->get<double>();
  }
  if (bare) {
    if (!a) throw ConfigError("estimator DReG needs 'alpha'");
    EstimatorSpec s{EstimatorId::kDregAlpha, a};
    s.validate();
    return s;
  }
  EstimatorSpec s = EstimatorSpec::parse(name);
  if (a && (s.id == EstimatorId::kDregAlpha ? *s.alpha != *a : strict))
    throw ConfigError("config key 'alpha' conflicts with estimator " + s.name());
  return s;
}

std::string reference_name(Reference r) { return r == Reference::kExact ? "exact" : "monte-carlo"; }

}  // namespace

std::string_view experiment_name(Experiment e) {
  switch (e) {
    case Experiment::kToySnr: return "toy-snr";
    case Experiment::kTrain: return "train";
    case Experiment::kBiasTest: return "bias-test";
  }
  return "?";
}

Experiment parse_experiment(std::string_view s) {
  if (s == "toy-snr") return Experiment::kToySnr;
  if (s == "train") return Experiment::kTrain;
  if (s == "bias-test") return Experiment::kBiasTest;
  throw ConfigError("unknown experiment '" + std::string(s) + "'");
}

ExperimentConfig default_config(Experiment e) {
  ExperimentConfig c;
  c.experiment = e;
  auto specs = [](std::initializer_list<const char*> names) {
    std::vector<EstimatorSpec> out;
    for (const char* n : names) out.push_back(EstimatorSpec::parse(n));
    return out;
  };
  switch (e) {
    case Experiment::kToySnr:
      c.estimators = specs({"IWAE", "STL", "IWAE-DReG", "RWS-wake", "RWS-DReG", "JVI1", "JVI1-DReG"});
      c.k_grid = {1, 4, 8, 16, 64, 256, 1024};
      break;
    case Experiment::kBiasTest:
      c.estimators = specs({"IWAE-DReG", "STL", "RWS-DReG", "JVI1-DReG"});
      c.k_grid = {64};
      c.trials = 1;
      c.samples = 100000;
      break;
    case Experiment::kTrain:
      c.estimators = {};
      c.k_grid = {};
      break;
  }
  return c;
}

void ExperimentConfig::validate() const {
  if (toy.dim == 0) throw ConfigError("toy.dim must be positive");
  if (!(toy.q_variance > 0.0)) throw ConfigError("toy.q_variance must be positive");
  if (!(perturb_sigma >= 0.0)) throw ConfigError("toy.perturb_sigma must be non-negative");
  if (vae.latent == 0 || vae.hidden == 0 || vae.obs == 0)
    throw ConfigError("vae dimensions must be positive");
  if (!(p_threshold > 0.0 && p_threshold < 1.0)) throw ConfigError("p_threshold must lie in (0, 1)");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ConfigError("ema_decay must lie in [0, 1)");
  Adam(1, optimizer);  // validates the optimizer settings

  switch (experiment) {
    case Experiment::kToySnr:
    case Experiment::kBiasTest:
      if (estimators.empty()) throw ConfigError("estimators must not be empty");
      if (k_grid.empty()) throw ConfigError("k_grid must not be empty");
      for (std::size_t k : k_grid)
        if (k == 0) throw ConfigError("k_grid entries must be positive");
      if (trials == 0 || samples == 0) throw ConfigError("trials and samples must be positive");
      if (samples < 2) throw ConfigError("samples must be at least 2 for variance estimates");
      for (const auto& s : estimators) s.validate();
      if (reference == Reference::kMonteCarlo && reference_samples < 2)
        throw ConfigError("reference_samples must be at least 2");
      if (toy.tie_bias_to_theta && reference == Reference::kExact)
        throw ConfigError("the exact reference needs separate inference parameters");
      break;
    case Experiment::kTrain:
      estimator.validate();
      if (k == 0 || eval_k == 0) throw ConfigError("k and eval_k must be positive");
      if (requires_two_samples(estimator.id) && k < 2)
        throw ConfigError(estimator.name() + " requires k >= 2");
      if (requires_two_samples(estimator.id) && eval_k < 2)
        throw ConfigError(estimator.name() + " requires eval_k >= 2");
      if (batch_size == 0) throw ConfigError("batch_size must be positive");
      if (steps == 0) throw ConfigError("steps must be positive");
      if (eval_every == 0) throw ConfigError("eval_every must be positive");
      if (data.source != "synthetic" && data.source != "mnist")
        throw ConfigError("data.source must be 'synthetic' or 'mnist'");
      if (data.source == "synthetic" && data.n == 0) throw ConfigError("data.n must be positive");
      if (!(data.train_fraction > 0.0 && data.valid_fraction > 0.0 && data.test_fraction > 0.0) ||
          data.train_fraction + data.valid_fraction + data.test_fraction > 1.0 + 1e-12)
        throw ConfigError("data fractions must be positive and sum to at most 1");
      if (data.source == "mnist" && (data.train_images.empty() || data.test_images.empty()))
        throw ConfigError("mnist data needs data.train_images and data.test_images");
      break;
  }
}

ExperimentConfig parse_config(std::string_view text, std::optional<Experiment> fallback) {
  json root;
  try {
    root = json::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  Reader r(root, "");

  Experiment exp;
  if (const json* v = r.get("experiment")) {
    if (!v->is_string()) throw ConfigError("config key 'experiment' must be a string");
    exp = parse_experiment(v->get<std::string>());
    if (fallback && *fallback != exp)
      throw ConfigError("config is for experiment '" + std::string(experiment_name(exp)) +
                        "', not '" + std::string(experiment_name(*fallback)) + "'");
  } else if (fallback) {
    exp = *fallback;
  } else {
    throw ConfigError("config key 'experiment' is required");
  }

  ExperimentConfig c = default_config(exp);
  r.u64("seed", c.seed);
  r.string("output", c.output);
  r.string("code_version", c.code_version);

  if (auto t = r.child("toy")) {
    t->size("dim", c.toy.dim);
    t->number("q_variance", c.toy.q_variance);
    t->boolean("tie_bias_to_theta", c.toy.tie_bias_to_theta);
    t->number("perturb_sigma", c.perturb_sigma);
    t->finish();
  }
  if (auto v = r.child("vae")) {
    v->size("latent", c.vae.latent);
    v->size("hidden", c.vae.hidden);
    v->size("obs", c.vae.obs);
    v->finish();
  }

  const json* alpha = r.get("alpha");
  bool alpha_used = false;
  if (const json* v = r.get("estimators")) {
    if (!v->is_array()) throw ConfigError("config key 'estimators' must be an array of names");
    c.estimators.clear();
    for (const json& e : *v) {
      if (!e.is_string()) throw ConfigError("config key 'estimators' must be an array of names");
      c.estimators.push_back(parse_estimator(e.get<std::string>(), alpha, false));
      alpha_used |= c.estimators.back().id == EstimatorId::kDregAlpha;
    }
  }
  if (const json* v = r.get("estimator")) {
    if (!v->is_string()) throw ConfigError("config key 'estimator' must be a string");
    c.estimator = parse_estimator(v->get<std::string>(), alpha, true);
    alpha_used = true;
  }
  if (alpha && !alpha->is_null() && !alpha_used)
    throw ConfigError("config key 'alpha' given without a DReG estimator");

  if (const json* v = r.get("k_grid")) {
    if (!v->is_array()) throw ConfigError("config key 'k_grid' must be an array");
    c.k_grid.clear();
    for (const json& e : *v) c.k_grid.push_back(r.to_size(e, "k_grid"));
  }
  bool eval_k_set = false;
  r.size("k", c.k);
  if (r.get("eval_k")) eval_k_set = true;
  r.size("eval_k", c.eval_k);
  if (!eval_k_set) c.eval_k = c.k;

  r.size("trials", c.trials);
  r.size("samples", c.samples);
  std::string ref = reference_name(c.reference);
  r.string("reference", ref);
  if (ref == "exact") c.reference = Reference::kExact;
  else if (ref == "monte-carlo") c.reference = Reference::kMonteCarlo;
  else throw ConfigError("config key 'reference' must be 'exact' or 'monte-carlo'");
  r.size("reference_samples", c.reference_samples);
  r.number("p_threshold", c.p_threshold);

  if (auto o = r.child("optimizer")) {
    o->number("learning_rate", c.optimizer.learning_rate);
    o->number("beta1", c.optimizer.beta1);
    o->number("beta2", c.optimizer.beta2);
    o->number("epsilon", c.optimizer.epsilon);
    o->finish();
  }
  r.size("batch_size", c.batch_size);
  r.size("steps", c.steps);
  r.size("epochs", c.epochs);
  r.size("eval_every", c.eval_every);
  r.size("eval_points", c.eval_points);
  r.number("ema_decay", c.ema_decay);

  if (auto d = r.child("data")) {
    d->string("source", c.data.source);
    d->size("n", c.data.n);
    d->number("train_fraction", c.data.train_fraction);
    d->number("valid_fraction", c.data.valid_fraction);
    d->number("test_fraction", c.data.test_fraction);
    d->string("train_images", c.data.train_images);
    d->string("test_images", c.data.test_images);
    d->size("mnist_valid", c.data.mnist_valid);
    d->finish();
  }
  r.finish();
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path, std::optional<Experiment> fallback) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), fallback);
}

std::string manifest_text(const ExperimentConfig& c) {
  ordered_json m;
  m["experiment"] = experiment_name(c.experiment);
  m["code_version"] = kCodeVersion;
  m["seed"] = c.seed;
  m["output"] = c.output;
  m["toy"] = {{"dim", c.toy.dim},
              {"q_variance", c.toy.q_variance},
              {"tie_bias_to_theta", c.toy.tie_bias_to_theta},
              {"perturb_sigma", c.perturb_sigma}};
  m["vae"] = {{"latent", c.vae.latent}, {"hidden", c.vae.hidden}, {"obs", c.vae.obs}};
  ordered_json names = ordered_json::array();
  for (const auto& s : c.estimators) names.push_back(s.name());
  m["estimators"] = names;
  m["estimator"] = c.estimator.name();
  m["alpha"] = c.estimator.alpha ? ordered_json(*c.estimator.alpha) : ordered_json(nullptr);
  m["k_grid"] = c.k_grid;
  m["k"] = c.k;
  m["eval_k"] = c.eval_k;
  m["trials"] = c.trials;
  m["samples"] = c.samples;
  m["reference"] = reference_name(c.reference);
  m["reference_samples"] = c.reference_samples;
  m["p_threshold"] = c.p_threshold;
  m["optimizer"] = {{"learning_rate", c.optimizer.learning_rate},
                    {"beta1", c.optimizer.beta1},
                    {"beta2", c.optimizer.beta2},
                    {"epsilon", c.optimizer.epsilon}};
  m["batch_size"] = c.batch_size;
  m["steps"] = c.steps;
  m["epochs"] = c.epochs;
  m["eval_every"] = c.eval_every;
  m["eval_points"] = c.eval_points;
  m["ema_decay"] = c.ema_decay;
  m["data"] = {{"source", c.data.source},
               {"n", c.data.n},
               {"train_fraction", c.data.train_fraction},
               {"valid_fraction", c.data.valid_fraction},
               {"test_fraction", c.data.test_fraction},
               {"train_images", c.data.train_images},
               {"test_images", c.data.test_images},
               {"mnist_valid", c.data.mnist_valid}};
  return m.dump(2) + "\n";
}

}  // namespace dreg
