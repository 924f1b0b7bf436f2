#include "dreg/optim.hpp"

#include <cmath>

#include "dreg/error.hpp"

namespace dreg {

Adam::Adam(std::size_t n, AdamConfig cfg) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0), counts_(n, 0) {
  if (!(cfg.learning_rate > 0.0)) throw ConfigError("Adam: learning rate must be positive");
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0) || !(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0))
    throw ConfigError("Adam: moment decays must lie in [0, 1)");
  if (!(cfg.epsilon > 0.0)) throw ConfigError("Adam: epsilon must be positive");
}

void Adam::step(std::span<double> params, std::span<const double> ascent,
                std::span<const std::size_t> indices) {
  if (params.size() != m_.size() || ascent.size() != m_.size())
    throw Error("Adam: size mismatch");
  ++t_;
  auto update = [&](std::size_t i) {
    // Per-coordinate step counts keep bias correction right when two
    // updates touch disjoint subsets each step.
    const double t = static_cast<double>(++counts_[i]);
    const double g = ascent[i];
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g * g;
    const double mh = m_[i] / (1.0 - std::pow(cfg_.beta1, t));
    const double vh = v_[i] / (1.0 - std::pow(cfg_.beta2, t));
    params[i] += cfg_.learning_rate * mh / (std::sqrt(vh) + cfg_.epsilon);
  };
  if (indices.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) update(i);
  } else {
    for (std::size_t i : indices) update(i);
  }
}

}  // namespace dreg
