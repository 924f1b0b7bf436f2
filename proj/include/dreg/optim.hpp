#pragma once

#include <span>
#include <vector>

namespace dreg {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam (Kingma & Ba) taking ascent directions: params += lr * m^ / (sqrt(v^) + eps).
class Adam {
 public:
  Adam(std::size_t n, AdamConfig cfg = {});

  /// Applies one step to the coordinates listed in `indices` (all when empty).
  void step(std::span<double> params, std::span<const double> ascent,
            std::span<const std::size_t> indices = {});

  std::size_t steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::size_t t_ = 0;
  std::vector<double> m_;
  std::vector<double> v_;
  std::vector<std::size_t> counts_;
};

}  // namespace dreg
