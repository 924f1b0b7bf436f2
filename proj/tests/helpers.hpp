#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "dreg/models.hpp"
#include "dreg/rng.hpp"

namespace dreg::testing {

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return a.size() == b.size() ? m : INFINITY;
}

inline double max_rel_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]) / std::max({1.0, std::abs(a[i]), std::abs(b[i])}));
  return a.size() == b.size() ? m : INFINITY;
}

inline std::vector<double> negated(std::vector<double> v) {
  for (auto& e : v) e = -e;
  return v;
}

/// A toy trial pushed well away from the optimum so every gradient term is
/// visibly nonzero.
inline ToyTrial rough_trial(const ToyModel& m, std::uint64_t trial = 0) {
  return make_toy_trial(m, 0.3, 2024, trial);
}

inline NoiseBatch noise(std::size_t k, std::size_t d, std::uint64_t index = 0) {
  return NoiseBatch::draw(k, d, 77, stream_id(StreamTag::kTest, index));
}

}  // namespace dreg::testing
