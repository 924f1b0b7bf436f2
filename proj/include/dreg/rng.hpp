#pragma once

// Counter-based random streams. Every draw is a pure function of
// (seed, stream, index), so any entry can be regenerated on its own and
// parallel consumers never share state.

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace dreg {

/// Philox4x32 with 10 rounds (Salmon et al., SC'11).
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

/// Stream identifiers are namespaced by a tag in the top 16 bits so that
/// independent consumers of one seed never collide.
enum class StreamTag : std::uint16_t {
  kNoise = 1,
  kTrialParams = 2,
  kTrialData = 3,
  kPerturb = 4,
  kInit = 5,
  kBinarize = 6,
  kSynthetic = 7,
  kShuffle = 8,
  kBatch = 9,
  kEval = 10,
  kTest = 100,
};

constexpr std::uint64_t stream_id(StreamTag tag, std::uint64_t index) {
  return (static_cast<std::uint64_t>(tag) << 48) | (index & 0xFFFFFFFFFFFFull);
}

class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {}

  /// Uniform in [0, 1) with 53 random bits.
  double uniform(std::uint64_t index) const;
  /// Standard normal via Box-Muller on one Philox block.
  double normal(std::uint64_t index) const;
  std::uint64_t bits(std::uint64_t index) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

 private:
  std::array<std::uint32_t, 4> block(std::uint64_t index) const;

  std::uint64_t seed_;
  std::uint64_t stream_;
};

/// K x d matrix of i.i.d. N(0,1) draws, row-major, with its lineage.
struct NoiseBatch {
  std::size_t k = 0;
  std::size_t dim = 0;
  std::vector<double> eps;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
  std::uint64_t offset = 0;  // index of the first draw within the stream

  static NoiseBatch draw(std::size_t k, std::size_t dim, std::uint64_t seed,
                         std::uint64_t stream, std::uint64_t offset = 0);

  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(eps).subspan(i * dim, dim);
  }
};

/// Derives an independent seed for a sub-experiment (trial, run, worker).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
  return CounterRng(seed, 0xD5EEDull << 40).bits(salt);
}

}  // namespace dreg
