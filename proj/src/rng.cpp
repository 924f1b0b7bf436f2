#include "dreg/rng.hpp"

#include <cmath>
#include <numbers>

namespace dreg {
namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

inline double to_unit(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t v = ((static_cast<std::uint64_t>(hi) << 32) | lo) >> 11;
  return static_cast<double>(v) * 0x1.0p-53;
}

}  // namespace

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> c,
                                        std::array<std::uint32_t, 2> k) {
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kMul0, c[0], hi0, lo0);
    mulhilo(kMul1, c[2], hi1, lo1);
    c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
    k[0] += kWeyl0;
    k[1] += kWeyl1;
  }
  return c;
}

std::array<std::uint32_t, 4> CounterRng::block(std::uint64_t index) const {
  return philox4x32({static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                     static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32)},
                    {static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32)});
}

double CounterRng::uniform(std::uint64_t index) const {
  const auto b = block(index);
  return to_unit(b[0], b[1]);
}

std::uint64_t CounterRng::bits(std::uint64_t index) const {
  const auto b = block(index);
  return (static_cast<std::uint64_t>(b[0]) << 32) | b[1];
}

double CounterRng::normal(std::uint64_t index) const {
  const auto b = block(index);
  // Shift by half an ulp so u1 lies in (0, 1) and log(u1) is finite.
  const double u1 = to_unit(b[0], b[1]) + 0x1.0p-54;
  const double u2 = to_unit(b[2], b[3]);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

NoiseBatch NoiseBatch::draw(std::size_t k, std::size_t dim, std::uint64_t seed,
                            std::uint64_t stream, std::uint64_t offset) {
  NoiseBatch out;
  out.k = k;
  out.dim = dim;
  out.seed = seed;
  out.stream = stream;
  out.offset = offset;
  out.eps.resize(k * dim);
  const CounterRng rng(seed, stream);
  for (std::size_t i = 0; i < out.eps.size(); ++i) out.eps[i] = rng.normal(offset + i);
  return out;
}

}  // namespace dreg
