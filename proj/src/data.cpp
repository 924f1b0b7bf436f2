#include "dreg/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <numeric>

#include "dreg/error.hpp"
#include "dreg/rng.hpp"

namespace dreg {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t at) {
  if (at + 4 > b.size()) throw Error("IDX file truncated in header");
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) |
         (std::uint32_t{b[at + 2]} << 8) | std::uint32_t{b[at + 3]};
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                     static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(b, 4);
}

/// Parses magic and dims; returns the payload offset and element count.
std::pair<std::size_t, std::size_t> parse_header(const std::vector<unsigned char>& bytes,
                                                 std::uint32_t magic,
                                                 std::vector<std::uint32_t>& dims) {
  const std::uint32_t got = be32(bytes, 0);
  if (got != magic) throw Error("IDX file has bad magic");
  const std::size_t rank = magic & 0xFF;
  std::size_t count = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    const std::uint32_t d = be32(bytes, 4 + 4 * i);
    dims.push_back(d);
    if (d != 0 && count > std::numeric_limits<std::size_t>::max() / 4 / d)
      throw Error("IDX dimension overflow");
    count *= d;
  }
  const std::size_t offset = 4 + 4 * rank;
  if (bytes.size() < offset + count) throw Error("IDX file truncated");
  return {offset, count};
}

void write_atomically(const std::filesystem::path& path,
                      const std::function<void(std::ofstream&)>& body) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    body(out);
    if (!out) throw Error("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

Dataset take_rows(const Dataset& d, std::span<const std::size_t> rows, Split which) {
  Dataset out;
  out.n = rows.size();
  out.obs_dim = d.obs_dim;
  out.split = which;
  out.source = d.source;
  out.images.reserve(rows.size() * d.obs_dim);
  for (std::size_t r : rows) {
    const auto src = d.row(r);
    out.images.insert(out.images.end(), src.begin(), src.end());
  }
  return out;
}

}  // namespace

void Dataset::validate() const {
  if (n == 0 || obs_dim == 0) throw Error("dataset is empty");
  if (images.size() != n * obs_dim) throw Error("dataset shape mismatch");
  for (double v : images)
    if (!(v >= 0.0 && v <= 1.0)) throw Error("dataset pixel outside [0, 1]");
}

Dataset load_idx(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  std::vector<std::uint32_t> dims;
  const auto [offset, count] = parse_header(bytes, kImageMagic, dims);
  Dataset d;
  d.n = dims[0];
  d.obs_dim = static_cast<std::size_t>(dims[1]) * dims[2];
  d.source = "idx:" + path.filename().string();
  d.images.resize(count);
  for (std::size_t i = 0; i < count; ++i) d.images[i] = bytes[offset + i] / 255.0;
  return d;
}

std::vector<std::uint8_t> load_idx_labels(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  std::vector<std::uint32_t> dims;
  const auto [offset, count] = parse_header(bytes, kLabelMagic, dims);
  return {bytes.begin() + static_cast<std::ptrdiff_t>(offset),
          bytes.begin() + static_cast<std::ptrdiff_t>(offset + count)};
}

void write_idx(const std::filesystem::path& path, const Dataset& d,
               std::span<const std::uint32_t> image_dims) {
  if (image_dims.size() != 2) throw Error("write_idx: images need two trailing dimensions");
  if (static_cast<std::size_t>(image_dims[0]) * image_dims[1] != d.obs_dim)
    throw Error("write_idx: image dimensions do not match the dataset");
  write_atomically(path, [&](std::ofstream& out) {
    put_be32(out, kImageMagic);
    put_be32(out, static_cast<std::uint32_t>(d.n));
    put_be32(out, image_dims[0]);
    put_be32(out, image_dims[1]);
    std::vector<char> payload(d.images.size());
    for (std::size_t i = 0; i < payload.size(); ++i)
      payload[i] = static_cast<char>(static_cast<unsigned char>(std::lround(d.images[i] * 255.0)));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  });
}

void write_idx_labels(const std::filesystem::path& path, std::span<const std::uint8_t> labels) {
  write_atomically(path, [&](std::ofstream& out) {
    put_be32(out, kLabelMagic);
    put_be32(out, static_cast<std::uint32_t>(labels.size()));
    out.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
  });
}

std::vector<double> binarize_row(const Dataset& d, std::size_t image, std::uint64_t seed,
                                 std::uint64_t epoch) {
  // One stream per epoch; draws indexed by flat pixel position, so the
  // result does not depend on which rows are requested or in what order.
  const CounterRng rng(seed, stream_id(StreamTag::kBinarize, epoch));
  const auto src = d.row(image);
  std::vector<double> out(d.obs_dim);
  const std::uint64_t base = static_cast<std::uint64_t>(image) * d.obs_dim;
  for (std::size_t j = 0; j < d.obs_dim; ++j) out[j] = rng.uniform(base + j) < src[j] ? 1.0 : 0.0;
  return out;
}

std::vector<double> dynamic_binarize(const Dataset& d, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<double> out;
  out.reserve(d.images.size());
  for (std::size_t i = 0; i < d.n; ++i) {
    const auto r = binarize_row(d, i, seed, epoch);
    out.insert(out.end(), r.begin(), r.end());
  }
  return out;
}

Dataset synthetic_dataset(std::size_t n, std::size_t obs_dim, std::size_t latent_dim,
                          std::uint64_t seed, std::size_t hidden_dim) {
  if (n == 0 || obs_dim == 0 || latent_dim == 0 || hidden_dim == 0)
    throw Error("synthetic_dataset: sizes must be positive");
  // Decoder z -> tanh -> tanh -> sigmoid with weights scaled so pixel
  // means spread toward 0 and 1 instead of clustering at one half.
  const CounterRng wr(seed, stream_id(StreamTag::kSynthetic, 0));
  std::uint64_t ctr = 0;
  auto layer = [&](std::size_t out, std::size_t in, double gain) {
    std::vector<double> w(out * in);
    const double sd = gain / std::sqrt(static_cast<double>(in));
    for (auto& v : w) v = sd * wr.normal(ctr++);
    return w;
  };
  const auto w1 = layer(hidden_dim, latent_dim, 2.0);
  const auto w2 = layer(hidden_dim, hidden_dim, 2.0);
  const auto w3 = layer(obs_dim, hidden_dim, 4.0);
  std::vector<double> b3(obs_dim);
  for (auto& v : b3) v = wr.normal(ctr++);

  auto apply = [](const std::vector<double>& w, std::span<const double> in, std::size_t out) {
    std::vector<double> r(out, 0.0);
    for (std::size_t i = 0; i < out; ++i)
      for (std::size_t j = 0; j < in.size(); ++j) r[i] += w[i * in.size() + j] * in[j];
    return r;
  };

  Dataset d;
  d.n = n;
  d.obs_dim = obs_dim;
  d.source = "synthetic:" + std::to_string(seed);
  d.images.reserve(n * obs_dim);
  const CounterRng zr(seed, stream_id(StreamTag::kSynthetic, 1));
  std::vector<double> z(latent_dim);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < latent_dim; ++j) z[j] = zr.normal(i * latent_dim + j);
    auto h1 = apply(w1, z, hidden_dim);
    for (auto& v : h1) v = std::tanh(v);
    auto h2 = apply(w2, h1, hidden_dim);
    for (auto& v : h2) v = std::tanh(v);
    const auto logits = apply(w3, h2, obs_dim);
    for (std::size_t j = 0; j < obs_dim; ++j)
      d.images.push_back(1.0 / (1.0 + std::exp(-(logits[j] + b3[j]))));
  }
  return d;
}

Splits split(const Dataset& d, double train_fraction, double valid_fraction, double test_fraction,
             std::optional<std::uint64_t> shuffle_seed) {
  if (!(train_fraction > 0.0 && valid_fraction > 0.0 && test_fraction > 0.0))
    throw Error("split: fractions must be positive");
  const double total = train_fraction + valid_fraction + test_fraction;
  if (total > 1.0 + 1e-12) throw Error("split: fractions sum to more than 1");
  const double nd = static_cast<double>(d.n);
  auto count = [&](double f) { return static_cast<std::size_t>(std::floor(f * nd + 1e-9)); };
  const std::size_t n_valid = count(valid_fraction);
  const std::size_t n_test = count(test_fraction);
  const std::size_t n_train =
      std::abs(total - 1.0) <= 1e-12 ? d.n - n_valid - n_test : count(train_fraction);
  if (n_train == 0 || n_valid == 0 || n_test == 0) throw Error("split: empty split");

  std::vector<std::size_t> order(d.n);
  std::iota(order.begin(), order.end(), 0);
  if (shuffle_seed) {
    // Fisher-Yates with counter-based draws.
    const CounterRng rng(*shuffle_seed, stream_id(StreamTag::kShuffle, 0));
    for (std::size_t i = d.n; i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(rng.bits(i) % i);
      std::swap(order[i - 1], order[j]);
    }
  }
  const std::span<const std::size_t> all(order);
  Splits s;
  s.train = take_rows(d, all.subspan(0, n_train), Split::kTrain);
  s.valid = take_rows(d, all.subspan(n_train, n_valid), Split::kValid);
  s.test = take_rows(d, all.subspan(n_train + n_valid, n_test), Split::kTest);
  return s;
}

Splits mnist_standard_split(const Dataset& train_file, const Dataset& test_file, std::size_t valid) {
  if (valid == 0 || valid >= train_file.n) throw Error("split: empty split");
  std::vector<std::size_t> tr(train_file.n - valid), va(valid), te(test_file.n);
  std::iota(tr.begin(), tr.end(), 0);
  std::iota(va.begin(), va.end(), train_file.n - valid);
  std::iota(te.begin(), te.end(), 0);
  if (te.empty()) throw Error("split: empty split");
  Splits s;
  s.train = take_rows(train_file, tr, Split::kTrain);
  s.valid = take_rows(train_file, va, Split::kValid);
  s.test = take_rows(test_file, te, Split::kTest);
  return s;
}

}  // namespace dreg
