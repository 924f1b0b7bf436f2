#pragma once

// Image datasets for the generative-model experiments: IDX (MNIST
// container) loading, per-epoch dynamic binarization, splits, and a
// synthetic substitute sampled from a random VAE decoder.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dreg {

enum class Split { kTrain, kValid, kTest, kAll };

struct Dataset {
  std::size_t n = 0;
  std::size_t obs_dim = 0;
  std::vector<double> images;  // n x obs_dim, entries in [0, 1]
  Split split = Split::kAll;
  std::string source;

  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(images).subspan(i * obs_dim, obs_dim);
  }
  /// Throws unless every pixel lies in [0, 1] and the shape is consistent.
  void validate() const;
};

/// IDX3 image file (magic 0x00000803): pixels scaled by 1/255.
Dataset load_idx(const std::filesystem::path& path);
/// IDX1 label file (magic 0x00000801).
std::vector<std::uint8_t> load_idx_labels(const std::filesystem::path& path);

/// Writes an IDX3 file with the given leading count and trailing image
/// dimensions; payload bytes are round(pixel * 255).
void write_idx(const std::filesystem::path& path, const Dataset& d,
               std::span<const std::uint32_t> image_dims);
void write_idx_labels(const std::filesystem::path& path, std::span<const std::uint8_t> labels);

/// Independent Bernoulli(pixel) draws keyed by (seed, epoch, image, pixel).
std::vector<double> dynamic_binarize(const Dataset& d, std::uint64_t seed, std::uint64_t epoch);
/// One image's binarization under the same keying.
std::vector<double> binarize_row(const Dataset& d, std::size_t image, std::uint64_t seed,
                                 std::uint64_t epoch);

/// Bernoulli means of a randomly initialized MLP decoder at z ~ N(0, I).
Dataset synthetic_dataset(std::size_t n, std::size_t obs_dim, std::size_t latent_dim,
                          std::uint64_t seed, std::size_t hidden_dim = 20);

struct Splits {
  Dataset train;
  Dataset valid;
  Dataset test;
};

/// Fractional split. With shuffle_seed the rows are permuted first;
/// otherwise contiguous ranges in the original order. Sizes are
/// floor(fraction * n) for valid and test, the remainder of the train
/// fraction for train.
Splits split(const Dataset& d, double train_fraction, double valid_fraction, double test_fraction,
             std::optional<std::uint64_t> shuffle_seed = std::nullopt);

/// Conventional MNIST split: the last `valid` of the training file become
/// validation, the test file is test.
Splits mnist_standard_split(const Dataset& train_file, const Dataset& test_file,
                            std::size_t valid = 10000);

}  // namespace dreg
