#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace dreg {

/// The K log importance weights log w_i = log p(x, z_i) - log q(z_i | x),
/// z_i = z(eps_i, params), together with the per-sample partials every
/// estimator is assembled from. Matrices are row-major with one row per
/// sample; parameter-indexed rows follow the model's ParamLayout.
struct LogWeightBatch {
  std::size_t k = 0;
  std::size_t latent_dim = 0;
  std::size_t n_params = 0;

  std::vector<double> log_w;     // K
  std::vector<double> dlogw_dz;  // K x latent_dim
  std::vector<double> path;      // K x P: (d log w_i / d z_i)(d z_i / d params)
  std::vector<double> dlogp;     // K x P: d log p(x, z_i) / d params, z_i held fixed
  std::vector<double> dlogq;     // K x P: d log q(z_i | x) / d params, z_i held fixed

  // Lineage of the noise rows used.
  std::uint64_t noise_seed = 0;
  std::uint64_t noise_stream = 0;
  std::uint64_t noise_offset = 0;

  void resize(std::size_t k_, std::size_t latent, std::size_t params);

  std::span<const double> path_row(std::size_t i) const { return row(path, i); }
  std::span<const double> dlogp_row(std::size_t i) const { return row(dlogp, i); }
  std::span<const double> dlogq_row(std::size_t i) const { return row(dlogq, i); }
  std::span<const double> dlogw_dz_row(std::size_t i) const {
    return std::span<const double>(dlogw_dz).subspan(i * latent_dim, latent_dim);
  }

 private:
  std::span<const double> row(const std::vector<double>& m, std::size_t i) const {
    return std::span<const double>(m).subspan(i * n_params, n_params);
  }
};

}  // namespace dreg
