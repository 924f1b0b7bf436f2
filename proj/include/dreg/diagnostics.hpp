#pragma once

// Measurement protocol for gradient estimators: per-coordinate moments,
// SNR, bias against a reference mean, paired t-tests, log-log slope fits
// and an EMA covariance-trace tracker for training runs.

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "dreg/estimators.hpp"
#include "dreg/models.hpp"

namespace dreg {

/// Running per-coordinate mean and sum of squared deviations. Merge is the
/// pairwise (Chan et al.) update, so folds over disjoint chunks combine in a
/// fixed order to a deterministic result.
struct Moments {
  std::size_t n = 0;
  std::vector<double> mean;
  std::vector<double> m2;

  Moments() = default;
  explicit Moments(std::size_t dim) : mean(dim, 0.0), m2(dim, 0.0) {}

  std::size_t dim() const { return mean.size(); }
  void add(std::span<const double> x);
  void merge(const Moments& other);
  /// Unbiased sample variance per coordinate; requires n >= 2.
  std::vector<double> variance() const;
};

struct EstimatorStats {
  std::optional<EstimatorSpec> estimator;
  std::size_t k = 0;
  std::size_t n = 0;
  std::vector<double> mean;
  std::vector<double> variance;
  std::vector<double> bias2;
  std::vector<double> snr;
  /// False where the variance is zero and the SNR is undefined (snr holds
  /// +inf, or 0 when the mean is also zero).
  std::vector<bool> snr_defined;
};

/// Stats of an n x d row-major sample against a reference mean.
EstimatorStats estimator_stats(std::span<const double> samples, std::size_t dim,
                               std::span<const double> reference_mean);
EstimatorStats estimator_stats(const Moments& m, std::span<const double> reference_mean);

/// Same, but the SNR numerator is |signal_j| instead of the sample mean.
/// Used when the estimator's expectation is known exactly.
EstimatorStats estimator_stats_with_signal(const Moments& m, std::span<const double> reference_mean,
                                           std::span<const double> signal);

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  std::size_t n = 0;
  std::size_t coordinate = 0;
  bool degenerate = false;  // differences are zero up to rounding, or constant
  double mean_diff = 0.0;
  double se = 0.0;
};

/// Paired samples whose differences all stay below this fraction of the
/// largest sample magnitude are reported as identical (t = 0, p = 1).
inline constexpr double kRoundoffTolerance = 1e-10;

/// Two-sided paired t-test on a - b with n - 1 degrees of freedom.
TTestResult paired_t_test(std::span<const double> a, std::span<const double> b,
                          std::size_t coordinate = 0);
/// Paired test on coordinate j of two n x d row-major matrices.
TTestResult paired_t_test_column(std::span<const double> a, std::span<const double> b,
                                 std::size_t dim, std::size_t coordinate);

/// Two-sided tail probability P(|T| >= |t|) for Student's t.
double student_t_two_sided_p(double t, double dof);

/// Kolmogorov-Smirnov distance between a sample and Uniform(0, 1), and the
/// asymptotic tail probability of that distance.
double ks_uniform_statistic(std::span<const double> sample);
double ks_asymptotic_p(double statistic, std::size_t n);

struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  double stderr_slope = 0.0;
};

/// Least-squares slope of log(statistic) against log(K).
SlopeFit loglog_slope(std::span<const std::pair<double, double>> points);

/// EMA of first and second moments per coordinate with bias correction.
class VarianceTraceEma {
 public:
  VarianceTraceEma(std::size_t dim, double decay);

  void update(std::span<const double> g);
  /// mean_j (E[g^2]_j - E[g]_j^2) using the corrected averages; 0 before
  /// the first update.
  double value() const;
  std::size_t steps() const { return steps_; }
  /// 1 - decay^t, the factor the raw averages are divided by.
  double correction() const;

 private:
  double decay_;
  std::size_t steps_ = 0;
  double decay_pow_ = 1.0;
  std::vector<double> m1_;
  std::vector<double> m2_;
};

struct ReferenceMean {
  std::vector<double> mean;
  std::vector<double> stderr_mean;
  std::size_t n = 0;
};

/// Monte Carlo estimate of E[standard IWAE phi-gradient] from n_ref
/// independent K-sample batches drawn from stream `stream` of `seed`.
ReferenceMean reference_mean(const Model& model, const ParamVector& params,
                             std::span<const double> x, std::size_t k, std::size_t n_ref,
                             std::uint64_t seed, std::uint64_t stream);

/// E[IWAE_K] phi-gradient of the toy model computed by quadrature. The
/// expectation of the normalized-weight sum is written as
/// K * int_0^inf E[w f e^{-t w}] E[e^{-t w}]^{K-1} dt, with the inner
/// expectations reduced to the two coordinates of the noise that matter
/// (along and orthogonal to the offset from the posterior mean).
std::vector<double> toy_expected_iwae_phi_grad(const ToyModel& m, const ParamVector& params,
                                               std::span<const double> x, std::size_t k);

/// The scalar factor h(K) with grad_mu E[IWAE_K] = -2 h(K) * delta/|delta|.
double toy_expected_gradient_factor(double delta_norm, double q_variance, std::size_t dim,
                                    std::size_t k);

}  // namespace dreg
