#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "optlab/data.hpp"
#include "optlab/models.hpp"
#include "optlab/rng.hpp"

namespace optlab {

/// Sample-mean gradient over the dataset, accumulated as the mean of
/// equal-size micro-batch gradients. The tail beyond the last whole
/// micro-batch is trimmed (TrimTooLarge above 0.5%). Only eval mode is
/// accepted: dropout would make the result depend on the partition.
std::vector<double> full_gradient(const ModelSpec& spec, const ParamVector& params, const Dataset& data,
                                  std::size_t micro_batch, Mode mode = Mode::eval);

/// Gradient-error norms with their fitted Gaussian and tail statistics.
class NoiseSample {
 public:
  NoiseSample() = default;
  NoiseSample(std::vector<double> values, std::size_t batch_size);

  const std::vector<double>& values() const noexcept { return values_; }
  void set_values(std::vector<double> values);
  std::size_t batch_size() const noexcept { return batch_size_; }

  double fitted_mu() const noexcept { return mu_; }
  double fitted_sigma() const noexcept { return sigma_; }
  /// NaN when there are fewer than 100 values or they are all equal.
  double excess_kurtosis() const noexcept { return kurtosis_; }
  double tail_ratio_99_90() const noexcept { return tail_ratio_; }

 private:
  void refresh();

  std::vector<double> values_;
  std::size_t batch_size_ = 0;
  double mu_ = 0.0;
  double sigma_ = 0.0;
  double kurtosis_ = 0.0;
  double tail_ratio_ = 0.0;
};

struct NoiseOptions {
  std::size_t batch_size = 16;
  std::size_t n_draws = 1000;
  /// Micro-batch for the full gradient; 0 means the whole dataset at once.
  std::size_t micro_batch = 0;
  std::size_t threads = 1;
};

/// ||g_batch - g_full||_2 for n_draws minibatches drawn without replacement.
/// Draw i uses rng.derive(i), so results do not depend on scheduling.
/// Throws InsufficientSamples (n_draws < 30) and BatchTooLarge.
NoiseSample grad_error_samples(const ModelSpec& spec, const ParamVector& params, const Dataset& data,
                               const NoiseOptions& options, const RngStream& rng);
/// Same, against a precomputed full gradient.
NoiseSample grad_error_samples(const ModelSpec& spec, const ParamVector& params, const Dataset& data,
                               std::span<const double> full_grad, const NoiseOptions& options,
                               const RngStream& rng);

/// Standard normal CDF and quantile. The quantile is Acklam's rational
/// approximation followed by one Halley step against erfc.
double normal_cdf(double x);
double normal_quantile(double p);

struct GaussianFit {
  double mu = 0.0;
  double sigma = 0.0;
};

/// Sample mean and unbiased standard deviation. Needs two values.
GaussianFit fit_gaussian(std::span<const double> values);

struct QqPoint {
  double position = 0.0;  // (i - 0.5) / n
  double theoretical = 0.0;
  double empirical = 0.0;
};

/// Sorted values against mu + sigma * quantile((i - 0.5) / n).
/// Throws InsufficientSamples (< 2 values) and DegenerateFit (sigma <= 0).
std::vector<QqPoint> qq_points(std::span<const double> values, GaussianFit reference);

/// Largest |empirical - theoretical| among points whose plotting position
/// lies in [lo, hi].
double qq_max_deviation(std::span<const QqPoint> points, double lo = 0.0, double hi = 1.0);

struct TailStats {
  double excess_kurtosis = 0.0;
  double tail_ratio_99_90 = 0.0;
};

/// Biased-moment excess kurtosis m4 / m2^2 - 3 and
/// (q99 - median) / (q90 - median) with linearly interpolated quantiles.
/// Throws InsufficientSamples for fewer than 100 values or zero spread.
TailStats tail_stats(std::span<const double> values);

/// Linear-interpolation quantile of sorted data (Hyndman-Fan type 7).
double quantile_sorted(std::span<const double> sorted, double q);

/// Student-t with integer degrees of freedom: Z / sqrt(chi2_df / df).
double student_t(RngStream& rng, unsigned df);

}  // namespace optlab
