#include "optlab/noise.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <thread>

#include "optlab/error.hpp"

namespace optlab {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void require_eval(Mode mode) {
  if (mode != Mode::eval)
    throw Error(ErrorCode::InvalidArgument, "gradient noise is measured with dropout off (eval mode)");
}

std::size_t kept_for(const Dataset& data, std::size_t micro_batch) {
  return trim_for_even_division(data.n_samples, micro_batch ? micro_batch : data.n_samples, true);
}

std::vector<double> batch_gradient(const ModelSpec& spec, ParamVector& params, const Batch& batch) {
  RngStream unused(0, StreamId::dropout);
  return loss_and_gradient(spec, params, batch, Mode::eval, unused).gradient;
}

}  // namespace

std::vector<double> full_gradient(const ModelSpec& spec, const ParamVector& params, const Dataset& data,
                                  std::size_t micro_batch, Mode mode) {
  require_eval(mode);
  const std::size_t m = micro_batch ? micro_batch : data.n_samples;
  const std::size_t kept = kept_for(data, m);
  ParamVector local = params;
  std::vector<double> total(local.total_dim(), 0.0);
  const std::size_t parts = kept / m;
  for (std::size_t part = 0; part < parts; ++part) {
    const auto g = batch_gradient(spec, local, data.gather_range(part * m, m));
    for (std::size_t i = 0; i < total.size(); ++i) total[i] += g[i];
  }
  for (double& v : total) v /= static_cast<double>(parts);
  return total;
}

NoiseSample::NoiseSample(std::vector<double> values, std::size_t batch_size)
    : values_(std::move(values)), batch_size_(batch_size) {
  refresh();
}

void NoiseSample::set_values(std::vector<double> values) {
  values_ = std::move(values);
  refresh();
}

void NoiseSample::refresh() {
  mu_ = sigma_ = kurtosis_ = tail_ratio_ = kNaN;
  if (values_.size() >= 2) {
    const GaussianFit fit = fit_gaussian(values_);
    mu_ = fit.mu;
    sigma_ = fit.sigma;
  }
  try {
    const TailStats t = tail_stats(values_);
    kurtosis_ = t.excess_kurtosis;
    tail_ratio_ = t.tail_ratio_99_90;
  } catch (const Error&) {
  }
}

NoiseSample grad_error_samples(const ModelSpec& spec, const ParamVector& params, const Dataset& data,
                               const NoiseOptions& options, const RngStream& rng) {
  const auto full = full_gradient(spec, params, data, options.micro_batch);
  return grad_error_samples(spec, params, data, full, options, rng);
}

NoiseSample grad_error_samples(const ModelSpec& spec, const ParamVector& params, const Dataset& data,
                               std::span<const double> full_grad, const NoiseOptions& options,
                               const RngStream& rng) {
  if (options.n_draws < 30)
    throw Error(ErrorCode::InsufficientSamples, "at least 30 draws are needed, got " +
                                                    std::to_string(options.n_draws));
  const std::size_t kept = kept_for(data, options.micro_batch);
  if (options.batch_size == 0 || options.batch_size > kept)
    throw Error(ErrorCode::BatchTooLarge, "batch of " + std::to_string(options.batch_size) +
                                              " from " + std::to_string(kept) + " samples");
  if (full_grad.size() != params.total_dim())
    throw Error(ErrorCode::ShapeMismatch, "full gradient does not match the parameters");

  std::vector<double> norms(options.n_draws);
  auto worker = [&](std::size_t first, std::size_t stride) {
    ParamVector local = params;
    std::vector<std::size_t> pool(kept);
    for (std::size_t draw = first; draw < options.n_draws; draw += stride) {
      RngStream r = rng.derive(draw);
      std::iota(pool.begin(), pool.end(), std::size_t{0});
      for (std::size_t i = 0; i < options.batch_size; ++i)
        std::swap(pool[i], pool[i + r.uniform_index(kept - i)]);
      const std::span<const std::size_t> picked(pool.data(), options.batch_size);
      const auto g = batch_gradient(spec, local, data.gather(picked));
      double sq = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) sq += (g[i] - full_grad[i]) * (g[i] - full_grad[i]);
      norms[draw] = std::sqrt(sq);
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(options.threads, 1, options.n_draws);
  if (threads == 1) {
    worker(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker, t, threads);
    for (auto& th : pool) th.join();
  }
  return NoiseSample(std::move(norms), options.batch_size);
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw Error(ErrorCode::InvalidArgument, "quantile needs p in (0,1)");
  // 1 - p is exact for p >= 0.5, so the upper half reuses the lower tail.
  if (p > 0.5) return -normal_quantile(1.0 - p);

  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01, -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  double x = 0.0;
  if (p < 0.02425) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  }
  const double e = normal_cdf(x) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

GaussianFit fit_gaussian(std::span<const double> values) {
  if (values.size() < 2) throw Error(ErrorCode::InsufficientSamples, "a Gaussian fit needs two values");
  const double n = static_cast<double>(values.size());
  const double mu = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mu) * (v - mu);
  return {mu, std::sqrt(ss / (n - 1.0))};
}

std::vector<QqPoint> qq_points(std::span<const double> values, GaussianFit reference) {
  if (values.size() < 2) throw Error(ErrorCode::InsufficientSamples, "a QQ plot needs two values");
  if (!(reference.sigma > 0.0) || !std::isfinite(reference.sigma))
    throw Error(ErrorCode::DegenerateFit, "reference Gaussian has zero spread");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  std::vector<QqPoint> out(sorted.size());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const double p = (static_cast<double>(i) + 0.5) / n;
    out[i] = {p, reference.mu + reference.sigma * normal_quantile(p), sorted[i]};
  }
  return out;
}

double qq_max_deviation(std::span<const QqPoint> points, double lo, double hi) {
  double worst = 0.0;
  for (const auto& pt : points)
    if (pt.position >= lo && pt.position <= hi) worst = std::max(worst, std::abs(pt.empirical - pt.theoretical));
  return worst;
}

double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw Error(ErrorCode::InsufficientSamples, "quantile of no values");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

TailStats tail_stats(std::span<const double> values) {
  if (values.size() < 100)
    throw Error(ErrorCode::InsufficientSamples, "tail statistics need 100 values, got " +
                                                    std::to_string(values.size()));
  const double n = static_cast<double>(values.size());
  const double mu = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double m2 = 0.0;
  double m4 = 0.0;
  for (double v : values) {
    const double d2 = (v - mu) * (v - mu);
    m2 += d2;
    m4 += d2 * d2;
  }
  m2 /= n;
  m4 /= n;
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double median = quantile_sorted(sorted, 0.5);
  const double q90 = quantile_sorted(sorted, 0.90);
  const double q99 = quantile_sorted(sorted, 0.99);
  if (!(m2 > 0.0) || q90 == median)
    throw Error(ErrorCode::InsufficientSamples, "values have no spread; kurtosis is undefined");
  return {m4 / (m2 * m2) - 3.0, (q99 - median) / (q90 - median)};
}

double student_t(RngStream& rng, unsigned df) {
  if (df == 0) throw Error(ErrorCode::InvalidArgument, "Student-t needs df >= 1");
  double chi2 = 0.0;
  for (unsigned i = 0; i < df; ++i) {
    const double z = rng.normal();
    chi2 += z * z;
  }
  return rng.normal() / std::sqrt(chi2 / df);
}

}  // namespace optlab
