#pragma once

#include <memory>
#include <span>
#include <vector>

#include "optlab/config.hpp"
#include "optlab/data.hpp"
#include "optlab/models.hpp"
#include "optlab/rng.hpp"

namespace optlab {

/// A training objective over a fixed training set, seen through flat
/// parameter vectors. Implementations are immutable once built, so one
/// instance can serve concurrent runs.
class Problem {
 public:
  virtual ~Problem() = default;

  virtual std::size_t train_size() const = 0;
  virtual std::size_t dim() const = 0;
  virtual std::vector<double> initial_params(std::uint64_t seed) const = 0;

  /// Mean loss and gradient over the listed training samples.
  virtual LossAndGradient gradient(std::span<const double> x, std::span<const std::size_t> samples,
                                   Mode mode, RngStream& dropout_rng) const = 0;
  /// Eval-mode mean loss over the whole training set.
  virtual double train_loss(std::span<const double> x) const = 0;
  /// Metric on the held-out split, or on the training set when there is none.
  virtual double evaluate(std::span<const double> x, EvalMetric metric) const = 0;
  /// The metric that `automatic` resolves to.
  virtual EvalMetric default_metric() const = 0;
};

/// A model from `models` trained on a Dataset.
class ModelProblem final : public Problem {
 public:
  ModelProblem(ModelSpec spec, Dataset train, Dataset heldout);

  std::size_t train_size() const override { return train_.n_samples; }
  std::size_t dim() const override { return layout_.total_dim(); }
  std::vector<double> initial_params(std::uint64_t seed) const override;
  LossAndGradient gradient(std::span<const double> x, std::span<const std::size_t> samples, Mode mode,
                           RngStream& dropout_rng) const override;
  double train_loss(std::span<const double> x) const override;
  double evaluate(std::span<const double> x, EvalMetric metric) const override;
  EvalMetric default_metric() const override;

  const ModelSpec& spec() const noexcept { return spec_; }
  const Dataset& train() const noexcept { return train_; }
  const Dataset& heldout() const noexcept { return heldout_; }

 private:
  struct Totals {
    double loss = 0.0;
    double accuracy = 0.0;
  };
  Totals totals(std::span<const double> x, const Dataset& data) const;

  ModelSpec spec_;
  Dataset train_;
  Dataset heldout_;
  ParamVector layout_;
};

/// f(x) = mean_i 0.5 * ||x - c_i||^2. The exact minimizer is mean(c).
class QuadraticProblem final : public Problem {
 public:
  QuadraticProblem(std::size_t n, std::size_t dim, double noise, std::uint64_t data_seed);

  std::size_t train_size() const override { return n_; }
  std::size_t dim() const override { return dim_; }
  std::vector<double> initial_params(std::uint64_t seed) const override;
  LossAndGradient gradient(std::span<const double> x, std::span<const std::size_t> samples, Mode mode,
                           RngStream& dropout_rng) const override;
  double train_loss(std::span<const double> x) const override;
  double evaluate(std::span<const double> x, EvalMetric metric) const override;
  EvalMetric default_metric() const override { return EvalMetric::loss; }

 private:
  std::size_t n_;
  std::size_t dim_;
  std::vector<double> centers_;
};

/// Loads data and resolves the model spec (vocabulary size, input and
/// class counts) for a problem description. Throws IoError, InvalidSpec
/// and the data-pipeline errors.
std::shared_ptr<const Problem> make_problem(const ProblemConfig& config);

}  // namespace optlab
