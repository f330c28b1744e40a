#include "optlab/optimizers.hpp"

#include <algorithm>
#include <cmath>

#include "optlab/error.hpp"

namespace optlab {

namespace {

void align(std::vector<double>& buffer, std::size_t n, const char* name) {
  if (buffer.empty()) buffer.assign(n, 0.0);
  if (buffer.size() != n)
    throw Error(ErrorCode::ShapeMismatch, std::string(name) + " buffer has " +
                                              std::to_string(buffer.size()) + " entries, expected " +
                                              std::to_string(n));
}

void check_sizes(std::span<double> x, std::span<const double> grad) {
  if (x.size() != grad.size())
    throw Error(ErrorCode::ShapeMismatch, "parameters have " + std::to_string(x.size()) +
                                              " entries, gradient " + std::to_string(grad.size()));
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// 0/0 contributes no movement; that keeps the Adam and RMSprop reductions
// equal to sign descent on zero coordinates.
double ratio(double num, double den) { return num == 0.0 ? 0.0 : num / den; }

}  // namespace

std::vector<double> transform_direction(GdKind kind, std::span<const double> grad) {
  std::vector<double> d(grad.begin(), grad.end());
  switch (kind) {
    case GdKind::gd:
      break;
    case GdKind::normalized_gd: {
      double sq = 0.0;
      for (double g : grad) sq += g * g;
      const double norm = std::sqrt(sq);
      if (norm == 0.0) throw Error(ErrorCode::ZeroGradient, "normalized direction of a zero gradient");
      for (double& v : d) v /= norm;
      break;
    }
    case GdKind::sign_descent:
      for (double& v : d) v = sign(v);
      break;
  }
  return d;
}

void step_gd_variant(GdVariantState& s, std::span<double> x, std::span<const double> grad) {
  check_sizes(x, grad);
  align(s.m, x.size(), "momentum");
  std::vector<double> d;
  try {
    d = transform_direction(s.kind, grad);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::ZeroGradient) throw;
    ++s.zero_gradient_skips;
    d.assign(x.size(), 0.0);
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    s.m[i] = s.beta * s.m[i] + d[i];
    x[i] -= s.alpha * s.m[i];
  }
}

void step_adam(AdamState& s, std::span<double> x, std::span<const double> grad) {
  check_sizes(x, grad);
  align(s.m, x.size(), "first moment");
  align(s.M, x.size(), "second moment");
  ++s.t;
  const double t = static_cast<double>(s.t);
  const double c1 = s.bias_correction ? 1.0 - std::pow(s.beta1, t) : 1.0;
  const double c2 = s.bias_correction ? 1.0 - std::pow(s.beta2, t) : 1.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double g = grad[i];
    s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * g;
    s.M[i] = s.beta2 * s.M[i] + (1.0 - s.beta2) * g * g;
    const double m_hat = s.m[i] / c1;
    const double M_hat = s.M[i] / c2;
    const double den = s.epsilon_inside_sqrt ? std::sqrt(M_hat + s.epsilon) : std::sqrt(M_hat) + s.epsilon;
    x[i] -= s.alpha * ratio(m_hat, den);
  }
}

void step_rmsprop(RmspropState& s, std::span<double> x, std::span<const double> grad) {
  check_sizes(x, grad);
  align(s.v, x.size(), "second moment");
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double g = grad[i];
    s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * g * g;
    x[i] -= s.alpha * ratio(g, std::sqrt(s.v[i]) + s.epsilon);
  }
}

const std::vector<std::string>& optimizer_names() {
  static const std::vector<std::string> names{"sgd+m",  "sgd-m",  "norm-gd+m", "norm-gd-m", "sign+m",
                                              "sign-m", "rmsprop", "adam+m",   "adam-m"};
  return names;
}

bool is_optimizer_name(std::string_view name) {
  const auto& names = optimizer_names();
  return std::find(names.begin(), names.end(), name) != names.end();
}

bool has_momentum_flag(std::string_view name) { return name.ends_with("+m"); }

double momentum_of(std::string_view name) { return has_momentum_flag(name) ? kMomentum : 0.0; }

OptimizerState make_optimizer(std::string_view name, double alpha, const OptimizerHyper& hyper) {
  if (!is_optimizer_name(name))
    throw Error(ErrorCode::InvalidArgument, "unknown optimizer '" + std::string(name) + "'");
  if (!std::isfinite(alpha) || alpha < 0.0)
    throw Error(ErrorCode::InvalidArgument, "step size must be finite and nonnegative");
  const double beta = hyper.momentum.value_or(momentum_of(name));
  if (!(beta >= 0.0 && beta < 1.0) || !(hyper.beta2 >= 0.0 && hyper.beta2 < 1.0) || !(hyper.epsilon >= 0.0))
    throw Error(ErrorCode::InvalidArgument, "momentum and beta2 must be in [0,1), epsilon nonnegative");
  if (name == "rmsprop") return RmspropState{alpha, hyper.beta2, hyper.epsilon, {}};
  if (name.starts_with("adam")) {
    AdamState s;
    s.alpha = alpha;
    s.beta1 = beta;
    s.beta2 = hyper.beta2;
    s.epsilon = hyper.epsilon;
    s.bias_correction = hyper.bias_correction;
    s.epsilon_inside_sqrt = hyper.epsilon_inside_sqrt;
    return s;
  }
  GdVariantState s;
  s.kind = name.starts_with("sgd")  ? GdKind::gd
           : name.starts_with("norm") ? GdKind::normalized_gd
                                      : GdKind::sign_descent;
  s.alpha = alpha;
  s.beta = beta;
  return s;
}

void step(OptimizerState& state, std::span<double> x, std::span<const double> grad) {
  std::visit(
      [&](auto& s) {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, GdVariantState>) step_gd_variant(s, x, grad);
        else if constexpr (std::is_same_v<S, AdamState>) step_adam(s, x, grad);
        else step_rmsprop(s, x, grad);
      },
      state);
}

std::size_t zero_gradient_skips(const OptimizerState& state) {
  if (const auto* s = std::get_if<GdVariantState>(&state)) return s->zero_gradient_skips;
  return 0;
}

}  // namespace optlab
