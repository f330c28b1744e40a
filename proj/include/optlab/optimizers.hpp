#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace optlab {

enum class GdKind { gd, normalized_gd, sign_descent };

/// Heavy-ball family: m_t = beta * m_{t-1} + d_t, x_{t+1} = x_t - alpha * m_t,
/// where d_t is the gradient transformed according to `kind`.
struct GdVariantState {
  GdKind kind = GdKind::gd;
  double alpha = 0.0;
  double beta = 0.0;
  std::vector<double> m;
  /// Normalized-GD steps whose gradient was exactly zero.
  std::size_t zero_gradient_skips = 0;
};

struct AdamState {
  double alpha = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<double> m;
  std::vector<double> M;
  std::size_t t = 0;
  bool bias_correction = true;
  /// sqrt(M_hat + eps) when true, sqrt(M_hat) + eps otherwise.
  bool epsilon_inside_sqrt = true;
};

/// v_{t+1} = beta2 * v_t + (1 - beta2) g^2, x -= alpha * g / (sqrt(v_{t+1}) + eps).
struct RmspropState {
  double alpha = 0.0;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<double> v;
};

/// d = g, g / ||g||_2, or sign(g) with sign(0) = 0. Throws ZeroGradient for
/// the normalized kind when ||g||_2 == 0.
std::vector<double> transform_direction(GdKind kind, std::span<const double> grad);

// Each step updates `x` in place. Buffers are sized on first use and must
// match x afterwards (ShapeMismatch).
void step_gd_variant(GdVariantState& state, std::span<double> x, std::span<const double> grad);
void step_adam(AdamState& state, std::span<double> x, std::span<const double> grad);
void step_rmsprop(RmspropState& state, std::span<double> x, std::span<const double> grad);

/// Hyperparameters beyond the step size. Unless set explicitly, momentum
/// (beta1 for Adam) is implied by the optimizer name: "+m" means 0.9 and
/// "-m" means 0.
struct OptimizerHyper {
  std::optional<double> momentum;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  bool bias_correction = true;
  bool epsilon_inside_sqrt = true;

  bool operator==(const OptimizerHyper&) const = default;
};

inline constexpr double kMomentum = 0.9;

/// The nine names: sgd+m, sgd-m, norm-gd+m, norm-gd-m, sign+m, sign-m,
/// rmsprop, adam+m, adam-m.
const std::vector<std::string>& optimizer_names();
bool is_optimizer_name(std::string_view name);
/// Momentum (or beta1 for Adam) implied by the name; 0 for rmsprop.
double momentum_of(std::string_view name);
bool has_momentum_flag(std::string_view name);

using OptimizerState = std::variant<GdVariantState, AdamState, RmspropState>;

/// Throws InvalidArgument for an unknown name or non-finite / negative alpha.
OptimizerState make_optimizer(std::string_view name, double alpha, const OptimizerHyper& hyper = {});

void step(OptimizerState& state, std::span<double> x, std::span<const double> grad);

std::size_t zero_gradient_skips(const OptimizerState& state);

}  // namespace optlab
