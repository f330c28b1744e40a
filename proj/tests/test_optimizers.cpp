#include <doctest.h>

#include <cmath>

#include "optlab/error.hpp"
#include "optlab/optimizers.hpp"
#include "optlab/rng.hpp"

using namespace optlab;

namespace {

std::vector<std::vector<double>> random_gradients(std::size_t steps, std::size_t dim, std::uint64_t seed) {
  RngStream rng(seed, StreamId::synthetic);
  std::vector<std::vector<double>> out(steps, std::vector<double>(dim));
  for (auto& g : out)
    for (auto& v : g) v = rng.normal() * std::exp(3.0 * rng.normal());
  out[3][1] = 0.0;
  return out;
}

template <class State, class Step>
std::vector<std::vector<double>> trajectory(State state, Step step_fn,
                                            const std::vector<std::vector<double>>& grads,
                                            std::vector<double> x) {
  std::vector<std::vector<double>> path;
  for (const auto& g : grads) {
    step_fn(state, std::span<double>(x), std::span<const double>(g));
    path.push_back(x);
  }
  return path;
}

}  // namespace

TEST_CASE("transform_direction") {
  CHECK(transform_direction(GdKind::sign_descent, std::vector<double>{0.5, -2.0, 0.0}) ==
        std::vector<double>{1.0, -1.0, 0.0});
  CHECK(transform_direction(GdKind::normalized_gd, std::vector<double>{3.0, 4.0}) ==
        std::vector<double>{0.6, 0.8});
  CHECK(transform_direction(GdKind::gd, std::vector<double>{1.5, -7.25}) == std::vector<double>{1.5, -7.25});
  try {
    transform_direction(GdKind::normalized_gd, std::vector<double>{0.0, 0.0});
    FAIL("expected ZeroGradient");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ZeroGradient);
  }
}

TEST_CASE("heavy-ball examples") {
  GdVariantState sign{GdKind::sign_descent, 0.1, 0.0, {}};
  std::vector<double> x{0.0, 0.0};
  step_gd_variant(sign, x, std::vector<double>{3.0, -7.0});
  CHECK(x == std::vector<double>{-0.1, 0.1});

  GdVariantState gd{GdKind::gd, 0.1, 0.9, {}};
  std::vector<double> y{0.0};
  step_gd_variant(gd, y, std::vector<double>{1.0});
  CHECK(gd.m[0] == 1.0);
  step_gd_variant(gd, y, std::vector<double>{1.0});
  CHECK(gd.m[0] == doctest::Approx(1.9).epsilon(1e-15));
  CHECK(y[0] == doctest::Approx(-0.29).epsilon(1e-14));

  GdVariantState norm{GdKind::normalized_gd, 0.3, 0.0, {}};
  std::vector<double> z{1.0, 2.0, 3.0};
  step_gd_variant(norm, z, std::vector<double>{1e-3, -5.0, 2.0});
  const double len = std::hypot(z[0] - 1.0, z[1] - 2.0, z[2] - 3.0);
  CHECK(std::abs(len - 0.3) < 1e-12);
}

TEST_CASE("zero gradient in normalized GD is skipped, counted and momentum decays") {
  GdVariantState s{GdKind::normalized_gd, 1.0, 0.9, {}};
  std::vector<double> x{0.0, 0.0};
  step_gd_variant(s, x, std::vector<double>{3.0, 4.0});
  step_gd_variant(s, x, std::vector<double>{0.0, 0.0});
  CHECK(s.zero_gradient_skips == 1);
  CHECK(s.m[0] == doctest::Approx(0.54));
  CHECK(x[0] == doctest::Approx(-0.6 - 0.54));
}

TEST_CASE("momentum is a geometric sum of a constant direction") {
  const double beta = 0.9;
  GdVariantState s{GdKind::gd, 0.01, beta, {}};
  std::vector<double> x{0.0, 0.0};
  const std::vector<double> d{1.0, -0.5};
  for (int t = 1; t <= 50; ++t) {
    step_gd_variant(s, x, d);
    const double geometric = (1.0 - std::pow(beta, t)) / (1.0 - beta);
    CHECK(std::abs(s.m[0] - geometric) < 1e-12);
    CHECK(std::abs(s.m[1] + 0.5 * geometric) < 1e-12);
  }
}

TEST_CASE("adam examples") {
  AdamState s;
  s.alpha = 0.1;
  std::vector<double> x{0.0};
  step_adam(s, x, std::vector<double>{1.0});
  CHECK(s.t == 1);
  CHECK(std::abs(x[0] + 0.1 / std::sqrt(1.0 + 1e-8)) < 1e-15);

  // First bias-corrected step has magnitude alpha*|g|/sqrt(g^2+eps) for any betas.
  for (double b1 : {0.0, 0.5, 0.9}) {
    for (double b2 : {0.0, 0.9, 0.999}) {
      AdamState a;
      a.alpha = 0.2;
      a.beta1 = b1;
      a.beta2 = b2;
      std::vector<double> p{0.0, 0.0, 0.0};
      const std::vector<double> g{0.3, -40.0, 1e-5};
      step_adam(a, p, g);
      for (std::size_t i = 0; i < 3; ++i) {
        const double expect = 0.2 * std::abs(g[i]) / std::sqrt(g[i] * g[i] + 1e-8);
        CHECK(std::abs(std::abs(p[i]) - expect) < 1e-12);
        CHECK(std::abs(p[i]) <= 0.2);
      }
    }
  }

  AdamState zero;
  zero.alpha = 0.1;
  std::vector<double> w{2.0, -1.0};
  for (int i = 0; i < 5; ++i) step_adam(zero, w, std::vector<double>{0.0, 0.0});
  CHECK(w == std::vector<double>{2.0, -1.0});

  AdamState outside;
  outside.alpha = 1.0;
  outside.epsilon = 0.5;
  outside.epsilon_inside_sqrt = false;
  std::vector<double> u{0.0};
  step_adam(outside, u, std::vector<double>{4.0});
  CHECK(u[0] == doctest::Approx(-4.0 / 4.5));
}

TEST_CASE("rmsprop examples") {
  RmspropState s{0.01, 0.999, 1e-8, {}};
  std::vector<double> x{0.0};
  step_rmsprop(s, x, std::vector<double>{2.0});
  CHECK(s.v[0] == doctest::Approx(0.004).epsilon(1e-12));
  CHECK(x[0] == doctest::Approx(-0.01 * 2.0 / (std::sqrt(0.004) + 1e-8)).epsilon(1e-14));

  RmspropState z{0.01, 0.999, 1e-8, {}};
  std::vector<double> y{1.0};
  step_rmsprop(z, y, std::vector<double>{0.0});
  CHECK(y[0] == 1.0);

  RmspropState r{0.25, 0.0, 0.0, {}};
  std::vector<double> w{0.0, 0.0, 0.0};
  step_rmsprop(r, w, std::vector<double>{-3.0, 1e-100, 0.0});
  CHECK(w == std::vector<double>{0.25, -0.25, 0.0});
}

TEST_CASE("adam and rmsprop reduce to sign descent") {
  const auto grads = random_gradients(20, 6, 7);
  const std::vector<double> x0{0.5, -1.0, 2.0, 0.0, 3.0, -4.0};

  GdVariantState sign{GdKind::sign_descent, 0.05, 0.0, {}};
  AdamState adam;
  adam.alpha = 0.05;
  adam.beta1 = adam.beta2 = adam.epsilon = 0.0;
  adam.bias_correction = false;
  RmspropState rms{0.05, 0.0, 0.0, {}};

  const auto a = trajectory(sign, step_gd_variant, grads, x0);
  const auto b = trajectory(adam, step_adam, grads, x0);
  const auto c = trajectory(rms, step_rmsprop, grads, x0);
  CHECK(a == b);
  CHECK(a == c);
}

TEST_CASE("sign descent ignores gradient scale") {
  const auto grads = random_gradients(20, 4, 11);
  const std::vector<double> x0{1.0, 2.0, 3.0, 4.0};
  const GdVariantState s{GdKind::sign_descent, 0.1, 0.9, {}};
  const auto base = trajectory(s, step_gd_variant, grads, x0);
  for (double c : {0.01, 100.0}) {
    auto scaled = grads;
    for (auto& g : scaled)
      for (auto& v : g) v *= c;
    CHECK(trajectory(s, step_gd_variant, scaled, x0) == base);
  }
}

TEST_CASE("optimizer registry") {
  CHECK(optimizer_names().size() == 9);
  CHECK(momentum_of("adam+m") == 0.9);
  CHECK(momentum_of("sign-m") == 0.0);
  CHECK(momentum_of("rmsprop") == 0.0);
  auto adam = make_optimizer("adam+m", 0.1);
  REQUIRE(std::holds_alternative<AdamState>(adam));
  CHECK(std::get<AdamState>(adam).beta1 == 0.9);
  CHECK(std::get<AdamState>(adam).beta2 == 0.999);
  CHECK(std::get<AdamState>(adam).epsilon == 1e-8);
  CHECK(std::get<GdVariantState>(make_optimizer("norm-gd-m", 0.1)).kind == GdKind::normalized_gd);
  CHECK(std::get<GdVariantState>(make_optimizer("sgd+m", 0.1)).beta == 0.9);
  CHECK(std::holds_alternative<RmspropState>(make_optimizer("rmsprop", 0.1)));
  CHECK_THROWS_AS(make_optimizer("lion", 0.1), Error);
  CHECK_THROWS_AS(make_optimizer("sgd+m", std::nan("")), Error);

  auto s = make_optimizer("sign-m", 0.5);
  std::vector<double> x{0.0, 0.0};
  step(s, x, std::vector<double>{2.0, -1.0});
  CHECK(x == std::vector<double>{-0.5, 0.5});
  std::vector<double> wrong{0.0};
  CHECK_THROWS_AS(step(s, wrong, std::vector<double>{1.0}), Error);
}
