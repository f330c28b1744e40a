#include <doctest.h>

#include <cmath>
#include <functional>
#include <numeric>

#include "optlab/autodiff.hpp"
#include "optlab/error.hpp"
#include "optlab/rng.hpp"

using namespace optlab;

namespace {

Tensor random_tensor(Shape shape, RngStream& rng, double lo = -2.0, double hi = 2.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = lo + (hi - lo) * rng.uniform();
  return t;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an optlab::Error");
  return ErrorCode::InvalidArgument;
}

}  // namespace

TEST_CASE("philox matches the Random123 known-answer vectors") {
  CHECK(philox4x32({0, 0, 0, 0}, {0, 0}) ==
        std::array<std::uint32_t, 4>{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
  CHECK(philox4x32({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu},
                   {0xffffffffu, 0xffffffffu}) ==
        std::array<std::uint32_t, 4>{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
  CHECK(philox4x32({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u},
                   {0xa4093822u, 0x299f31d0u}) ==
        std::array<std::uint32_t, 4>{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST_CASE("rng streams are positional and independent") {
  RngStream a(42, StreamId::init), b(42, StreamId::init);
  for (int i = 0; i < 10; ++i) CHECK(a.next_u64() == b.next_u64());

  RngStream init(42, StreamId::init), drop(42, StreamId::dropout);
  CHECK(init.next_u64() != drop.next_u64());

  // Consuming one stream never shifts another.
  RngStream order1(7, StreamId::data_order), order2(7, StreamId::data_order);
  RngStream noise(7, StreamId::dropout);
  for (int i = 0; i < 100; ++i) noise.uniform();
  CHECK(order1.next_u64() == order2.next_u64());

  RngStream base(3, StreamId::data_order);
  CHECK(base.derive(1).next_u64() == base.derive(1).next_u64());
  CHECK(base.derive(1).next_u64() != base.derive(2).next_u64());

  RngStream u(5, StreamId::noise);
  double total = 0.0, total_sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double z = u.normal();
    total += z;
    total_sq += z * z;
  }
  CHECK(std::abs(total / n) < 0.03);
  CHECK(std::abs(total_sq / n - 1.0) < 0.05);
  for (int i = 0; i < 1000; ++i) CHECK(u.uniform_index(7) < 7);
}

TEST_CASE("tensor invariants") {
  CHECK(code_of([] { Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}); }) ==
        ErrorCode::ShapeMismatch);
  CHECK(code_of([] { Tensor(Shape{0, 2}); }) == ErrorCode::ShapeMismatch);
  Tensor t(Shape{2, 3}, 1.0);
  CHECK(t.size() == 6);
  CHECK_FALSE(t.has_grad());
  t.mutable_grad()[0] = 2.0;
  CHECK(t.grad().size() == 6);
  t[1] = std::nan("");
  CHECK(code_of([&] { t.check_finite("t"); }) == ErrorCode::NonFinite);
}

TEST_CASE("eval examples") {
  Graph g;
  Var a = g.constant(Tensor({2, 2}, {1, 2, 3, 4}));
  Var b = g.constant(Tensor({2, 1}, {1, 1}));
  CHECK(g.eval(ops::matmul(a, b)) == Tensor({2, 1}, {3, 7}));

  Var s = ops::softmax(g.constant(Tensor({2}, {0, 0})));
  CHECK(s.value() == Tensor({2}, {0.5, 0.5}));

  // Constant row: zero variance, the floor keeps it finite and the output is the bias.
  Var x = g.constant(Tensor({1, 3}, {4, 4, 4}));
  Var gain = g.constant(Tensor({3}, {2, 2, 2}));
  Var bias = g.constant(Tensor({3}, {0.5, -1, 0}));
  CHECK(ops::layer_norm(x, gain, bias).value() == Tensor({1, 3}, {0.5, -1, 0}));

  CHECK(code_of([&] { ops::matmul(a, g.constant(Tensor({3, 1}))); }) == ErrorCode::ShapeMismatch);
  CHECK(code_of([&] { ops::scale(a, std::numeric_limits<double>::infinity()); }) ==
        ErrorCode::NonFinite);
}

TEST_CASE("backward examples") {
  Tensor x({3}, {1, 2, 3});
  {
    Graph g;
    Var xv = g.parameter(x);
    Var loss = ops::sum(ops::mul(xv, xv));
    auto touched = g.backward(loss);
    REQUIRE(touched.size() == 1);
    CHECK(touched[0] == &x);
    CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{2, 4, 6});
    // Accumulation contract: a second sweep adds the same gradient again.
    g.backward(loss);
    CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{4, 8, 12});
    CHECK(code_of([&] { g.backward(xv); }) == ErrorCode::NotScalar);
    g.release();
    CHECK(code_of([&] { g.backward(loss); }) == ErrorCode::GraphConsumed);
  }
  {
    // d CE / d logits = softmax(logits) - onehot(target)
    Tensor logits({1, 2}, {0, 0});
    Graph g;
    const std::vector<std::uint32_t> target{0};
    g.backward(ops::cross_entropy(g.parameter(logits), target));
    CHECK(logits.grad()[0] == doctest::Approx(-0.5).epsilon(1e-15));
    CHECK(logits.grad()[1] == doctest::Approx(0.5).epsilon(1e-15));
  }
}

TEST_CASE("softmax rows are distributions and uniform cross-entropy is log V") {
  RngStream rng(11, StreamId::init);
  Graph g;
  Var p = ops::softmax(g.constant(random_tensor({5, 7}, rng, -30, 30)));
  for (std::size_t r = 0; r < 5; ++r) {
    double total = 0.0;
    for (std::size_t j = 0; j < 7; ++j) total += p.value()[r * 7 + j];
    CHECK(std::abs(total - 1.0) < 1e-12);
  }
  Var causal = ops::softmax(g.constant(random_tensor({2, 4, 4}, rng)), true);
  for (std::size_t r = 0; r < 8; ++r) {
    double total = 0.0;
    for (std::size_t j = 0; j < 4; ++j) {
      const double w = causal.value()[r * 4 + j];
      if (j > r % 4) CHECK(w == 0.0);
      total += w;
    }
    CHECK(std::abs(total - 1.0) < 1e-12);
  }
  for (std::uint32_t vocab : {2u, 13u, 64u, 128u}) {
    for (std::uint32_t target : {0u, vocab - 1}) {
      const std::vector<std::uint32_t> t{target};
      const double loss = ops::cross_entropy(g.constant(Tensor({1, vocab}, 0.25)), t).value().item();
      CHECK(std::abs(loss - std::log(static_cast<double>(vocab))) < 1e-12);
    }
  }
  const std::vector<std::uint32_t> bad{9};
  CHECK(code_of([&] { ops::cross_entropy(g.constant(Tensor({1, 3})), bad); }) ==
        ErrorCode::VocabOverflow);
}

TEST_CASE("grad_check examples") {
  auto square = [](Graph&, Var x) { return ops::sum(ops::mul(x, x)); };
  auto report = grad_check(square, Tensor({1}, {3}), 1e-6);
  CHECK(report.passed);
  CHECK(report.analytic[0] == 6.0);
  CHECK(report.numeric[0] == doctest::Approx(6.0).epsilon(1e-9));

  // |x| = relu(x) + relu(-x), probed at its kink.
  auto abs_fn = [](Graph&, Var x) { return ops::sum(ops::add(ops::relu(x), ops::relu(ops::scale(x, -1.0)))); };
  auto kink = grad_check(abs_fn, Tensor({1}, {0.0}), 1e-6);
  CHECK_FALSE(kink.passed);
  CHECK(kink.kinks == std::vector<std::size_t>{0});
  CHECK(grad_check(abs_fn, Tensor({1}, {0.7}), 1e-6).passed);
}

// Every primitive: the reverse-mode gradient of <op(x), w> for a random
// projection w equals the central-difference directional slopes.
TEST_CASE("primitive gradients match finite differences") {
  RngStream rng(2024, StreamId::init);
  const double tol = 1e-4;
  Tensor w23 = random_tensor({2, 3}, rng);
  auto project = [](Graph& g, Var y, const Tensor& w) {
    return ops::sum(ops::mul(y, g.constant(w)));
  };

  SUBCASE("matmul") {
    Tensor other = random_tensor({3, 3}, rng);
    auto f = [&](Graph& g, Var x) { return project(g, ops::matmul(x, g.constant(other)), w23); };
    CHECK(grad_check(f, random_tensor({2, 3}, rng), tol).passed);
    Tensor left = random_tensor({2, 3}, rng);
    Tensor w = random_tensor({2, 4}, rng);
    auto f3 = [&](Graph& g, Var x) { return project(g, ops::matmul(g.constant(left), x), w); };
    CHECK(grad_check(f3, random_tensor({3, 4}, rng), tol).passed);
    Tensor bl = random_tensor({2, 2, 3}, rng), bw = random_tensor({2, 2, 2}, rng);
    auto f4 = [&](Graph& g, Var x) { return project(g, ops::matmul(g.constant(bl), x), bw); };
    CHECK(grad_check(f4, random_tensor({2, 3, 2}, rng), tol).passed);
  }
  SUBCASE("add with broadcast") {
    Tensor base = random_tensor({2, 3}, rng);
    auto f = [&](Graph& g, Var x) { return project(g, ops::add(g.constant(base), x), w23); };
    CHECK(grad_check(f, random_tensor({3}, rng), tol).passed);
    auto f2 = [&](Graph& g, Var x) { return project(g, ops::add(x, g.constant(base)), w23); };
    CHECK(grad_check(f2, random_tensor({2, 3}, rng), tol).passed);
  }
  SUBCASE("mul, scale, tanh, relu") {
    Tensor other = random_tensor({2, 3}, rng);
    auto fm = [&](Graph& g, Var x) { return project(g, ops::mul(x, g.constant(other)), w23); };
    CHECK(grad_check(fm, random_tensor({2, 3}, rng), tol).passed);
    auto fs = [&](Graph& g, Var x) { return project(g, ops::scale(x, -1.7), w23); };
    CHECK(grad_check(fs, random_tensor({2, 3}, rng), tol).passed);
    auto ft = [&](Graph& g, Var x) { return project(g, ops::tanh(x), w23); };
    CHECK(grad_check(ft, random_tensor({2, 3}, rng), tol).passed);
    auto fr = [&](Graph& g, Var x) { return project(g, ops::relu(x), w23); };
    CHECK(grad_check(fr, random_tensor({2, 3}, rng), tol).passed);
  }
  SUBCASE("softmax, causal softmax, layer_norm") {
    auto fs = [&](Graph& g, Var x) { return project(g, ops::softmax(x), w23); };
    CHECK(grad_check(fs, random_tensor({2, 3}, rng), tol).passed);
    Tensor wc = random_tensor({2, 3, 3}, rng);
    auto fc = [&](Graph& g, Var x) { return project(g, ops::softmax(x, true), wc); };
    CHECK(grad_check(fc, random_tensor({2, 3, 3}, rng), tol).passed);
    Tensor gain = random_tensor({3}, rng), bias = random_tensor({3}, rng), x0 = random_tensor({2, 3}, rng);
    auto fx = [&](Graph& g, Var x) {
      return project(g, ops::layer_norm(x, g.constant(gain), g.constant(bias)), w23);
    };
    CHECK(grad_check(fx, x0, tol).passed);
    auto fg = [&](Graph& g, Var gv) {
      return project(g, ops::layer_norm(g.constant(x0), gv, g.constant(bias)), w23);
    };
    CHECK(grad_check(fg, gain, tol).passed);
    auto fb = [&](Graph& g, Var bv) {
      return project(g, ops::layer_norm(g.constant(x0), g.constant(gain), bv), w23);
    };
    CHECK(grad_check(fb, bias, tol).passed);
  }
  SUBCASE("embedding, cross_entropy, reshape, transpose, mean, sum") {
    const std::vector<std::uint32_t> ids{2, 0, 2};
    Tensor we = random_tensor({3, 2}, rng);
    auto fe = [&](Graph& g, Var t) { return project(g, ops::embedding_lookup(t, ids), we); };
    CHECK(grad_check(fe, random_tensor({4, 2}, rng), tol).passed);
    const std::vector<std::uint32_t> targets{1, 2};
    auto fce = [&](Graph&, Var x) { return ops::cross_entropy(x, targets); };
    CHECK(grad_check(fce, random_tensor({2, 3}, rng), tol).passed);
    Tensor wr = random_tensor({3, 2}, rng);
    auto fr = [&](Graph& g, Var x) { return project(g, ops::reshape(x, {3, 2}), wr); };
    CHECK(grad_check(fr, random_tensor({2, 3}, rng), tol).passed);
    Tensor wt = random_tensor({3, 4, 2}, rng);
    auto ft = [&](Graph& g, Var x) { return project(g, ops::transpose(x, {1, 2, 0}), wt); };
    CHECK(grad_check(ft, random_tensor({2, 3, 4}, rng), tol).passed);
    auto fmean = [&](Graph&, Var x) { return ops::mean(ops::mul(x, x)); };
    CHECK(grad_check(fmean, random_tensor({2, 3}, rng), tol).passed);
    auto fsum = [&](Graph& g, Var x) { return project(g, x, w23); };
    CHECK(grad_check(fsum, random_tensor({2, 3}, rng), tol).passed);
  }
  SUBCASE("dropout with a replayed mask") {
    auto fd = [&](Graph& g, Var x) {
      RngStream mask_rng(9, StreamId::dropout);
      return project(g, ops::dropout(x, 0.4, mask_rng), w23);
    };
    CHECK(grad_check(fd, random_tensor({2, 3}, rng), tol).passed);
  }
}

TEST_CASE("transpose permutes axes") {
  Graph g;
  Tensor x({2, 3}, {0, 1, 2, 3, 4, 5});
  CHECK(ops::transpose(g.constant(x), {1, 0}).value() == Tensor({3, 2}, {0, 3, 1, 4, 2, 5}));
  Tensor y({2, 2, 2}, {0, 1, 2, 3, 4, 5, 6, 7});
  CHECK(ops::transpose(g.constant(y), {1, 0, 2}).value() ==
        Tensor({2, 2, 2}, {0, 1, 4, 5, 2, 3, 6, 7}));
}

TEST_CASE("eval and backward are bitwise deterministic") {
  auto run = [] {
    RngStream init(77, StreamId::init);
    Tensor w = random_tensor({4, 5}, init);
    Tensor x = random_tensor({3, 4}, init);
    RngStream drop(77, StreamId::dropout);
    Graph g;
    Var h = ops::dropout(ops::tanh(ops::matmul(g.constant(x), g.parameter(w))), 0.3, drop);
    const std::vector<std::uint32_t> t{0, 4, 2};
    Var loss = ops::cross_entropy(h, t);
    g.backward(loss);
    std::vector<double> out{loss.value().item()};
    out.insert(out.end(), w.grad().begin(), w.grad().end());
    return out;
  };
  CHECK(run() == run());
}
