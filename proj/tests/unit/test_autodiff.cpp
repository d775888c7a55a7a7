// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "naepro/autodiff.hpp"
#include "naepro/error.hpp"
#include "test_support.hpp"

namespace {

using naepro::Shape;
using naepro::Tensor;
namespace ad = naepro::ad;
using naepro::testing::check_gradients;
using naepro::testing::random_away_from_zero;
using naepro::testing::random_tensor;

constexpr double kGradTol = 1e-5;

// Contract a tensor-valued result against fixed random weights so every
// output entry receives a distinct adjoint.
ad::Var contract(const ad::Var& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return ad::sum(ad::mul(y, ad::constant(random_tensor(rng, y.shape()))));
}

Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  Tensor out(Shape{a.dim(0), b.dim(1)});
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < b.dim(1); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.dim(1); ++k) acc += a(i, k) * b(k, j);
      out(i, j) = acc;
    }
  return out;
}

TEST(Matmul, IdentityAndZeros) {
  Tensor b = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  auto id = ad::constant(Tensor::matrix(2, 2, {1, 0, 0, 1}));
  EXPECT_EQ(ad::matmul(id, ad::constant(b)).value(), b);

  auto zeros = ad::constant(Tensor(Shape{3, 4}, 0.0));
  auto prod = ad::matmul(ad::constant(b), zeros);
  for (double v : prod.value().values()) EXPECT_EQ(v, 0.0);
}

TEST(Matmul, MatchesTripleLoop) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor a = random_tensor(rng, {3, 4});
    Tensor b = random_tensor(rng, {4, 2});
    auto got = ad::matmul(ad::constant(a), ad::constant(b)).value();
    EXPECT_LE(naepro::max_abs_diff(got, naive_matmul(a, b)), 1e-12);
  }
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  auto a = ad::constant(Tensor(Shape{2, 3}));
  auto b = ad::constant(Tensor(Shape{2, 3}));
  try {
    ad::matmul(a, b);
    FAIL() << "expected DimensionError";
  } catch (const naepro::DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3] by [2x3]"), std::string::npos) << msg;
  }
}

TEST(Softmax, KnownValues) {
  auto uniform = ad::softmax(ad::constant(Tensor(Shape{1, 20}, 0.3)), 1);
  for (double v : uniform.value().values()) EXPECT_NEAR(v, 0.05, 1e-15);

  auto y = ad::softmax(ad::constant(Tensor::matrix(1, 3, {std::log(1.0), std::log(2.0), std::log(1.0)})), 1);
  EXPECT_NEAR(y.value()[0], 0.25, 1e-15);
  EXPECT_NEAR(y.value()[1], 0.5, 1e-15);
  EXPECT_NEAR(y.value()[2], 0.25, 1e-15);
}

TEST(Softmax, ShiftInvariantAndNormalisedAtLargeMagnitude) {
  std::mt19937_64 rng(3);
  Tensor x = random_tensor(rng, {5, 7}, -1e3, 1e3);
  Tensor shifted = x;
  for (double& v : shifted.values()) v += 123.5;
  auto a = ad::softmax(ad::constant(x), 1).value();
  auto b = ad::softmax(ad::constant(shifted), 1).value();
  EXPECT_LE(naepro::max_abs_diff(a, b), 1e-12);
  for (std::size_t r = 0; r < 5; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < 7; ++c) {
      EXPECT_GE(a(r, c), 0.0);
      total += a(r, c);
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Softmax, AlongLeadingAxis) {
  auto y = ad::softmax(ad::constant(Tensor::matrix(2, 2, {0.0, 1.0, 0.0, 1.0})), 0).value();
  EXPECT_NEAR(y(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(y(1, 1), 0.5, 1e-15);
}

TEST(Softmax, EmptyAxisThrows) {
  EXPECT_THROW(ad::softmax(ad::constant(Tensor(Shape{2, 0})), 1), naepro::DimensionError);
}

TEST(Elementwise, ScalarIdentities) {
  auto zero = ad::constant(Tensor::scalar(0.0));
  EXPECT_EQ(ad::silu(zero).value().item(), 0.0);
  EXPECT_EQ(ad::sigmoid(zero).value().item(), 0.5);
  EXPECT_EQ(ad::relu(ad::constant(Tensor::scalar(-3.0))).value().item(), 0.0);
}

TEST(Elementwise, BroadcastRowsAndColumns) {
  auto m = ad::constant(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  auto row = ad::constant(Tensor::vector({10, 20, 30}));
  auto col = ad::constant(Tensor::matrix(2, 1, {100, 200}));
  auto r = ad::add(m, row).value();
  EXPECT_EQ(r(1, 2), 36.0);
  auto c = ad::mul(m, col).value();
  EXPECT_EQ(c(1, 0), 800.0);
  EXPECT_THROW(ad::add(m, ad::constant(Tensor::vector({1, 2}))), naepro::DimensionError);
}

TEST(Elementwise, GeneralBroadcastRank3) {
  auto a = ad::constant(Tensor(Shape{2, 1, 3}, 1.0));
  auto b = ad::constant(Tensor(Shape{4, 1}, 2.0));
  auto y = ad::add(a, b);
  EXPECT_EQ(y.shape(), (Shape{2, 4, 3}));
  for (double v : y.value().values()) EXPECT_EQ(v, 3.0);
}

TEST(LayerNorm, KnownValues) {
  auto gain = ad::constant(Tensor(Shape{2}, 1.0));
  auto bias = ad::constant(Tensor(Shape{2}, 0.0));
  auto y = ad::layernorm(ad::constant(Tensor::matrix(1, 2, {1.0, -1.0})), gain, bias).value();
  const double expected = 1.0 / std::sqrt(1.0 + ad::kLayerNormEps);
  EXPECT_NEAR(y[0], expected, 1e-15);
  EXPECT_NEAR(y[1], -expected, 1e-15);

  auto g4 = ad::constant(Tensor(Shape{4}, 1.0));
  auto b4 = ad::constant(Tensor(Shape{4}, 0.0));
  auto flat = ad::layernorm(ad::constant(Tensor(Shape{1, 4}, 2.5)), g4, b4).value();
  for (double v : flat.values()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, NormalisesRandomSlice) {
  std::mt19937_64 rng(11);
  Tensor x = random_tensor(rng, {1, 8}, -3, 3);
  auto y = ad::layernorm(ad::constant(x), ad::constant(Tensor(Shape{8}, 1.0)), ad::constant(Tensor(Shape{8}, 0.0)))
               .value();
  double mu = 0.0;
  for (double v : y.values()) mu += v;
  mu /= 8.0;
  double var = 0.0;
  for (double v : y.values()) var += (v - mu) * (v - mu);
  var /= 8.0;
  EXPECT_LE(std::abs(mu), 1e-10);
  EXPECT_NEAR(var, 1.0, 1e-4);
}

TEST(Norm2, KnownValues) {
  EXPECT_EQ(ad::norm2(ad::constant(Tensor::vector({0, 0, 0}))).value().item(), 0.0);
  EXPECT_EQ(ad::norm2(ad::constant(Tensor::vector({3, 4, 0}))).value().item(), 5.0);
  std::mt19937_64 rng(5);
  Tensor v = random_tensor(rng, {3});
  EXPECT_NEAR(ad::norm2(ad::constant(v)).value().item(), std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]), 1e-12);
}

TEST(Norm2, ZeroVectorHasZeroGradient) {
  auto x = ad::parameter(Tensor::vector({0, 0, 0}));
  ad::backward(ad::norm2(x));
  for (double g : x.grad().values()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, BasicScalars) {
  auto x = ad::parameter(Tensor::scalar(3.0));
  ad::backward(ad::square(x));
  EXPECT_EQ(x.grad().item(), 6.0);

  auto y = ad::parameter(Tensor::scalar(3.0));
  auto c = ad::add(ad::scale(y, 0.0), ad::constant(Tensor::scalar(4.0)));
  ad::backward(c);
  EXPECT_EQ(y.grad().item(), 0.0);
}

TEST(Backward, NonScalarRootThrows) {
  auto x = ad::parameter(Tensor(Shape{2}, 1.0));
  EXPECT_THROW(ad::backward(x), naepro::DimensionError);
}

TEST(Backward, RepeatAfterZeroingIsBitIdentical) {
  std::mt19937_64 rng(21);
  Tensor a0 = random_tensor(rng, {3, 4});
  Tensor b0 = random_tensor(rng, {4, 2});
  auto a = ad::parameter(a0);
  auto b = ad::parameter(b0);
  auto loss = ad::sum(ad::silu(ad::matmul(a, b)));
  ad::backward(loss);
  const Tensor first = a.grad();
  a.zero_grad();
  b.zero_grad();
  ad::backward(loss);
  EXPECT_EQ(a.grad(), first);
}

TEST(Backward, CompositeMatchesFiniteDifferences) {
  std::mt19937_64 rng(99);
  Tensor a = random_tensor(rng, {3, 4});
  Tensor b = random_tensor(rng, {4, 2});
  Tensor g = random_tensor(rng, {2});
  auto f = [](const std::vector<ad::Var>& v) {
    auto h = ad::matmul(v[0], v[1]);                        // 1
    auto s = ad::silu(h);                                   // 2
    auto n = ad::layernorm(s, v[2], ad::constant(Tensor(Shape{2}, 0.1)));  // 3
    auto p = ad::softmax(n, 1);                             // 4
    return ad::sum(ad::mul(p, ad::sigmoid(h)));             // 5
  };
  auto res = check_gradients(f, {a, b, g});
  EXPECT_LE(res.max_rel, 1e-6);
}

TEST(Backward, SharedSubexpressionAccumulatesAllPaths) {
  auto x = ad::parameter(Tensor::scalar(2.0));
  auto y = ad::mul(x, x);             // x^2
  auto z = ad::add(ad::mul(y, x), y);  // x^3 + x^2
  ad::backward(z);
  EXPECT_DOUBLE_EQ(x.grad().item(), 3 * 4.0 + 2 * 2.0);
}

TEST(NoGrad, SkipsGraphConstruction) {
  auto x = ad::parameter(Tensor::scalar(2.0));
  ad::Var y;
  {
    ad::NoGradGuard guard;
    y = ad::square(x);
  }
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(ad::grad_enabled());
}

// ---- per-op gradient checks on 20 random inputs each ----------------------

struct OpCase {
  std::string name;
  std::function<std::vector<Tensor>(std::mt19937_64&)> inputs;
  naepro::testing::ScalarFn fn;
};

std::vector<OpCase> op_cases() {
  const std::vector<std::size_t> rows{0, 2, 1, 0, 2};
  const std::vector<std::size_t> cols{1, 0, 2, 2, 1};
  std::vector<OpCase> cases;
  auto pair = [](std::mt19937_64& r) { return std::vector<Tensor>{random_tensor(r, {3, 4}), random_tensor(r, {3, 4})}; };
  cases.push_back({"matmul", [](std::mt19937_64& r) { return std::vector<Tensor>{random_tensor(r, {3, 4}), random_tensor(r, {4, 2})}; },
                   [](const auto& v) { return contract(ad::matmul(v[0], v[1]), 1); }});
  cases.push_back({"transpose", [](std::mt19937_64& r) { return std::vector<Tensor>{random_tensor(r, {3, 2})}; },
                   [](const auto& v) { return contract(ad::transpose(v[0]), 2); }});
  cases.push_back({"add", pair, [](const auto& v) { return contract(ad::add(v[0], v[1]), 3); }});
  cases.push_back({"sub", pair, [](const auto& v) { return contract(ad::sub(v[0], v[1]), 4); }});
  cases.push_back({"mul", pair, [](const auto& v) { return contract(ad::mul(v[0], v[1]), 5); }});
  cases.push_back({"div", [](std::mt19937_64& r) { return std::vector<Tensor>{random_tensor(r, {3, 4}), random_away_from_zero(r, {3, 1}, 0.5)}; },
                   [](const auto& v) { return contract(ad::div(v[0], v[1]), 6); }});
  cases.push_back({"add_row_broadcast", [](std::mt19937_64& r) { return std::vector<Tensor>{random_tensor(r, {3, 4}), random_tensor(r, {4})}; },
                   [](const auto& v) { return contract(ad::add(v[0], v[1]), 7); }});
  cases.push_back({"mul_general_broadcast", [](std::mt19937_64& r) { return std::vector<Tensor>{random_tensor(r, {2, 1, 3}), random_tensor(r, {4, 1})}; },
                   [](const auto& v) { return contract(ad::mul(v[0], v[1]), 8); }});
  cases.push_back({"silu", [](std::mt19937_64& r) { return std::vector<Tensor>{random_tensor(r, {3, 3}, -3, 3)}; },
                   [](const auto& v) { return contract(ad::silu(v[0]), 9); }});
  cases.push_back({"relu", [](std::mt19937_64& r) { return std::vector<Tensor>{random_away_from_zero(r, {3, 3})}; },
                   [](const auto& v) { return contract(ad::relu(v[0]), 10); }});
  cases.push_back({"sigmoid", [](std::mt19937_64& r) { return std::vector<Tensor>{random_tensor(r, {3, 3}, -4, 4)}; },
                   [](const auto& v) { return contract(ad::sigmoid(v[0]), 11); }});
  cases.push_back({"exp_log", [](std::mt19937_64& r) { return std::vector<Tensor>{random_tensor(r, {2, 3}, 0.2, 2.0)}; },
                   [](const auto& v) { return contract(ad::log(ad::exp(ad::log(v[0]))), 12); }});
  cases.push_back({"square_scale", [](std::mt19937_64& r) { return std::vector<Tensor>{random_tensor(r, {2, 3})}; },
                   [](const auto& v) { return contract(ad::add_scalar(ad::scale(ad::square(v[0]), -1.5), 2.0), 13); }});
  cases.push_back({"clamp_min", [](std::mt19937_64& r) { return std::vector<Tensor>{random_away_from_zero(r, {3, 3})}; },
                   [](const auto& v) { return contract(ad::clamp_min(v[0], 0.0), 14); }});
  cases.push_back({"softmax_axis1", [](std::mt19937_64& r) { return std::vector<Tensor>{random_tensor(r, {3, 5}, -2, 2)}; },
                   [](const auto& v) { return contract(ad::softmax(v[0], 1), 15); }});
  cases.push_back({"softmax_axis0", [](std::mt19937_64& r) { return std::vector<Tensor>{random_tensor(r, {4, 3}, -2, 2)}; },
                   [](const auto& v) { return contract(ad::softmax(v[0], 0), 16); }});
  cases.push_back({"log_softmax", [](std::mt19937_64& r) { return std::vector<Tensor>{random_tensor(r, {3, 5}, -2, 2)}; },
                   [](const auto& v) { return contract(ad::log_softmax(v[0]), 17); }});
  cases.push_back({"layernorm", [](std::mt19937_64& r) { return std::vector<Tensor>{random_tensor(r, {3, 8}, -2, 2), random_tensor(r, {8}), random_tensor(r, {8})}; },
                   [](const auto& v) { return contract(ad::layernorm(v[0], v[1], v[2]), 18); }});
  cases.push_back({"sum_mean", [](std::mt19937_64& r) { return std::vector<Tensor>{random_tensor(r, {3, 4})}; },
                   [](const auto& v) { return ad::add(ad::square(ad::sum(v[0])), ad::mean(ad::square(v[0]))); }});
  cases.push_back({"sum_last", [](std::mt19937_64& r) { return std::vector<Tensor>{random_tensor(r, {3, 4})}; },
                   [](const auto& v) { return contract(ad::sum_last(v[0]), 19); }});
  cases.push_back({"group_sum", [](std::mt19937_64& r) { return std::vector<Tensor>{random_tensor(r, {6, 3})}; },
                   [](const auto& v) { return contract(ad::group_sum(v[0], 3), 20); }});
  cases.push_back({"row_norm", [](std::mt19937_64& r) { return std::vector<Tensor>{random_away_from_zero(r, {4, 3})}; },
                   [](const auto& v) { return contract(ad::row_norm(v[0]), 21); }});
  cases.push_back({"norm2", [](std::mt19937_64& r) { return std::vector<Tensor>{random_away_from_zero(r, {3})}; },
                   [](const auto& v) { return ad::scale(ad::norm2(v[0]), 1.7); }});
  cases.push_back({"reshape", [](std::mt19937_64& r) { return std::vector<Tensor>{random_tensor(r, {2, 6})}; },
                   [](const auto& v) { return contract(ad::reshape(v[0], Shape{3, 4}), 22); }});
  cases.push_back({"gather_rows", [](std::mt19937_64& r) { return std::vector<Tensor>{random_tensor(r, {3, 2})}; },
                   [rows](const auto& v) { return contract(ad::gather_rows(v[0], rows), 23); }});
  cases.push_back({"take", [](std::mt19937_64& r) { return std::vector<Tensor>{random_tensor(r, {3, 3})}; },
                   [rows, cols](const auto& v) { return contract(ad::take(v[0], rows, cols), 24); }});
  cases.push_back({"concat_slice", [](std::mt19937_64& r) { return std::vector<Tensor>{random_tensor(r, {3, 2}), random_tensor(r, {3, 3})}; },
                   [](const auto& v) {
                     std::vector<ad::Var> parts{v[0], v[1]};
                     return contract(ad::slice_cols(ad::concat_cols(parts), 1, 4), 25);
                   }});
  cases.push_back({"pair_linear", [](std::mt19937_64& r) {
                     return std::vector<Tensor>{random_tensor(r, {3, 2}), random_tensor(r, {5, 1}), random_tensor(r, {5, 4}), random_tensor(r, {4})};
                   },
                   [rows, cols](const auto& v) {
                     std::vector<std::size_t> src{0, 0, 1, 2, 2};
                     std::vector<std::size_t> dst{1, 2, 0, 0, 1};
                     return contract(ad::pair_linear(v[0], v[1], src, dst, v[2], v[3]), 26);
                   }});
  cases.push_back({"pair_linear_dst_only", [](std::mt19937_64& r) {
                     return std::vector<Tensor>{random_tensor(r, {3, 2}), random_tensor(r, {5, 1}), random_tensor(r, {3, 4}), random_tensor(r, {4})};
                   },
                   [](const auto& v) {
                     std::vector<std::size_t> dst{1, 2, 0, 0, 1};
                     return contract(ad::pair_linear(v[0], v[1], {}, dst, v[2], v[3]), 27);
                   }});
  return cases;
}

TEST(GradientCheck, EveryOpAgainstFiniteDifferences) {
  for (const auto& op : op_cases()) {
    SCOPED_TRACE(op.name);
    std::mt19937_64 rng(std::hash<std::string>{}(op.name));
    for (int trial = 0; trial < 20; ++trial) {
      auto res = check_gradients(op.fn, op.inputs(rng));
      ASSERT_LE(res.max_rel, kGradTol) << "trial " << trial << " max_abs " << res.max_abs;
    }
  }
}

TEST(PairLinear, MatchesExplicitConcatenation) {
  std::mt19937_64 rng(4);
  Tensor h = random_tensor(rng, {4, 3});
  Tensor dist = random_tensor(rng, {6, 1});
  Tensor w = random_tensor(rng, {7, 5});
  Tensor b = random_tensor(rng, {5});
  std::vector<std::size_t> src{0, 0, 1, 2, 3, 3};
  std::vector<std::size_t> dst{1, 3, 2, 0, 0, 2};
  auto fused = ad::pair_linear(ad::constant(h), ad::constant(dist), src, dst, ad::constant(w), ad::constant(b)).value();
  for (std::size_t e = 0; e < src.size(); ++e) {
    for (std::size_t c = 0; c < 5; ++c) {
      double acc = b[c];
      for (std::size_t k = 0; k < 3; ++k) acc += h(src[e], k) * w(k, c) + h(dst[e], k) * w(3 + k, c);
      acc += dist[e] * w(6, c);
      EXPECT_NEAR(fused(e, c), acc, 1e-12);
    }
  }
}

TEST(Determinism, IdenticalInputsGiveBitIdenticalGradients) {
  auto run = [] {
    std::mt19937_64 rng(1234);
    auto a = ad::parameter(random_tensor(rng, {4, 4}));
    auto loss = ad::sum(ad::softmax(ad::silu(ad::matmul(a, a)), 1));
    ad::backward(ad::mul(loss, loss));
    return std::pair{loss.value(), a.grad()};
  };
  auto [v1, g1] = run();
  auto [v2, g2] = run();
  EXPECT_EQ(v1, v2);
  EXPECT_EQ(g1, g2);
}

}  // namespace
