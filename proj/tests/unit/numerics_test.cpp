#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "cloze/numerics/attention.hpp"
#include "cloze/numerics/grad_check.hpp"
#include "cloze/numerics/ops.hpp"
#include "cloze/numerics/serialize.hpp"

using namespace cloze::numerics;

namespace {

Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor<double>(std::move(shape), std::move(v), true);
}

// Scalar reduction with distinct weights so every output element matters.
Tensor<double> weighted_sum(const Tensor<double>& x) {
  std::vector<double> w(x.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(0.7 * static_cast<double>(i) + 0.3);
  return sum(mul(x, Tensor<double>(x.shape(), w)));
}

void expect_grad_ok(const std::function<Tensor<double>()>& f, std::vector<NamedParam> params) {
  const auto report = grad_check(f, params, {.eps = 1e-5, .tolerance = 1e-4});
  EXPECT_TRUE(report.passed) << report.summary();
}

}  // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  Tensor<double> eye({3, 3}, std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor<double> m({3, 3}, std::vector<double>{1.5, -2, 3, 4, 5, 6, -7, 8, 9.25});
  const auto out = matmul(eye, m);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(out[i], m[i]);
}

TEST(Matmul, HandArithmetic) {
  Tensor<double> a({2, 2}, std::vector<double>{1, 2, 3, 4});
  Tensor<double> b({2, 1}, std::vector<double>{1, 1});
  const auto c = matmul(a, b);
  ASSERT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_EQ(c[0], 3);
  EXPECT_EQ(c[1], 7);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Tensor<double> a({2, 3});
  Tensor<double> b({2, 3});
  try {
    matmul(a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos);
    EXPECT_NE(msg.find("by [2x3]"), std::string::npos);
  }
}

TEST(Matmul, GradientOfSumMatchesFiniteDifferences) {
  std::mt19937_64 rng(1);
  auto a = random_tensor({3, 4}, rng);
  auto b = random_tensor({4, 2}, rng);
  expect_grad_ok([&] { return sum(matmul(a, b)); }, {{"a", a}, {"b", b}});
}

TEST(Softmax, UniformLogits) {
  Tensor<double> x({4}, 0.0);
  const auto y = softmax(x, 0);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(y[i], 0.25);
}

TEST(Softmax, LargeLogitDoesNotOverflow) {
  Tensor<double> x({2}, std::vector<double>{1000, 0});
  const auto y = softmax(x, 0);
  EXPECT_NEAR(y[0], 1.0, 1e-12);
  EXPECT_NEAR(y[1], 0.0, 1e-12);
  EXPECT_TRUE(std::isfinite(y[0]));
}

TEST(Softmax, RandomVectorsSumToOne) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    auto x = random_tensor({5}, rng, 3.0);
    const auto y = softmax(x, 0);
    double total = 0;
    for (double v : y.data()) {
      EXPECT_GE(v, 0.0);
      total += v;
    }
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(Softmax, NonLastAxis) {
  Tensor<double> x({2, 3}, std::vector<double>{1, 2, 3, 1, 2, 3});
  const auto y = softmax(x, 0);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(y.at(0, j), 0.5);
}

TEST(Softmax, NaNPropagates) {
  Tensor<double> x({3}, std::vector<double>{0, std::numeric_limits<double>::quiet_NaN(), 1});
  const auto y = softmax(x, 0);
  for (double v : y.data()) EXPECT_TRUE(std::isnan(v));
}

TEST(Softmax, GradientBothAxes) {
  std::mt19937_64 rng(3);
  auto x = random_tensor({3, 4}, rng);
  expect_grad_ok([&] { return weighted_sum(softmax(x, 1)); }, {{"x", x}});
  expect_grad_ok([&] { return weighted_sum(softmax(x, 0)); }, {{"x", x}});
  expect_grad_ok([&] { return weighted_sum(log_softmax(x)); }, {{"x", x}});
}

TEST(LayerNorm, ConstantVectorMapsToZero) {
  Tensor<double> x({1, 4}, 3.5);
  Tensor<double> g({4}, 1.0), b({4}, 0.0);
  const auto y = layer_norm(x, g, b);
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, TwoPointStandardization) {
  Tensor<double> x({1, 2}, std::vector<double>{1, 3});
  Tensor<double> g({2}, 1.0), b({2}, 0.0);
  const auto y = layer_norm(x, g, b);
  EXPECT_NEAR(y[0], -1.0, 1e-4);
  EXPECT_NEAR(y[1], 1.0, 1e-4);
}

TEST(LayerNorm, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  auto x = random_tensor({3, 6}, rng);
  auto g = random_tensor({6}, rng);
  auto b = random_tensor({6}, rng);
  expect_grad_ok([&] { return weighted_sum(layer_norm(x, g, b)); }, {{"x", x}, {"gain", g}, {"bias", b}});
}

TEST(GradCheck, QuadraticAnalyticForm) {
  Tensor<double> x({2}, std::vector<double>{1, 2}, true);
  const auto report = grad_check([&] { return sum(mul(x, x)); }, std::vector<NamedParam>{{"x", x}});
  EXPECT_TRUE(report.passed);
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
  EXPECT_LT(report.entries[0].max_abs_error, 1e-8);
}

TEST(GradCheck, WrongBackwardRuleIsReported) {
  // y = x * x with the backward rule dropping one of the two product terms.
  Tensor<double> x({3}, std::vector<double>{0.5, -1.0, 2.0}, true);
  auto broken_square = [&] {
    std::vector<double> out(3);
    for (int i = 0; i < 3; ++i) out[i] = x[i] * x[i];
    return make_result<double>({3}, std::move(out), {x}, [](Node<double>& self) {
      auto& g = self.inputs[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * self.inputs[0]->value[i];
    });
  };
  const auto report = grad_check([&] { return sum(broken_square()); }, std::vector<NamedParam>{{"x", x}});
  EXPECT_FALSE(report.passed);
  EXPECT_GT(report.entries[0].max_rel_error, 0.1);
}

TEST(GradCheck, NonFiniteGradientIsHardFailure) {
  Tensor<double> x({1}, std::vector<double>{0.0}, true);
  auto f = [&] {
    std::vector<double> out{std::sqrt(std::abs(x[0]))};
    return make_result<double>({1}, std::move(out), {x}, [](Node<double>& self) {
      self.inputs[0]->ensure_grad()[0] += std::numeric_limits<double>::infinity();
    });
  };
  EXPECT_THROW(grad_check(f, std::vector<NamedParam>{{"model.x", x}}), GradCheckError);
}

TEST(Elementwise, Relu) {
  Tensor<double> x({3}, std::vector<double>{-1, 0, 2});
  const auto y = relu(x);
  EXPECT_EQ(y[0], 0);
  EXPECT_EQ(y[1], 0);
  EXPECT_EQ(y[2], 2);
}

TEST(Elementwise, GradientsOfDifferentiableOps) {
  std::mt19937_64 rng(11);
  auto a = random_tensor({2, 3}, rng);
  auto b = random_tensor({2, 3}, rng);
  auto w = random_tensor({3, 4}, rng);
  auto bias = random_tensor({4}, rng);
  std::vector<NamedParam> ab{{"a", a}, {"b", b}};
  expect_grad_ok([&] { return weighted_sum(add(a, b)); }, ab);
  expect_grad_ok([&] { return weighted_sum(sub(a, b)); }, ab);
  expect_grad_ok([&] { return weighted_sum(mul(a, b)); }, ab);
  expect_grad_ok([&] { return weighted_sum(sigmoid(a)); }, ab);
  expect_grad_ok([&] { return weighted_sum(tanh(a)); }, ab);
  expect_grad_ok([&] { return weighted_sum(scale(add_scalar(a, 0.5), -3.0)); }, ab);
  expect_grad_ok([&] { return weighted_sum(transpose(a)); }, ab);
  expect_grad_ok([&] { return weighted_sum(reshape(a, {3, 2})); }, ab);
  expect_grad_ok([&] { return weighted_sum(concat({a, b}, 0)); }, ab);
  expect_grad_ok([&] { return weighted_sum(concat({a, b}, 1)); }, ab);
  expect_grad_ok(
      [&] {
        const std::size_t sizes[] = {1, 2};
        auto parts = split(a, sizes, 1);
        return add(weighted_sum(parts[1]), scale(sum(parts[0]), 2.0));
      },
      ab);
  expect_grad_ok([&] { return mean(mul(a, a)); }, ab);
  expect_grad_ok([&] { return weighted_sum(linear(a, w, bias)); }, {{"a", a}, {"w", w}, {"bias", bias}});
  expect_grad_ok([&] { return weighted_sum(linear(a, w, Tensor<double>())); }, {{"a", a}, {"w", w}});
}

TEST(Elementwise, ReluGradientAwayFromKink) {
  Tensor<double> x({4}, std::vector<double>{-1.5, -0.2, 0.3, 2.0}, true);
  expect_grad_ok([&] { return weighted_sum(relu(x)); }, {{"x", x}});
}

TEST(Elementwise, GatherEmbeddingAndLosses) {
  std::mt19937_64 rng(13);
  auto table = random_tensor({5, 3}, rng);
  const std::size_t ids[] = {4, 0, 4, 2};
  expect_grad_ok([&] { return weighted_sum(embedding(table, std::span<const std::size_t>(ids))); }, {{"t", table}});
  const std::ptrdiff_t rows[] = {-1, 3, 3, 0, -1};
  expect_grad_ok([&] { return weighted_sum(gather_rows(table, std::span<const std::ptrdiff_t>(rows))); },
                 {{"t", table}});
  auto logits = random_tensor({3, 4}, rng);
  const std::size_t targets[] = {1, 3, 0};
  const double weights[] = {1.0, 0.0, 0.5};
  expect_grad_ok([&] { return nll_sum(log_softmax(logits), std::span<const std::size_t>(targets), std::span<const double>(weights)); },
                 {{"logits", logits}});
  const double goal[] = {0.1, -0.2, 0.3};
  auto pred = random_tensor({3, 1}, rng);
  expect_grad_ok([&] { return squared_error_sum(pred, std::span<const double>(goal)); }, {{"pred", pred}});
}

TEST(Elementwise, NllRejectsOutOfRangeTarget) {
  Tensor<double> logp({2, 3}, -1.0);
  const std::size_t targets[] = {0, 3};
  const double weights[] = {1, 1};
  EXPECT_THROW(nll_sum(logp, std::span<const std::size_t>(targets), std::span<const double>(weights)), std::out_of_range);
}

TEST(Elementwise, ShapeMismatchIsDimensionError) {
  Tensor<double> a({2, 3}), b({3, 2});
  EXPECT_THROW(add(a, b), DimensionError);
  EXPECT_THROW(mul(a, b), DimensionError);
  EXPECT_THROW(concat({a, b}, 0), DimensionError);
}

TEST(Dropout, ZeroRateIsIdentity) {
  std::mt19937_64 rng(17);
  auto x = random_tensor({4, 4}, rng);
  ForwardContext ctx{.train = true, .seed = 3};
  const auto y = dropout(x, 0.0, ctx);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Dropout, EvalModeIsIdentity) {
  std::mt19937_64 rng(17);
  auto x = random_tensor({4, 4}, rng);
  ForwardContext ctx{.train = false, .seed = 3};
  const auto y = dropout(x, 0.5, ctx);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Dropout, FixedSeedIsBitReproducible) {
  Tensor<float> x({64, 8}, 1.0f);
  ForwardContext c1{.train = true, .seed = 42, .step = 9};
  ForwardContext c2{.train = true, .seed = 42, .step = 9};
  const auto y1 = dropout(x, 0.5f, c1);
  const auto y2 = dropout(x, 0.5f, c2);
  std::size_t kept = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_EQ(y1[i], y2[i]);
    EXPECT_TRUE(y1[i] == 0.0f || y1[i] == 2.0f);
    kept += y1[i] != 0.0f;
  }
  EXPECT_GT(kept, 180u);
  EXPECT_LT(kept, 332u);
  ForwardContext c3{.train = true, .seed = 42, .step = 10};
  const auto y3 = dropout(x, 0.5f, c3);
  bool differs = false;
  for (std::size_t i = 0; i < x.size(); ++i) differs = differs || y3[i] != y1[i];
  EXPECT_TRUE(differs);
}

TEST(ConvMaxPool, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(19);
  auto x = random_tensor({2 * 5, 3}, rng);
  auto w = random_tensor({2 * 3, 4}, rng);
  auto b = random_tensor({4}, rng);
  expect_grad_ok([&] { return weighted_sum(conv1d_maxpool(x, w, b, 5, 2)); }, {{"x", x}, {"w", w}, {"b", b}});
}

TEST(ConvMaxPool, WidthOneIsPointwiseMax) {
  Tensor<double> x({3, 1}, std::vector<double>{0.5, 2.0, -1.0});
  Tensor<double> w({1, 1}, std::vector<double>{1.0});
  Tensor<double> b({1}, std::vector<double>{0.25});
  const auto y = conv1d_maxpool(x, w, b, 3, 1);
  EXPECT_DOUBLE_EQ(y[0], 2.25);
}

namespace {

AttentionMask causal_mask(std::size_t batch, std::size_t t) {
  AttentionMask mask(batch, t, t);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j <= i; ++j) mask.set(b, i, j, true);
  return mask;
}

}  // namespace

TEST(Attention, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(23);
  const std::size_t B = 2, T = 4, d = 6;
  auto q = random_tensor({B * T, d}, rng);
  auto k = random_tensor({B * T, d}, rng);
  auto v = random_tensor({B * T, d}, rng);
  const auto mask = causal_mask(B, T);
  expect_grad_ok(
      [&] {
        ForwardContext ctx;
        return weighted_sum(masked_attention(q, k, v, mask, 2, 0.0, ctx));
      },
      {{"q", q}, {"k", k}, {"v", v}});
}

TEST(Attention, GradientWithDropoutMatchesFiniteDifferences) {
  std::mt19937_64 rng(29);
  const std::size_t B = 1, T = 5, d = 4;
  auto q = random_tensor({B * T, d}, rng);
  auto k = random_tensor({B * T, d}, rng);
  auto v = random_tensor({B * T, d}, rng);
  const auto mask = causal_mask(B, T);
  expect_grad_ok(
      [&] {
        ForwardContext ctx{.train = true, .seed = 5, .step = 1};
        return weighted_sum(masked_attention(q, k, v, mask, 1, 0.3, ctx));
      },
      {{"q", q}, {"k", k}, {"v", v}});
}

TEST(Attention, MaskedKeysReceiveExactlyZeroGradient) {
  std::mt19937_64 rng(31);
  const std::size_t T = 5, d = 4;
  auto q = random_tensor({T, d}, rng);
  auto k = random_tensor({T, d}, rng);
  auto v = random_tensor({T, d}, rng);
  AttentionMask mask(1, T, T);
  for (std::size_t i = 0; i < T; ++i) {
    mask.set(0, i, 0, true);
    mask.set(0, i, 2, true);
  }
  ForwardContext ctx;
  backward(weighted_sum(masked_attention(q, k, v, mask, 2, 0.0, ctx)));
  for (std::size_t j : {1u, 3u, 4u}) {
    for (std::size_t c = 0; c < d; ++c) {
      EXPECT_EQ(k.grad()[j * d + c], 0.0);
      EXPECT_EQ(v.grad()[j * d + c], 0.0);
    }
  }
  bool nonzero = false;
  for (std::size_t c = 0; c < d; ++c) nonzero = nonzero || k.grad()[2 * d + c] != 0.0;
  EXPECT_TRUE(nonzero);
}

TEST(Attention, FullyMaskedQueryAttendsOnlyToZeroSlot) {
  Tensor<double> q({2, 2}, 1.0), k({2, 2}, 1.0), v({2, 2}, 5.0);
  AttentionMask mask(1, 2, 2);
  mask.set(0, 1, 0, true);
  ForwardContext ctx;
  const auto out = masked_attention(q, k, v, mask, 1, 0.0, ctx);
  EXPECT_EQ(out[0], 0.0);
  EXPECT_EQ(out[1], 0.0);
  EXPECT_TRUE(std::isfinite(out[2]));
  EXPECT_GT(out[2], 0.0);
}

TEST(Graph, BackwardVisitsEachNodeOnce) {
  Tensor<double> x({2}, std::vector<double>{1, 2}, true);
  auto a = mul(x, x);     // diamond: x feeds a twice
  auto b = add(a, x);
  auto c = add(b, a);
  auto loss = sum(c);
  backward(loss);
  EXPECT_EQ(last_backward_visit_count(), 5u);  // x, a, b, c, loss
  // d/dx (2x^2 + x) = 4x + 1
  EXPECT_DOUBLE_EQ(x.grad()[0], 5.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 9.0);
}

TEST(Graph, OffPathParameterKeepsZeroGradient) {
  Tensor<double> used({2}, 1.0, true), unused({2}, 1.0, true);
  unused.zero_grad();
  auto noise = mul(unused, unused);  // built but not part of the loss
  backward(sum(mul(used, used)));
  for (double g : unused.grad()) EXPECT_EQ(g, 0.0);
  (void)noise;
}

TEST(Graph, NoGradGuardSkipsRecording) {
  Tensor<double> x({2}, 1.0, true);
  NoGradGuard guard;
  auto y = mul(x, x);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Determinism, RepeatedForwardIsBitIdentical) {
  std::mt19937_64 rng(37);
  auto x = random_tensor({4, 8}, rng);
  auto w = random_tensor({8, 8}, rng);
  auto b = random_tensor({8}, rng);
  auto run = [&] {
    ForwardContext ctx{.train = true, .seed = 1};
    return dropout(relu(linear(x, w, b)), 0.2, ctx);
  };
  const auto y1 = run();
  const auto y2 = run();
  for (std::size_t i = 0; i < y1.size(); ++i) EXPECT_EQ(y1[i], y2[i]);
}

TEST(Determinism, MatmulRowIndependentOfOtherRows) {
  std::mt19937_64 rng(41);
  auto a = random_tensor({6, 37}, rng);
  auto b = random_tensor({37, 19}, rng);
  const auto full = matmul(a, b);
  Tensor<double> row({1, 37}, std::vector<double>(a.data().begin() + 2 * 37, a.data().begin() + 3 * 37));
  const auto single = matmul(row, b);
  for (std::size_t j = 0; j < 19; ++j) EXPECT_EQ(single[j], full.at(2, j));
}

TEST(Serialization, RoundTripPreservesBits) {
  std::mt19937_64 rng(43);
  auto x = random_tensor({3, 2, 5}, rng);
  std::stringstream buf;
  write_tensor(buf, x);
  const auto y = read_tensor<double>(buf);
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], x[i]);

  Tensor<float> f({2}, std::vector<float>{1.5f, -0.1f});
  std::stringstream fbuf;
  write_tensor(fbuf, f);
  const std::string bytes = fbuf.str();
  ASSERT_EQ(bytes.size(), 4u + 4 + 4 + 4 + 8 + 2 * 4);
  EXPECT_EQ(bytes.substr(0, 4), "CLTZ");
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 0u);   // f32 tag
  EXPECT_EQ(static_cast<unsigned char>(bytes[12]), 1u);  // rank
  EXPECT_EQ(static_cast<unsigned char>(bytes[16]), 2u);  // extent, little-endian
  const auto g = read_tensor<float>(fbuf);
  EXPECT_EQ(g[1], -0.1f);
}

TEST(Serialization, BadMagicIsRejected) {
  std::stringstream buf("XXXXjunk");
  EXPECT_THROW(read_tensor<float>(buf), SerializationError);
}
