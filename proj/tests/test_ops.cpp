#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "gatevit/ops.hpp"
#include "support.hpp"

using namespace gatevit;
using gatevit::testing::DT;
using gatevit::testing::gradient_error;
using gatevit::testing::probe;
using gatevit::testing::random_tensor;

namespace {

constexpr double kOpTol = 1e-6;

double check(std::function<DT(const std::vector<DT>&)> f, const std::vector<DT>& in, std::uint64_t seed = 7) {
  return gradient_error(probe(std::move(f), seed), in);
}

}  // namespace

TEST(OpsForward, MatmulMatchesTripleLoop) {
  Rng rng(1);
  DT a = random_tensor({2, 3, 4}, rng), b = random_tensor({4, 5}, rng), bb = random_tensor({2, 4, 5}, rng);
  DT shared = nd::matmul(a, b), batched = nd::matmul(a, bb);
  DT bt = random_tensor({2, 5, 4}, rng);
  DT transposed = nd::matmul(a, bt, true);
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 5; ++j) {
        double e1 = 0, e2 = 0, e3 = 0;
        for (std::size_t p = 0; p < 4; ++p) {
          e1 += a[(s * 3 + i) * 4 + p] * b[p * 5 + j];
          e2 += a[(s * 3 + i) * 4 + p] * bb[(s * 4 + p) * 5 + j];
          e3 += a[(s * 3 + i) * 4 + p] * bt[(s * 5 + j) * 4 + p];
        }
        EXPECT_NEAR(shared[(s * 3 + i) * 5 + j], e1, 1e-12);
        EXPECT_NEAR(batched[(s * 3 + i) * 5 + j], e2, 1e-12);
        EXPECT_NEAR(transposed[(s * 3 + i) * 5 + j], e3, 1e-12);
      }
}

TEST(OpsForward, SoftmaxRowsMatchScalarFormula) {
  Rng rng(2);
  DT x = random_tensor({2, 3, 4}, rng, -5, 5);
  DT y = nd::softmax(x, 2);
  for (std::size_t r = 0; r < 6; ++r) {
    double z = 0;
    for (std::size_t j = 0; j < 4; ++j) z += std::exp(x[r * 4 + j]);
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(y[r * 4 + j], std::exp(x[r * 4 + j]) / z, 1e-14);
  }
}

TEST(OpsForward, WeightedSoftmaxWithBinaryWeightsEqualsColumnDeletion) {
  Rng rng(3);
  DT x = random_tensor({2, 3, 5}, rng, -4, 4);
  DT w({2, 5}, std::vector<double>{1, 0, 1, 1, 0, 0, 1, 1, 0, 1});
  DT y = nd::weighted_softmax(x, w);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < 3; ++i) {
      double z = 0;
      for (std::size_t j = 0; j < 5; ++j)
        if (w[b * 5 + j] > 0) z += std::exp(x[(b * 3 + i) * 5 + j]);
      for (std::size_t j = 0; j < 5; ++j) {
        const double expect = w[b * 5 + j] > 0 ? std::exp(x[(b * 3 + i) * 5 + j]) / z : 0.0;
        EXPECT_NEAR(y[(b * 3 + i) * 5 + j], expect, 1e-14);
      }
    }
}

TEST(OpsForward, LayerNormMatchesScalarFormula) {
  Rng rng(4);
  DT x = random_tensor({3, 6}, rng, -2, 2), g = random_tensor({6}, rng), b = random_tensor({6}, rng);
  DT y = nd::layernorm(x, g, b, 1e-6);
  for (std::size_t r = 0; r < 3; ++r) {
    double mu = 0, var = 0;
    for (std::size_t j = 0; j < 6; ++j) mu += x[r * 6 + j] / 6;
    for (std::size_t j = 0; j < 6; ++j) var += (x[r * 6 + j] - mu) * (x[r * 6 + j] - mu) / 6;
    for (std::size_t j = 0; j < 6; ++j)
      EXPECT_NEAR(y[r * 6 + j], (x[r * 6 + j] - mu) / std::sqrt(var + 1e-6) * g[j] + b[j], 1e-12);
  }
}

TEST(OpsForward, GeluIsExactErfForm) {
  DT x({5}, std::vector<double>{-3, -0.5, 0, 0.7, 2.5});
  DT y = nd::gelu(x);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(y[i], 0.5 * x[i] * (1 + std::erf(x[i] / std::sqrt(2.0))), 1e-15);
}

TEST(OpsErrors, ShapeMismatchAndDomain) {
  Rng rng(5);
  DT a = random_tensor({2, 3}, rng), b = random_tensor({4, 2}, rng);
  EXPECT_THROW(nd::matmul(a, b), DimensionError);
  EXPECT_THROW(nd::add(a, random_tensor({2}, rng)), DimensionError);
  EXPECT_THROW(nd::log(DT({2}, std::vector<double>{1.0, 0.0})), DomainError);
  DT nan({1, 2}, std::vector<double>{std::numeric_limits<double>::quiet_NaN(), 0.0});
  EXPECT_THROW(nd::softmax(nan, 1), NumericError);
}

// ---------------------------------------------------------------------------
// central finite differences at 64-bit, every differentiable op

TEST(OpsGradient, Matmul) {
  Rng rng(11);
  EXPECT_LT(check([](auto& v) { return nd::matmul(v[0], v[1]); }, {random_tensor({2, 3, 4}, rng), random_tensor({4, 5}, rng)}),
            kOpTol);
  EXPECT_LT(check([](auto& v) { return nd::matmul(v[0], v[1]); },
                  {random_tensor({2, 3, 4}, rng), random_tensor({2, 4, 5}, rng)}),
            kOpTol);
  EXPECT_LT(check([](auto& v) { return nd::matmul(v[0], v[1], true); },
                  {random_tensor({2, 3, 4}, rng), random_tensor({2, 5, 4}, rng)}),
            kOpTol);
  EXPECT_LT(check([](auto& v) { return nd::matmul(v[0], v[1], true); },
                  {random_tensor({3, 4}, rng), random_tensor({5, 4}, rng)}),
            kOpTol);
}

TEST(OpsGradient, ElementwiseWithBroadcast) {
  Rng rng(12);
  for (int op = 0; op < 3; ++op) {
    auto f = [op](const std::vector<DT>& v) {
      return op == 0 ? nd::add(v[0], v[1]) : op == 1 ? nd::sub(v[0], v[1]) : nd::mul(v[0], v[1]);
    };
    EXPECT_LT(check(f, {random_tensor({2, 3, 4}, rng), random_tensor({2, 3, 4}, rng)}), kOpTol) << op;
    EXPECT_LT(check(f, {random_tensor({2, 3, 4}, rng), random_tensor({3, 4}, rng)}), kOpTol) << op;
    EXPECT_LT(check(f, {random_tensor({2, 3, 4}, rng), random_tensor({}, rng)}), kOpTol) << op;
  }
}

TEST(OpsGradient, AffineScaleAndPrefixScale) {
  Rng rng(13);
  EXPECT_LT(check([](auto& v) { return nd::affine(v[0], 1.7, -0.3); }, {random_tensor({3, 2}, rng)}), kOpTol);
  EXPECT_LT(check([](auto& v) { return nd::scale(v[0], -2.5); }, {random_tensor({4}, rng)}), kOpTol);
  EXPECT_LT(check([](auto& v) { return nd::scale_prefix(v[0], v[1]); },
                  {random_tensor({2, 3, 4}, rng), random_tensor({2}, rng)}),
            kOpTol);
  EXPECT_LT(check([](auto& v) { return nd::scale_prefix(v[0], v[1]); },
                  {random_tensor({2, 3, 4}, rng), random_tensor({2, 3}, rng)}),
            kOpTol);
}

TEST(OpsGradient, UnaryOps) {
  Rng rng(14);
  EXPECT_LT(check([](auto& v) { return nd::sigmoid(v[0]); }, {random_tensor({2, 5}, rng, -4, 4)}), kOpTol);
  EXPECT_LT(check([](auto& v) { return nd::exp(v[0]); }, {random_tensor({2, 5}, rng, -2, 2)}), kOpTol);
  EXPECT_LT(check([](auto& v) { return nd::log(v[0]); }, {random_tensor({2, 5}, rng, 0.2, 3)}), kOpTol);
  EXPECT_LT(check([](auto& v) { return nd::gelu(v[0]); }, {random_tensor({2, 5}, rng, -3, 3)}), kOpTol);
}

TEST(OpsGradient, LayerNorm) {
  Rng rng(15);
  EXPECT_LT(check([](auto& v) { return nd::layernorm(v[0], v[1], v[2], 1e-6); },
                  {random_tensor({2, 3, 6}, rng, -2, 2), random_tensor({6}, rng), random_tensor({6}, rng)}),
            kOpTol);
}

TEST(OpsGradient, SoftmaxBothAxes) {
  Rng rng(16);
  EXPECT_LT(check([](auto& v) { return nd::softmax(v[0], 2); }, {random_tensor({2, 3, 4}, rng, -3, 3)}), kOpTol);
  EXPECT_LT(check([](auto& v) { return nd::softmax(v[0], 1); }, {random_tensor({2, 3, 4}, rng, -3, 3)}), kOpTol);
}

TEST(OpsGradient, WeightedSoftmaxInLogitsAndWeights) {
  Rng rng(17);
  EXPECT_LT(check([](auto& v) { return nd::weighted_softmax(v[0], v[1]); },
                  {random_tensor({2, 3, 5}, rng, -3, 3), random_tensor({2, 5}, rng, 0.1, 1.0)}),
            kOpTol);
}

TEST(OpsGradient, ShapeOps) {
  Rng rng(18);
  EXPECT_LT(check([](auto& v) { return nd::reshape(v[0], {6, 2}); }, {random_tensor({3, 4}, rng)}), kOpTol);
  EXPECT_LT(check([](auto& v) { return nd::slice(v[0], 1, 1, 2); }, {random_tensor({2, 4, 3}, rng)}), kOpTol);
  EXPECT_LT(check([](auto& v) { return nd::concat<double>({v[0], v[1]}, 1); },
                  {random_tensor({2, 1, 3}, rng), random_tensor({2, 4, 3}, rng)}),
            kOpTol);
  EXPECT_LT(check([](auto& v) { return nd::repeat_leading(v[0], 3); }, {random_tensor({2, 3}, rng)}), kOpTol);
  EXPECT_LT(check([](auto& v) { return nd::sum(v[0]); }, {random_tensor({2, 3}, rng)}), kOpTol);
  EXPECT_LT(check([](auto& v) { return nd::mean(v[0]); }, {random_tensor({2, 3}, rng)}), kOpTol);
}

TEST(OpsGradient, StraightThroughForwardsHardAndBackpropagatesToSoft) {
  DT soft({3}, std::vector<double>{0.2, 0.6, 0.9});
  soft.set_requires_grad(true);
  DT hard({3}, std::vector<double>{0, 1, 1});
  nd::Tape<double> tape;
  nd::TapeScope<double> scope(tape);
  DT y = nd::straight_through(hard, soft);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(y[i], hard[i]);
  DT w({3}, std::vector<double>{1, 2, 3});
  DT loss = nd::sum(nd::mul(y, w));
  tape.backward(loss);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(soft.grad()[i], w[i]);
}

TEST(Tape, NoRecordingOutsideScopeOrUnderNoGrad) {
  Rng rng(19);
  DT a = random_tensor({2, 2}, rng);
  DT b = nd::mul(a, a);
  EXPECT_FALSE(b.requires_grad());
  nd::Tape<double> tape;
  nd::TapeScope<double> scope(tape);
  {
    nd::NoGradScope<double> off;
    nd::mul(a, a);
  }
  EXPECT_EQ(tape.size(), 0u);
  nd::mul(a, a);
  EXPECT_EQ(tape.size(), 1u);
}
