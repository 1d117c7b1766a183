#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "cycleseg/autodiff/ops.hpp"
#include "cycleseg/autodiff/variable.hpp"
#include "cycleseg/core/random.hpp"
#include "cycleseg/core/tensor.hpp"
#include "grad_check.hpp"

using namespace cycleseg;
using ad::Var;
using gradcheck::check_gradients;
using gradcheck::max_rel_err;
using gradcheck::numeric_grad;
using gradcheck::random_tensor;

// ---------------------------------------------------------------------------
// Graph mechanics
// ---------------------------------------------------------------------------

TEST(GraphTest, NoGradGuardRecordsNothing) {
  RandomEngine rng(1);
  auto x = Var<double>::leaf(random_tensor(Shape{4}, rng), true);
  ad::NoGradGuard ng;
  auto y = ad::mean_all(ad::square(x));
  EXPECT_FALSE(y.needs_grad());
  EXPECT_TRUE(y.node()->parents.empty());
}

TEST(GraphTest, DetachBlocksGradient) {
  RandomEngine rng(2);
  auto x = Var<double>::leaf(random_tensor(Shape{4}, rng), true);
  auto y = ad::mean_all(ad::square(x.detach()));
  ad::backward(y);
  EXPECT_FALSE(x.grad().defined());
}

TEST(GraphTest, FrozenLeafGetsNoGradientButInputDoes) {
  RandomEngine rng(3);
  auto x = Var<double>::leaf(random_tensor(Shape{4}, rng), true);
  auto w = Var<double>::leaf(random_tensor(Shape{4}, rng), false);  // frozen
  auto y = ad::mean_all(ad::mul(x, w));
  ad::backward(y);
  EXPECT_TRUE(x.grad().defined());
  EXPECT_FALSE(w.grad().defined());
}

TEST(GraphTest, ReusedLeafAccumulatesAcrossBranches) {
  auto x = Var<double>::leaf(Tensor<double>::from(Shape{1}, {3.0}), true);
  auto y = ad::add(ad::square(x), ad::mul_scalar(x, 5.0));  // x^2 + 5x
  ad::backward(y);
  EXPECT_DOUBLE_EQ(x.grad()[0], 2 * 3.0 + 5.0);
}

TEST(GraphTest, BackwardTwiceOnSeparateGraphsIsBitwiseIdentical) {
  RandomEngine rng(4);
  Tensor<double> t = random_tensor(Shape{2, 3, 8, 8}, rng);
  auto run = [&] {
    auto x = Var<double>::leaf(t, true);
    auto y = ad::mean_all(ad::tanh(ad::mul_scalar(x, 1.7)));
    ad::backward(y);
    return x.grad().clone();
  };
  EXPECT_TRUE(bitwise_equal(run(), run()));
}

// ---------------------------------------------------------------------------
// Elementwise and reduction gradients
// ---------------------------------------------------------------------------

TEST(GradCheckTest, ElementwiseOps) {
  RandomEngine rng(10);
  const Shape s{2, 3, 4};
  check_gradients([](const auto& v) { return ad::mean_all(ad::add(v[0], v[1])); },
                  {random_tensor(s, rng), random_tensor(s, rng)});
  check_gradients([](const auto& v) { return ad::mean_all(ad::sub(v[0], v[1])); },
                  {random_tensor(s, rng), random_tensor(s, rng)});
  check_gradients([](const auto& v) { return ad::mean_all(ad::mul(v[0], v[1])); },
                  {random_tensor(s, rng), random_tensor(s, rng)});
  check_gradients([](const auto& v) { return ad::sum_all(ad::square(v[0])); },
                  {random_tensor(s, rng)});
  check_gradients([](const auto& v) { return ad::mean_all(ad::add_scalar(v[0], 2.5)); },
                  {random_tensor(s, rng)});
  check_gradients([](const auto& v) { return ad::mean_all(ad::mul_scalar(v[0], -1.3)); },
                  {random_tensor(s, rng)});
  check_gradients([](const auto& v) { return ad::mean_all(ad::log(v[0])); },
                  {random_tensor(s, rng, 0.2, 2.0)});
  // abs and leaky_relu away from the kink, clamp strictly inside the window
  check_gradients([](const auto& v) { return ad::mean_all(ad::abs(v[0])); },
                  {random_tensor(s, rng, 0.1, 1.0)});
  check_gradients([](const auto& v) { return ad::mean_all(ad::leaky_relu(v[0], 0.2)); },
                  {random_tensor(s, rng, 0.1, 1.0)});
  check_gradients([](const auto& v) { return ad::mean_all(ad::leaky_relu(v[0], 0.2)); },
                  {random_tensor(s, rng, -1.0, -0.1)});
  check_gradients([](const auto& v) { return ad::mean_all(ad::clamp(v[0], -2.0, 2.0)); },
                  {random_tensor(s, rng)});
  check_gradients([](const auto& v) { return ad::mean_all(ad::tanh(v[0])); },
                  {random_tensor(s, rng, -2.0, 2.0)});
}

TEST(GradCheckTest, ClampBlocksOutsideWindow) {
  auto x = Var<double>::leaf(Tensor<double>::from(Shape{3}, {-5.0, 0.0, 5.0}), true);
  auto y = ad::sum_all(ad::clamp(x, -1.0, 1.0));
  ad::backward(y);
  EXPECT_DOUBLE_EQ(x.grad()[0], 0.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 1.0);
  EXPECT_DOUBLE_EQ(x.grad()[2], 0.0);
}

TEST(GradCheckTest, SoftmaxChannels) {
  RandomEngine rng(11);
  // Weighted sum instead of mean so the softmax gradient is non-trivial.
  Tensor<double> weights = random_tensor(Shape{3, 4, 4}, rng);
  check_gradients(
      [&](const auto& v) {
        auto w = Var<double>::leaf(weights, false);
        return ad::sum_all(ad::mul(ad::softmax_channels(v[0]), w));
      },
      {random_tensor(Shape{3, 4, 4}, rng, -2.0, 2.0)});
}

TEST(SoftmaxTest, ColumnsSumToOne) {
  RandomEngine rng(12);
  auto x = Var<double>::leaf(random_tensor(Shape{2, 5, 4, 4}, rng, -30.0, 30.0));
  auto y = ad::softmax_channels(x);
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t j = 0; j < 16; ++j) {
      double sum = 0;
      for (int64_t c = 0; c < 5; ++c) sum += y.value().data()[(n * 5 + c) * 16 + j];
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

namespace {

/// Direct quadruple-loop convolution used as the oracle.
Tensor<double> conv2d_naive(const Tensor<double>& x, const Tensor<double>& w,
                            const Tensor<double>& b, int64_t stride, int64_t pad) {
  const int64_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], wd = x.shape()[3];
  const int64_t oc = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
  const int64_t oh = (h + 2 * pad - kh) / stride + 1, ow = (wd + 2 * pad - kw) / stride + 1;
  Tensor<double> y(Shape{n, oc, oh, ow});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t o = 0; o < oc; ++o)
      for (int64_t oi = 0; oi < oh; ++oi)
        for (int64_t oj = 0; oj < ow; ++oj) {
          double acc = b.defined() ? b[o] : 0.0;
          for (int64_t ch = 0; ch < c; ++ch)
            for (int64_t ki = 0; ki < kh; ++ki)
              for (int64_t kj = 0; kj < kw; ++kj) {
                const int64_t ii = oi * stride - pad + ki, jj = oj * stride - pad + kj;
                if (ii >= 0 && ii < h && jj >= 0 && jj < wd)
                  acc += x.at(i, ch, ii, jj) * w.at(o, ch, ki, kj);
              }
          y.at(i, o, oi, oj) = acc;
        }
  return y;
}

/// Direct scatter implementation of the transposed convolution.
Tensor<double> conv_transpose2d_naive(const Tensor<double>& x, const Tensor<double>& w,
                                      const Tensor<double>& b, int64_t stride, int64_t pad,
                                      int64_t out_pad) {
  const int64_t n = x.shape()[0], ic = x.shape()[1], ih = x.shape()[2], iw = x.shape()[3];
  const int64_t oc = w.shape()[1], kh = w.shape()[2], kw = w.shape()[3];
  const int64_t oh = (ih - 1) * stride - 2 * pad + kh + out_pad;
  const int64_t ow = (iw - 1) * stride - 2 * pad + kw + out_pad;
  Tensor<double> y(Shape{n, oc, oh, ow});
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t o = 0; o < oc; ++o)
      for (int64_t j = 0; j < oh * ow; ++j) y.data()[(i * oc + o) * oh * ow + j] = b.defined() ? b[o] : 0.0;
    for (int64_t ch = 0; ch < ic; ++ch)
      for (int64_t ii = 0; ii < ih; ++ii)
        for (int64_t jj = 0; jj < iw; ++jj)
          for (int64_t o = 0; o < oc; ++o)
            for (int64_t ki = 0; ki < kh; ++ki)
              for (int64_t kj = 0; kj < kw; ++kj) {
                const int64_t oi = ii * stride - pad + ki, oj = jj * stride - pad + kj;
                if (oi >= 0 && oi < oh && oj >= 0 && oj < ow)
                  y.at(i, o, oi, oj) += x.at(i, ch, ii, jj) * w.at(ch, o, ki, kj);
              }
  }
  return y;
}

}  // namespace

TEST(ConvTest, ForwardMatchesNaive) {
  RandomEngine rng(20);
  for (auto [stride, pad, k] : {std::tuple{1, 0, 3}, {2, 1, 3}, {2, 1, 4}, {1, 3, 7}}) {
    Tensor<double> x = random_tensor(Shape{2, 3, 8, 8}, rng);
    Tensor<double> w = random_tensor(Shape{4, 3, k, k}, rng);
    Tensor<double> b = random_tensor(Shape{4}, rng);
    auto y = ad::conv2d(Var<double>::leaf(x), Var<double>::leaf(w), Var<double>::leaf(b), stride,
                        pad);
    Tensor<double> ref = conv2d_naive(x, w, b, stride, pad);
    ASSERT_EQ(y.shape(), ref.shape()) << "stride " << stride << " pad " << pad;
    EXPECT_LT(max_abs_diff(y.value(), ref), 1e-12);
  }
}

TEST(ConvTest, GradCheck) {
  RandomEngine rng(21);
  check_gradients(
      [](const auto& v) {
        return ad::mean_all(ad::square(ad::conv2d(v[0], v[1], v[2], 2, 1)));
      },
      {random_tensor(Shape{2, 3, 6, 6}, rng), random_tensor(Shape{2, 3, 4, 4}, rng),
       random_tensor(Shape{2}, rng)},
      1e-5);
}

TEST(ConvTransposeTest, ForwardMatchesNaive) {
  RandomEngine rng(22);
  for (auto [stride, pad, out_pad, k] : {std::tuple{2, 1, 1, 3}, {2, 0, 0, 4}, {1, 0, 0, 3}}) {
    Tensor<double> x = random_tensor(Shape{2, 3, 5, 6}, rng);
    Tensor<double> w = random_tensor(Shape{3, 4, k, k}, rng);
    Tensor<double> b = random_tensor(Shape{4}, rng);
    auto y = ad::conv_transpose2d(Var<double>::leaf(x), Var<double>::leaf(w),
                                  Var<double>::leaf(b), stride, pad, out_pad);
    Tensor<double> ref = conv_transpose2d_naive(x, w, b, stride, pad, out_pad);
    ASSERT_EQ(y.shape(), ref.shape());
    EXPECT_LT(max_abs_diff(y.value(), ref), 1e-12);
  }
}

TEST(ConvTransposeTest, RestoresDownsampledDims) {
  // Stride-2 conv halves 64 -> 32; the stride-2 transposed conv with
  // out_pad 1 must map 32 back to exactly 64.
  RandomEngine rng(23);
  Tensor<double> x = random_tensor(Shape{1, 2, 32, 32}, rng);
  Tensor<double> w = random_tensor(Shape{2, 2, 3, 3}, rng);
  auto y = ad::conv_transpose2d(Var<double>::leaf(x), Var<double>::leaf(w), Var<double>(), 2, 1,
                                1);
  EXPECT_EQ(y.shape(), (Shape{1, 2, 64, 64}));
}

TEST(ConvTransposeTest, GradCheck) {
  RandomEngine rng(24);
  check_gradients(
      [](const auto& v) {
        return ad::mean_all(ad::square(ad::conv_transpose2d(v[0], v[1], v[2], 2, 1, 1)));
      },
      {random_tensor(Shape{2, 3, 4, 4}, rng), random_tensor(Shape{3, 2, 3, 3}, rng),
       random_tensor(Shape{2}, rng)},
      1e-5);
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

TEST(InstanceNormTest, NormalizesPerSamplePerChannel) {
  RandomEngine rng(30);
  Tensor<double> x = random_tensor(Shape{2, 3, 4, 4}, rng, -3.0, 5.0);
  auto gamma = Var<double>::leaf(Tensor<double>::full(Shape{3}, 1.0));
  auto beta = Var<double>::leaf(Tensor<double>(Shape{3}));
  auto y = ad::instance_norm(Var<double>::leaf(x), gamma, beta);
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t c = 0; c < 3; ++c) {
      double mean = 0, var = 0;
      for (int64_t j = 0; j < 16; ++j) mean += y.value().data()[(n * 3 + c) * 16 + j];
      mean /= 16;
      for (int64_t j = 0; j < 16; ++j) {
        const double d = y.value().data()[(n * 3 + c) * 16 + j] - mean;
        var += d * d;
      }
      var /= 16;
      EXPECT_NEAR(mean, 0.0, 1e-10);
      EXPECT_NEAR(var, 1.0, 1e-4);  // eps shrinks variance slightly
    }
}

TEST(InstanceNormTest, GradCheck) {
  RandomEngine rng(31);
  check_gradients(
      [](const auto& v) {
        return ad::mean_all(ad::square(ad::instance_norm(v[0], v[1], v[2])));
      },
      {random_tensor(Shape{2, 2, 4, 4}, rng), random_tensor(Shape{2}, rng, 0.5, 1.5),
       random_tensor(Shape{2}, rng)},
      1e-5);
}

TEST(BatchNormTest, TrainingUpdatesRunningStats) {
  RandomEngine rng(32);
  Tensor<double> x = random_tensor(Shape{4, 2, 3, 3}, rng, 1.0, 3.0);
  Tensor<double> rm(Shape{2});
  Tensor<double> rv = Tensor<double>::full(Shape{2}, 1.0);
  auto gamma = Var<double>::leaf(Tensor<double>::full(Shape{2}, 1.0));
  auto beta = Var<double>::leaf(Tensor<double>(Shape{2}));
  ad::batch_norm(Var<double>::leaf(x), gamma, beta, rm, rv, /*training=*/true, 0.1);
  for (int64_t c = 0; c < 2; ++c) {
    double mean = 0;
    int64_t m = 0;
    for (int64_t n = 0; n < 4; ++n)
      for (int64_t j = 0; j < 9; ++j, ++m) mean += x.data()[(n * 2 + c) * 9 + j];
    mean /= static_cast<double>(m);
    EXPECT_NEAR(rm[c], 0.1 * mean, 1e-12);  // started at zero
    EXPECT_GT(rv[c], 0.0);
  }
}

TEST(BatchNormTest, EvalUsesRunningStatsWithoutSideEffects) {
  RandomEngine rng(33);
  Tensor<double> x = random_tensor(Shape{2, 2, 3, 3}, rng);
  Tensor<double> rm = Tensor<double>::from(Shape{2}, {0.3, -0.2});
  Tensor<double> rv = Tensor<double>::from(Shape{2}, {1.5, 0.7});
  Tensor<double> rm0 = rm.clone(), rv0 = rv.clone();
  auto gamma = Var<double>::leaf(Tensor<double>::from(Shape{2}, {1.1, 0.9}));
  auto beta = Var<double>::leaf(Tensor<double>::from(Shape{2}, {0.1, -0.1}));
  auto y = ad::batch_norm(Var<double>::leaf(x), gamma, beta, rm, rv, /*training=*/false);
  EXPECT_TRUE(bitwise_equal(rm, rm0));
  EXPECT_TRUE(bitwise_equal(rv, rv0));
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t c = 0; c < 2; ++c)
      for (int64_t j = 0; j < 9; ++j) {
        const double xh = (x.data()[(n * 2 + c) * 9 + j] - rm0[c]) / std::sqrt(rv0[c] + 1e-5);
        const double expect = gamma.value()[c] * xh + beta.value()[c];
        EXPECT_NEAR(y.value().data()[(n * 2 + c) * 9 + j], expect, 1e-12);
      }
}

TEST(BatchNormTest, GradCheckTrainingMode) {
  RandomEngine rng(34);
  Tensor<double> rm(Shape{2}), rv = Tensor<double>::full(Shape{2}, 1.0);
  check_gradients(
      [&](const auto& v) {
        Tensor<double> m = rm.clone(), vv = rv.clone();  // keep the probe side-effect free
        return ad::mean_all(ad::square(ad::batch_norm(v[0], v[1], v[2], m, vv, true)));
      },
      {random_tensor(Shape{3, 2, 4, 4}, rng), random_tensor(Shape{2}, rng, 0.5, 1.5),
       random_tensor(Shape{2}, rng)},
      1e-5);
}

TEST(BatchNormTest, GradCheckEvalMode) {
  RandomEngine rng(35);
  Tensor<double> rm = Tensor<double>::from(Shape{2}, {0.2, -0.4});
  Tensor<double> rv = Tensor<double>::from(Shape{2}, {1.2, 0.8});
  check_gradients(
      [&](const auto& v) {
        return ad::mean_all(ad::square(ad::batch_norm(v[0], v[1], v[2], rm, rv, false)));
      },
      {random_tensor(Shape{2, 2, 3, 3}, rng), random_tensor(Shape{2}, rng, 0.5, 1.5),
       random_tensor(Shape{2}, rng)},
      1e-5);
}

// ---------------------------------------------------------------------------
// Padding and resampling
// ---------------------------------------------------------------------------

TEST(PadReflectTest, MirrorsWithoutRepeatingBorder) {
  Tensor<double> x = Tensor<double>::from(Shape{1, 1, 1, 4}, {0.0, 1.0, 2.0, 3.0});
  // Reflection with pad 2 along a length-4 row: 2 1 | 0 1 2 3 | 2 1.
  auto y = ad::pad_reflect(Var<double>::leaf(x.reshaped(Shape{1, 1, 4, 1})), 0);
  (void)y;  // pad 0 is legal and a no-op
  auto z = ad::pad_reflect(Var<double>::leaf(x), 0);
  EXPECT_TRUE(bitwise_equal(z.value(), x));

  Tensor<double> row = Tensor<double>::from(Shape{1, 1, 3, 4},
                                            {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11});
  auto p = ad::pad_reflect(Var<double>::leaf(row), 2);
  EXPECT_EQ(p.shape(), (Shape{1, 1, 7, 8}));
  // Row order after pad 2: rows 2 1 | 0 1 2 | 1 0; first padded row equals row 2.
  EXPECT_DOUBLE_EQ(p.value().at(0, 0, 0, 2), row.at(0, 0, 2, 0));
  // Column reflection inside an original row: out column 0 equals column 2.
  EXPECT_DOUBLE_EQ(p.value().at(0, 0, 2, 0), row.at(0, 0, 0, 2));
  EXPECT_DOUBLE_EQ(p.value().at(0, 0, 2, 1), row.at(0, 0, 0, 1));
}

TEST(PadReflectTest, GradCheck) {
  RandomEngine rng(40);
  check_gradients(
      [](const auto& v) { return ad::mean_all(ad::square(ad::pad_reflect(v[0], 2))); },
      {random_tensor(Shape{1, 2, 5, 5}, rng)}, 1e-5);
}

TEST(UpsampleTest, IdentityWhenSizesMatch) {
  RandomEngine rng(41);
  Tensor<double> x = random_tensor(Shape{1, 3, 6, 6}, rng);
  auto y = ad::upsample_bilinear(Var<double>::leaf(x), 6, 6);
  EXPECT_LT(max_abs_diff(y.value(), x), 1e-12);
}

TEST(UpsampleTest, DoublingInterpolatesMidpoints) {
  Tensor<double> x = Tensor<double>::from(Shape{1, 1, 1, 2}, {0.0, 1.0});
  auto y = ad::upsample_bilinear(Var<double>::leaf(x), 1, 4);
  // Half-pixel centers map to src -0.25, 0.25, 0.75, 1.25 -> clamped lerp.
  EXPECT_NEAR(y.value()[0], 0.0, 1e-12);
  EXPECT_NEAR(y.value()[1], 0.25, 1e-12);
  EXPECT_NEAR(y.value()[2], 0.75, 1e-12);
  EXPECT_NEAR(y.value()[3], 1.0, 1e-12);
}

TEST(UpsampleTest, GradCheck) {
  RandomEngine rng(42);
  check_gradients(
      [](const auto& v) {
        return ad::mean_all(ad::square(ad::upsample_bilinear(v[0], 7, 9)));
      },
      {random_tensor(Shape{1, 2, 3, 4}, rng)}, 1e-5);
}

// ---------------------------------------------------------------------------
// Composite sanity: a small conv stack end to end
// ---------------------------------------------------------------------------

TEST(CompositeTest, ConvNormActStackGradCheck) {
  RandomEngine rng(50);
  check_gradients(
      [](const auto& v) {
        auto h = ad::conv2d(v[0], v[1], v[2], 2, 1);
        h = ad::instance_norm(h, v[3], v[4]);
        h = ad::leaky_relu(h, 0.2);
        return ad::mean_all(ad::square(h));
      },
      {random_tensor(Shape{1, 2, 8, 8}, rng), random_tensor(Shape{3, 2, 4, 4}, rng),
       random_tensor(Shape{3}, rng), random_tensor(Shape{3}, rng, 0.5, 1.5),
       random_tensor(Shape{3}, rng)},
      1e-4);
}
