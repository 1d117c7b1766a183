#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>
#include <vector>

#include "cycleseg/core/hyperparams.hpp"
#include "cycleseg/core/random.hpp"
#include "cycleseg/core/shape.hpp"
#include "cycleseg/core/tensor.hpp"
#include "cycleseg/core/types.hpp"

using namespace cycleseg;

// ---------------------------------------------------------------------------
// Shape / Tensor
// ---------------------------------------------------------------------------

TEST(ShapeTest, BasicsAndFormatting) {
  Shape s{3, 8, 8};
  EXPECT_EQ(s.rank(), 3);
  EXPECT_EQ(s.numel(), 192);
  EXPECT_EQ(s.str(), "[3x8x8]");
  EXPECT_TRUE((s == Shape{3, 8, 8}));
  EXPECT_TRUE((s != Shape{3, 8, 9}));
}

TEST(TensorTest, SharedStorageAndClone) {
  Tensor<float> a(Shape{2, 3});
  a[0] = 42.0f;
  Tensor<float> b = a;  // shallow copy
  EXPECT_TRUE(shares_storage(a, b));
  b[0] = 7.0f;
  EXPECT_EQ(a[0], 7.0f);

  Tensor<float> c = a.clone();
  EXPECT_FALSE(shares_storage(a, c));
  c[0] = 1.0f;
  EXPECT_EQ(a[0], 7.0f);

  Tensor<float> v = a.reshaped(Shape{3, 2});
  EXPECT_TRUE(shares_storage(a, v));
  EXPECT_EQ(v.shape(), (Shape{3, 2}));
  EXPECT_THROW(a.reshaped(Shape{4, 2}), std::invalid_argument);
}

TEST(TensorTest, ComparisonHelpers) {
  Tensor<double> a = Tensor<double>::from(Shape{3}, {1.0, 2.0, 3.0});
  Tensor<double> b = Tensor<double>::from(Shape{3}, {1.0, 2.5, 3.0});
  EXPECT_DOUBLE_EQ(max_abs_diff(a, b), 0.5);
  EXPECT_TRUE(bitwise_equal(a, a.clone()));
  EXPECT_FALSE(bitwise_equal(a, b));
  EXPECT_TRUE(a.all_finite());
  b[1] = std::nan("");
  EXPECT_FALSE(b.all_finite());
}

// ---------------------------------------------------------------------------
// one_hot
// ---------------------------------------------------------------------------

TEST(OneHotTest, SinglePixelSelectsChannel) {
  LabelMask m{Tensor<int32_t>::from(Shape{1, 1}, {2})};
  OneHotMask oh = one_hot(m, 3);
  EXPECT_EQ(oh.data.shape(), (Shape{3, 1, 1}));
  EXPECT_EQ(oh.data[0], 0.0f);
  EXPECT_EQ(oh.data[1], 0.0f);
  EXPECT_EQ(oh.data[2], 1.0f);
}

TEST(OneHotTest, AllZeroMask) {
  LabelMask m{Tensor<int32_t>(Shape{4, 4})};
  OneHotMask oh = one_hot(m, 2);
  for (int64_t j = 0; j < 16; ++j) {
    EXPECT_EQ(oh.data[j], 1.0f);
    EXPECT_EQ(oh.data[16 + j], 0.0f);
  }
}

TEST(OneHotTest, MatchesBruteForceLoop) {
  RandomEngine rng(99);
  const int64_t k = 5, h = 4, w = 4;
  LabelMask m{Tensor<int32_t>(Shape{h, w})};
  for (int64_t j = 0; j < h * w; ++j) m.data[j] = static_cast<int32_t>(rng.uniform_int(k));
  OneHotMask oh = one_hot(m, k);
  // Independent per-pixel loop: each (c, i, j) entry checked one by one.
  for (int64_t c = 0; c < k; ++c)
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j) {
        const float expected = m.data.at(i, j) == c ? 1.0f : 0.0f;
        EXPECT_EQ(oh.data.at(c, i, j), expected);
      }
  EXPECT_TRUE(per_pixel_normalized(oh.data, 0.0));
}

TEST(OneHotTest, RejectsOutOfRangeNamingValue) {
  LabelMask m{Tensor<int32_t>::from(Shape{1, 2}, {0, 7})};
  try {
    one_hot(m, 3);
    FAIL() << "expected rejection";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("7"), std::string::npos);
  }
}

// ---------------------------------------------------------------------------
// argmax_labels
// ---------------------------------------------------------------------------

TEST(ArgmaxTest, UniformTieBreaksToLowestIndex) {
  ProbMap p{Tensor<float>::full(Shape{3, 2, 2}, 1.0f / 3.0f)};
  LabelMask m = argmax_labels(p);
  for (int64_t j = 0; j < 4; ++j) EXPECT_EQ(m.data[j], 0);
}

TEST(ArgmaxTest, InvertsOneHot) {
  RandomEngine rng(5);
  LabelMask m{Tensor<int32_t>(Shape{6, 6})};
  for (int64_t j = 0; j < 36; ++j) m.data[j] = static_cast<int32_t>(rng.uniform_int(4));
  OneHotMask oh = one_hot(m, 4);
  LabelMask back = argmax_labels(ProbMap{oh.data});
  EXPECT_TRUE(bitwise_equal(back.data, m.data));
}

TEST(ArgmaxTest, MatchesBruteForceLoop) {
  RandomEngine rng(17);
  const int64_t k = 4, h = 8, w = 8;
  ProbMap p{Tensor<float>(Shape{k, h, w})};
  for (int64_t i = 0; i < p.data.numel(); ++i) p.data[i] = static_cast<float>(rng.uniform());
  LabelMask m = argmax_labels(p);
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j) {
      int32_t best = 0;
      for (int64_t c = 1; c < k; ++c)
        if (p.data.at(c, i, j) > p.data.at(best, i, j)) best = static_cast<int32_t>(c);
      EXPECT_EQ(m.data.at(i, j), best);
    }
}

TEST(ArgmaxTest, OneHotRoundTripIdentityProperty) {
  RandomEngine rng(2024);
  for (int trial = 0; trial < 20; ++trial) {
    const int64_t k = 2 + static_cast<int64_t>(rng.uniform_int(5));
    const int64_t h = 1 + static_cast<int64_t>(rng.uniform_int(9));
    const int64_t w = 1 + static_cast<int64_t>(rng.uniform_int(9));
    LabelMask m{Tensor<int32_t>(Shape{h, w})};
    for (int64_t j = 0; j < h * w; ++j) m.data[j] = static_cast<int32_t>(rng.uniform_int(k));
    LabelMask back = argmax_labels(ProbMap{one_hot(m, k).data});
    ASSERT_TRUE(bitwise_equal(back.data, m.data));
  }
}

// ---------------------------------------------------------------------------
// RandomEngine
// ---------------------------------------------------------------------------

TEST(RandomTest, MixSeedSeparatesStreams) {
  std::set<uint64_t> seen;
  for (uint64_t s = 0; s < 4; ++s)
    for (uint64_t e = 0; e < 4; ++e)
      for (uint64_t t = 0; t < 4; ++t) seen.insert(mix_seed(s, e, t));
  EXPECT_EQ(seen.size(), 64u);
}

TEST(RandomTest, SameSeedSameSequence) {
  RandomEngine a(123), b(123);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(RandomTest, SerializeRoundTripContinuesIdentically) {
  RandomEngine a(7);
  for (int i = 0; i < 37; ++i) a.uniform();
  std::string state = a.serialize();
  RandomEngine b = RandomEngine::deserialize(state);
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(a.next_u64(), b.next_u64());
    EXPECT_DOUBLE_EQ(a.normal(), b.normal());
  }
}

TEST(RandomTest, UniformAndIntBounds) {
  RandomEngine rng(42);
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
    const uint64_t k = rng.uniform_int(7);
    EXPECT_LT(k, 7u);
  }
}

TEST(RandomTest, ShuffleIsPermutation) {
  RandomEngine rng(11);
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[static_cast<size_t>(i)] = i;
  std::vector<int> w = v;
  rng.shuffle(w);
  EXPECT_NE(v, w);  // astronomically unlikely to be identity
  std::set<int> s(w.begin(), w.end());
  EXPECT_EQ(s.size(), 50u);
}

TEST(RandomTest, NormalHasReasonableMoments) {
  RandomEngine rng(3);
  double sum = 0, sumsq = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sumsq += x * x;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.05);
  EXPECT_NEAR(sumsq / n, 1.0, 0.05);
}

// ---------------------------------------------------------------------------
// HyperParams / learning-rate schedule
// ---------------------------------------------------------------------------

TEST(HyperParamsTest, DefaultsValidate) {
  HyperParams hp;
  EXPECT_NO_THROW(hp.validate());
  EXPECT_DOUBLE_EQ(hp.lambda2, 0.05);
  EXPECT_EQ(hp.batch_size, 5);
  EXPECT_EQ(hp.total_epochs, 400);
  EXPECT_EQ(hp.decay_start_epoch, 100);
}

TEST(HyperParamsTest, RejectsBadValues) {
  HyperParams hp;
  hp.lambda3 = -0.1;
  EXPECT_THROW(hp.validate(), std::invalid_argument);
  hp = HyperParams{};
  hp.learning_rate = 0;
  EXPECT_THROW(hp.validate(), std::invalid_argument);
  hp = HyperParams{};
  hp.decay_start_epoch = 500;
  EXPECT_THROW(hp.validate(), std::invalid_argument);
}

TEST(ScheduleTest, ReferencePoints) {
  HyperParams hp;  // defaults: 2e-4, decay at 100, total 400
  EXPECT_DOUBLE_EQ(lr_at(hp, 0), 2e-4);
  EXPECT_DOUBLE_EQ(lr_at(hp, 99), 2e-4);
  EXPECT_DOUBLE_EQ(lr_at(hp, 100), 2e-4);  // continuous at the knee
  EXPECT_DOUBLE_EQ(lr_at(hp, 250), 1e-4);
  EXPECT_DOUBLE_EQ(lr_at(hp, 400), 0.0);
}

TEST(ScheduleTest, NonIncreasing) {
  HyperParams hp;
  double prev = lr_at(hp, 0);
  for (int64_t e = 1; e <= hp.total_epochs; ++e) {
    const double cur = lr_at(hp, e);
    EXPECT_LE(cur, prev + 1e-18);
    prev = cur;
  }
}
