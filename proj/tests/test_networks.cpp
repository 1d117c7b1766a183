#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>

#include "cycleseg/core/random.hpp"
#include "cycleseg/networks/checkpoint.hpp"
#include "cycleseg/networks/networks.hpp"

using namespace cycleseg;
using ad::Var;

namespace {

// Small widths keep these structural tests fast; contracts are size-independent.
GeneratorConfig tiny_gen(int64_t in, int64_t out, OutputActivation act) {
  GeneratorConfig cfg;
  cfg.in_channels = in;
  cfg.out_channels = out;
  cfg.n_residual_blocks = 1;
  cfg.base_width = 4;
  cfg.output_activation = act;
  return cfg;
}

DiscriminatorConfig tiny_disc(int64_t in) {
  DiscriminatorConfig cfg;
  cfg.in_channels = in;
  cfg.base_width = 4;
  return cfg;
}

template <typename T>
Tensor<T> random_input(const Shape& s, uint64_t seed, double lo = -1.0, double hi = 1.0) {
  RandomEngine rng(seed);
  Tensor<T> t(s);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

}  // namespace

TEST(GeneratorTest, SoftmaxHeadShapeAndNormalization) {
  RandomEngine rng(1);
  auto net = build_generator<float>("G_IS", tiny_gen(3, 5, OutputActivation::softmax_per_pixel),
                                    rng);
  auto x = Var<float>::leaf(random_input<float>(Shape{1, 3, 64, 64}, 2));
  ad::NoGradGuard ng;
  auto y = net.forward(x, nn::kEval);
  ASSERT_EQ(y.shape(), (Shape{1, 5, 64, 64}));
  for (int64_t j = 0; j < 64 * 64; ++j) {
    double sum = 0;
    for (int64_t c = 0; c < 5; ++c) sum += y.value()[c * 64 * 64 + j];
    ASSERT_NEAR(sum, 1.0, 1e-5);
  }
}

TEST(GeneratorTest, TanhHeadShapeAndRange) {
  RandomEngine rng(3);
  auto net = build_generator<float>("G_SI", tiny_gen(4, 3, OutputActivation::tanh_unit), rng);
  auto x = Var<float>::leaf(random_input<float>(Shape{1, 4, 64, 64}, 4, 0.0, 1.0));
  ad::NoGradGuard ng;
  auto y = net.forward(x, nn::kEval);
  ASSERT_EQ(y.shape(), (Shape{1, 3, 64, 64}));
  for (int64_t i = 0; i < y.value().numel(); ++i) {
    ASSERT_GT(y.value()[i], -1.0f);
    ASSERT_LT(y.value()[i], 1.0f);
  }
}

TEST(GeneratorTest, EvalForwardIsDeterministic) {
  RandomEngine rng(5);
  auto net = build_generator<float>("G_SI", tiny_gen(3, 3, OutputActivation::tanh_unit), rng);
  Tensor<float> x = random_input<float>(Shape{2, 3, 16, 16}, 6);
  ad::NoGradGuard ng;
  auto a = net.forward(Var<float>::leaf(x), nn::kEval);
  auto b = net.forward(Var<float>::leaf(x), nn::kEval);
  EXPECT_TRUE(bitwise_equal(a.value(), b.value()));
}

TEST(GeneratorTest, PreservesSpatialDimsAcrossSizes) {
  RandomEngine rng(7);
  auto net = build_generator<float>("G_IS", tiny_gen(3, 2, OutputActivation::softmax_per_pixel),
                                    rng);
  ad::NoGradGuard ng;
  for (auto [h, w] : {std::pair<int64_t, int64_t>{16, 16}, {32, 16}, {16, 48}, {64, 64}}) {
    auto y = net.forward(Var<float>::leaf(random_input<float>(Shape{1, 3, h, w}, 8)), nn::kEval);
    EXPECT_EQ(y.shape(), (Shape{1, 2, h, w}));
  }
}

TEST(GeneratorTest, RejectsIndivisibleSpatialDims) {
  RandomEngine rng(9);
  auto net = build_generator<float>("G_IS", tiny_gen(3, 2, OutputActivation::softmax_per_pixel),
                                    rng);
  ad::NoGradGuard ng;
  try {
    net.forward(Var<float>::leaf(Tensor<float>(Shape{1, 3, 66, 64})), nn::kEval);
    FAIL() << "expected rejection";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("divisible by 4"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("66"), std::string::npos);
  }
}

TEST(GeneratorTest, RejectsWrongChannelCount) {
  RandomEngine rng(10);
  auto net = build_generator<float>("G_IS", tiny_gen(3, 2, OutputActivation::softmax_per_pixel),
                                    rng);
  ad::NoGradGuard ng;
  try {
    net.forward(Var<float>::leaf(Tensor<float>(Shape{1, 5, 16, 16})), nn::kEval);
    FAIL() << "expected rejection";
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("expected 3"), std::string::npos);
    EXPECT_NE(msg.find("got 5"), std::string::npos);
  }
}

TEST(DiscriminatorTest, OutputDimsEqualInputDims) {
  RandomEngine rng(11);
  auto net = build_discriminator<float>("D_S", tiny_disc(4), rng);
  ad::NoGradGuard ng;
  auto y = net.forward(Var<float>::leaf(random_input<float>(Shape{1, 4, 32, 32}, 12)), nn::kEval);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 32, 32}));

  auto net_img = build_discriminator<float>("D_I", tiny_disc(3), rng);
  auto y2 = net_img.forward(Var<float>::leaf(random_input<float>(Shape{1, 3, 128, 256}, 13)),
                            nn::kEval);
  EXPECT_EQ(y2.shape(), (Shape{1, 1, 128, 256}));
  // Odd sizes are fine too: stride-2 blocks floor, upsampling restores.
  auto y3 = net_img.forward(Var<float>::leaf(random_input<float>(Shape{1, 3, 50, 50}, 14)),
                            nn::kEval);
  EXPECT_EQ(y3.shape(), (Shape{1, 1, 50, 50}));
}

TEST(DiscriminatorTest, BatchEntriesIndependentInEvalMode) {
  RandomEngine rng(15);
  auto net = build_discriminator<float>("D_I", tiny_disc(3), rng);
  Tensor<float> batch = random_input<float>(Shape{3, 3, 16, 16}, 16);
  ad::NoGradGuard ng;
  auto y = net.forward(Var<float>::leaf(batch), nn::kEval);
  for (int64_t n = 0; n < 3; ++n) {
    Tensor<float> single(Shape{1, 3, 16, 16});
    std::memcpy(single.data(), batch.data() + n * 3 * 256, sizeof(float) * 3 * 256);
    auto ys = net.forward(Var<float>::leaf(single), nn::kEval);
    for (int64_t j = 0; j < 256; ++j) ASSERT_EQ(ys.value()[j], y.value()[n * 256 + j]);
  }
}

TEST(NetworkInitTest, GaussianWeightsAffineDefaultsAndSeedDeterminism) {
  RandomEngine rng_a(42), rng_b(42), rng_c(43);
  auto a = build_generator<float>("G", tiny_gen(3, 3, OutputActivation::tanh_unit), rng_a);
  auto b = build_generator<float>("G", tiny_gen(3, 3, OutputActivation::tanh_unit), rng_b);
  auto c = build_generator<float>("G", tiny_gen(3, 3, OutputActivation::tanh_unit), rng_c);

  double sum = 0, sumsq = 0;
  int64_t n = 0;
  for (size_t i = 0; i < a.params().size(); ++i) {
    const auto& [name, p] = a.params()[i];
    EXPECT_TRUE(bitwise_equal(p.value(), b.params()[i].second.value()));
    if (name.ends_with(".weight")) {
      EXPECT_FALSE(bitwise_equal(p.value(), c.params()[i].second.value()));
      for (int64_t j = 0; j < p.value().numel(); ++j) {
        sum += p.value()[j];
        sumsq += static_cast<double>(p.value()[j]) * p.value()[j];
        ++n;
      }
    } else if (name.ends_with(".gamma")) {
      for (int64_t j = 0; j < p.value().numel(); ++j) EXPECT_EQ(p.value()[j], 1.0f);
    } else {  // bias, beta
      for (int64_t j = 0; j < p.value().numel(); ++j) EXPECT_EQ(p.value()[j], 0.0f);
    }
  }
  ASSERT_GT(n, 1000);
  EXPECT_NEAR(sum / n, 0.0, 0.005);
  EXPECT_NEAR(std::sqrt(sumsq / n), 0.02, 0.005);
}

TEST(NetworkGradTest, GeneratorInputGradientMatchesFiniteDifferences) {
  RandomEngine rng(20);
  auto net = build_generator<double>("G_SI", tiny_gen(3, 2, OutputActivation::tanh_unit), rng);
  Tensor<double> x(Shape{1, 3, 8, 8});
  RandomEngine xr(21);
  for (int64_t i = 0; i < x.numel(); ++i) x[i] = xr.uniform(-1.0, 1.0);

  auto leaf = Var<double>::leaf(x, true);
  auto loss = ad::mean_all(net.forward(leaf, nn::kTrain));
  ad::backward(loss);
  Tensor<double> analytic = leaf.grad().clone();

  const double h = 1e-5;
  double worst = 0;
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double saved = x[i];
    ad::NoGradGuard ng;
    x[i] = saved + h;
    const double fp = ad::mean_all(net.forward(Var<double>::leaf(x), nn::kTrain)).item();
    x[i] = saved - h;
    const double fm = ad::mean_all(net.forward(Var<double>::leaf(x), nn::kTrain)).item();
    x[i] = saved;
    const double fd = (fp - fm) / (2 * h);
    worst = std::max(worst,
                     std::abs(analytic[i] - fd) / std::max({1.0, std::abs(analytic[i]),
                                                            std::abs(fd)}));
  }
  EXPECT_LT(worst, 1e-3);
}

TEST(NetworkGradTest, DiscriminatorInputGradientMatchesFiniteDifferences) {
  RandomEngine rng(22);
  auto net = build_discriminator<double>("D_I", tiny_disc(3), rng);
  Tensor<double> x(Shape{1, 3, 8, 8});
  RandomEngine xr(23);
  for (int64_t i = 0; i < x.numel(); ++i) x[i] = xr.uniform(-1.0, 1.0);

  // Eval mode: batch-norm running statistics stay fixed while probing.
  auto leaf = Var<double>::leaf(x, true);
  auto loss = ad::mean_all(ad::square(net.forward(leaf, nn::kEval)));
  ad::backward(loss);
  Tensor<double> analytic = leaf.grad().clone();

  const double h = 1e-5;
  double worst = 0;
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double saved = x[i];
    ad::NoGradGuard ng;
    x[i] = saved + h;
    const double fp = ad::mean_all(ad::square(net.forward(Var<double>::leaf(x), nn::kEval))).item();
    x[i] = saved - h;
    const double fm = ad::mean_all(ad::square(net.forward(Var<double>::leaf(x), nn::kEval))).item();
    x[i] = saved;
    const double fd = (fp - fm) / (2 * h);
    worst = std::max(worst,
                     std::abs(analytic[i] - fd) / std::max({1.0, std::abs(analytic[i]),
                                                            std::abs(fd)}));
  }
  EXPECT_LT(worst, 1e-3);
}

TEST(CheckpointTest, RoundTripRestoresParametersAndForward) {
  RandomEngine rng(30);
  auto net = build_discriminator<float>("D_S", tiny_disc(4), rng);
  Tensor<float> x = random_input<float>(Shape{2, 4, 16, 16}, 31);
  // A training pass perturbs batch-norm buffers so the round trip is
  // non-trivial.
  { auto _ = net.forward(Var<float>::leaf(x), nn::kTrain); }
  ad::NoGradGuard ng;
  Tensor<float> before = net.forward(Var<float>::leaf(x), nn::kEval).value().clone();

  const std::string path = testing::TempDir() + "D_S_epoch7";
  save_network(net, path);

  RandomEngine rng2(99);  // different init; loading must overwrite it
  auto restored = build_discriminator<float>("D_S", tiny_disc(4), rng2);
  load_network(restored, path);
  for (size_t i = 0; i < net.params().size(); ++i)
    ASSERT_TRUE(bitwise_equal(net.params()[i].second.value(),
                              restored.params()[i].second.value()));
  for (size_t i = 0; i < net.buffers().size(); ++i)
    ASSERT_TRUE(bitwise_equal(net.buffers()[i].second, restored.buffers()[i].second));
  Tensor<float> after = restored.forward(Var<float>::leaf(x), nn::kEval).value().clone();
  EXPECT_TRUE(bitwise_equal(before, after));

  std::ifstream manifest(path + ".manifest.txt");
  ASSERT_TRUE(manifest.good());
  std::string text((std::istreambuf_iterator<char>(manifest)),
                   std::istreambuf_iterator<char>());
  EXPECT_NE(text.find("param_count: " + std::to_string(net.param_count())), std::string::npos);
  EXPECT_NE(text.find("D_S"), std::string::npos);
  std::remove(path.c_str());
  std::remove((path + ".manifest.txt").c_str());
}

TEST(CheckpointTest, MismatchedArchitectureIsRejected) {
  RandomEngine rng(32);
  auto net = build_discriminator<float>("D_S", tiny_disc(4), rng);
  const std::string path = testing::TempDir() + "D_S_epoch0";
  save_network(net, path);

  auto wider = build_discriminator<float>("D_S", tiny_disc(5), rng);
  EXPECT_THROW(load_network(wider, path), std::runtime_error);

  Network<float> none;
  EXPECT_THROW(load_network(net, path + ".does_not_exist"), std::runtime_error);
  std::remove(path.c_str());
  std::remove((path + ".manifest.txt").c_str());
}

TEST(NetworkHandleTest, ParamCountMatchesManualSum) {
  RandomEngine rng(33);
  auto net = build_generator<float>("G", tiny_gen(3, 4, OutputActivation::softmax_per_pixel),
                                    rng);
  int64_t total = 0;
  for (const auto& [name, p] : net.params()) total += p.value().numel();
  EXPECT_EQ(net.param_count(), total);
  EXPECT_GT(total, 0);
}
