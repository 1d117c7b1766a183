#pragma once

#include <cstdint>

#include "cycleseg/autodiff/ops.hpp"
#include "cycleseg/core/random.hpp"
#include "cycleseg/nn/module.hpp"

namespace cycleseg::nn {

namespace detail {

/// Convolution weights start from N(0, 0.02), the DCGAN/CycleGAN convention.
template <typename T>
inline Tensor<T> gaussian_init(const Shape& s, RandomEngine& rng, double stddev = 0.02) {
  Tensor<T> t(s);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.normal(0.0, stddev));
  return t;
}

}  // namespace detail

template <typename T>
class Conv2d : public Module<T> {
 public:
  Conv2d(int64_t in, int64_t out, int64_t kernel, int64_t stride, int64_t pad, RandomEngine& rng)
      : stride_(stride),
        pad_(pad),
        weight_(ad::Var<T>::leaf(detail::gaussian_init<T>(Shape{out, in, kernel, kernel}, rng),
                                 true)),
        bias_(ad::Var<T>::leaf(Tensor<T>(Shape{out}), true)) {}

  ad::Var<T> forward(const ad::Var<T>& x, const Ctx& ctx) override {
    return ad::conv2d(x, use(weight_, ctx), use(bias_, ctx), stride_, pad_);
  }

  void collect_params(NamedParams<T>& out, const std::string& prefix) const override {
    out.emplace_back(prefix + "weight", weight_);
    out.emplace_back(prefix + "bias", bias_);
  }

 private:
  int64_t stride_, pad_;
  ad::Var<T> weight_, bias_;
};

template <typename T>
class ConvTranspose2d : public Module<T> {
 public:
  ConvTranspose2d(int64_t in, int64_t out, int64_t kernel, int64_t stride, int64_t pad,
                  int64_t out_pad, RandomEngine& rng)
      : stride_(stride),
        pad_(pad),
        out_pad_(out_pad),
        weight_(ad::Var<T>::leaf(detail::gaussian_init<T>(Shape{in, out, kernel, kernel}, rng),
                                 true)),
        bias_(ad::Var<T>::leaf(Tensor<T>(Shape{out}), true)) {}

  ad::Var<T> forward(const ad::Var<T>& x, const Ctx& ctx) override {
    return ad::conv_transpose2d(x, use(weight_, ctx), use(bias_, ctx), stride_, pad_, out_pad_);
  }

  void collect_params(NamedParams<T>& out, const std::string& prefix) const override {
    out.emplace_back(prefix + "weight", weight_);
    out.emplace_back(prefix + "bias", bias_);
  }

 private:
  int64_t stride_, pad_, out_pad_;
  ad::Var<T> weight_, bias_;
};

/// Instance normalization with learned affine (gamma starts at 1, beta at 0).
template <typename T>
class InstanceNorm2d : public Module<T> {
 public:
  explicit InstanceNorm2d(int64_t channels)
      : gamma_(ad::Var<T>::leaf(Tensor<T>::full(Shape{channels}, T(1)), true)),
        beta_(ad::Var<T>::leaf(Tensor<T>(Shape{channels}), true)) {}

  ad::Var<T> forward(const ad::Var<T>& x, const Ctx& ctx) override {
    return ad::instance_norm(x, use(gamma_, ctx), use(beta_, ctx));
  }

  void collect_params(NamedParams<T>& out, const std::string& prefix) const override {
    out.emplace_back(prefix + "gamma", gamma_);
    out.emplace_back(prefix + "beta", beta_);
  }

 private:
  ad::Var<T> gamma_, beta_;
};

template <typename T>
class BatchNorm2d : public Module<T> {
 public:
  explicit BatchNorm2d(int64_t channels)
      : gamma_(ad::Var<T>::leaf(Tensor<T>::full(Shape{channels}, T(1)), true)),
        beta_(ad::Var<T>::leaf(Tensor<T>(Shape{channels}), true)),
        running_mean_(Shape{channels}),
        running_var_(Tensor<T>::full(Shape{channels}, T(1))) {}

  ad::Var<T> forward(const ad::Var<T>& x, const Ctx& ctx) override {
    return ad::batch_norm(x, use(gamma_, ctx), use(beta_, ctx), running_mean_, running_var_,
                          ctx.training);
  }

  void collect_params(NamedParams<T>& out, const std::string& prefix) const override {
    out.emplace_back(prefix + "gamma", gamma_);
    out.emplace_back(prefix + "beta", beta_);
  }
  void collect_buffers(NamedBuffers<T>& out, const std::string& prefix) const override {
    out.emplace_back(prefix + "running_mean", running_mean_);
    out.emplace_back(prefix + "running_var", running_var_);
  }

 private:
  ad::Var<T> gamma_, beta_;
  Tensor<T> running_mean_, running_var_;
};

template <typename T>
class ReLU : public Module<T> {
 public:
  ad::Var<T> forward(const ad::Var<T>& x, const Ctx&) override { return ad::relu(x); }
};

template <typename T>
class LeakyReLU : public Module<T> {
 public:
  explicit LeakyReLU(double slope) : slope_(slope) {}
  ad::Var<T> forward(const ad::Var<T>& x, const Ctx&) override {
    return ad::leaky_relu(x, slope_);
  }

 private:
  double slope_;
};

template <typename T>
class ReflectPad2d : public Module<T> {
 public:
  explicit ReflectPad2d(int64_t pad) : pad_(pad) {}
  ad::Var<T> forward(const ad::Var<T>& x, const Ctx&) override {
    return ad::pad_reflect(x, pad_);
  }

 private:
  int64_t pad_;
};

/// Two 3x3 reflect-padded convolutions with instance norm, plus the skip
/// connection; no activation after the sum.
template <typename T>
class ResidualBlock : public Module<T> {
 public:
  ResidualBlock(int64_t channels, RandomEngine& rng) {
    body_.template emplace<ReflectPad2d<T>>(1);
    body_.template emplace<Conv2d<T>>(channels, channels, 3, 1, 0, rng);
    body_.template emplace<InstanceNorm2d<T>>(channels);
    body_.template emplace<ReLU<T>>();
    body_.template emplace<ReflectPad2d<T>>(1);
    body_.template emplace<Conv2d<T>>(channels, channels, 3, 1, 0, rng);
    body_.template emplace<InstanceNorm2d<T>>(channels);
  }

  ad::Var<T> forward(const ad::Var<T>& x, const Ctx& ctx) override {
    return ad::add(x, body_.forward(x, ctx));
  }

  void collect_params(NamedParams<T>& out, const std::string& prefix) const override {
    body_.collect_params(out, prefix);
  }
  void collect_buffers(NamedBuffers<T>& out, const std::string& prefix) const override {
    body_.collect_buffers(out, prefix);
  }

 private:
  Sequential<T> body_;
};

}  // namespace cycleseg::nn
