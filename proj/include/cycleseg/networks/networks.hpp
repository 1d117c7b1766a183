#pragma once

#include <cstdint>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

#include "cycleseg/autodiff/ops.hpp"
#include "cycleseg/core/random.hpp"
#include "cycleseg/nn/layers.hpp"
#include "cycleseg/nn/module.hpp"

namespace cycleseg {

enum class OutputActivation { softmax_per_pixel, tanh_unit };

inline const char* to_string(OutputActivation a) {
  return a == OutputActivation::softmax_per_pixel ? "softmax_per_pixel" : "tanh";
}

/// Encoder-decoder generator configuration: c7s1 stem at base_width, two
/// stride-2 convolutions doubling width, n residual blocks, two stride-1/2
/// (transposed) convolutions back, c7s1 head with the output activation.
struct GeneratorConfig {
  int64_t in_channels = 3;
  int64_t out_channels = 3;
  int64_t n_residual_blocks = 9;
  int64_t base_width = 64;
  OutputActivation output_activation = OutputActivation::tanh_unit;

  void validate() const {
    if (in_channels < 1 || out_channels < 1 || n_residual_blocks < 1 || base_width < 1)
      throw std::invalid_argument("GeneratorConfig: all fields must be positive");
  }
  std::string str() const {
    std::ostringstream os;
    os << "generator in=" << in_channels << " out=" << out_channels
       << " res_blocks=" << n_residual_blocks << " base_width=" << base_width
       << " activation=" << to_string(output_activation);
    return os.str();
  }
};

/// Pixel-wise discriminator: n stride-2 4x4 convolution blocks with widths
/// doubling from base_width and LeakyReLU activations (batch norm after
/// block 2 only), a final 1-channel 3x3 convolution, and bilinear upsampling
/// of the score map back to the input size.
struct DiscriminatorConfig {
  int64_t in_channels = 3;
  int64_t n_conv_blocks = 3;
  double leaky_slope = 0.2;
  int64_t base_width = 64;

  void validate() const {
    if (in_channels < 1 || n_conv_blocks < 1 || base_width < 1)
      throw std::invalid_argument("DiscriminatorConfig: channels/blocks/width must be positive");
    if (leaky_slope < 0 || leaky_slope >= 1)
      throw std::invalid_argument("DiscriminatorConfig: leaky_slope must lie in [0, 1)");
  }
  std::string str() const {
    std::ostringstream os;
    os << "discriminator in=" << in_channels << " conv_blocks=" << n_conv_blocks
       << " leaky_slope=" << leaky_slope << " base_width=" << base_width;
    return os.str();
  }
};

template <typename T>
class Generator : public nn::Module<T> {
 public:
  Generator(const GeneratorConfig& cfg, RandomEngine& rng) : cfg_(cfg) {
    cfg.validate();
    const int64_t w = cfg.base_width;
    body_.template emplace<nn::ReflectPad2d<T>>(3);
    body_.template emplace<nn::Conv2d<T>>(cfg.in_channels, w, 7, 1, 0, rng);
    body_.template emplace<nn::InstanceNorm2d<T>>(w);
    body_.template emplace<nn::ReLU<T>>();
    body_.template emplace<nn::Conv2d<T>>(w, 2 * w, 3, 2, 1, rng);
    body_.template emplace<nn::InstanceNorm2d<T>>(2 * w);
    body_.template emplace<nn::ReLU<T>>();
    body_.template emplace<nn::Conv2d<T>>(2 * w, 4 * w, 3, 2, 1, rng);
    body_.template emplace<nn::InstanceNorm2d<T>>(4 * w);
    body_.template emplace<nn::ReLU<T>>();
    for (int64_t i = 0; i < cfg.n_residual_blocks; ++i)
      body_.template emplace<nn::ResidualBlock<T>>(4 * w, rng);
    body_.template emplace<nn::ConvTranspose2d<T>>(4 * w, 2 * w, 3, 2, 1, 1, rng);
    body_.template emplace<nn::InstanceNorm2d<T>>(2 * w);
    body_.template emplace<nn::ReLU<T>>();
    body_.template emplace<nn::ConvTranspose2d<T>>(2 * w, w, 3, 2, 1, 1, rng);
    body_.template emplace<nn::InstanceNorm2d<T>>(w);
    body_.template emplace<nn::ReLU<T>>();
    body_.template emplace<nn::ReflectPad2d<T>>(3);
    body_.template emplace<nn::Conv2d<T>>(w, cfg.out_channels, 7, 1, 0, rng);
  }

  ad::Var<T> forward(const ad::Var<T>& x, const nn::Ctx& ctx) override {
    const Shape& s = x.shape();
    if (s.rank() != 4)
      throw std::invalid_argument("generator forward: expected [N,C,H,W], got " + s.str());
    if (s[1] != cfg_.in_channels)
      throw std::invalid_argument("generator forward: expected " +
                                  std::to_string(cfg_.in_channels) + " input channels, got " +
                                  std::to_string(s[1]) + " in " + s.str());
    if (s[2] % 4 != 0 || s[3] % 4 != 0)
      throw std::invalid_argument(
          "generator forward: spatial dims must be divisible by 4 (two stride-2 stages), got " +
          s.str());
    ad::Var<T> h = body_.forward(x, ctx);
    return cfg_.output_activation == OutputActivation::softmax_per_pixel
               ? ad::softmax_channels(h)
               : ad::tanh(h);
  }

  void collect_params(nn::NamedParams<T>& out, const std::string& prefix) const override {
    body_.collect_params(out, prefix);
  }
  void collect_buffers(nn::NamedBuffers<T>& out, const std::string& prefix) const override {
    body_.collect_buffers(out, prefix);
  }

  const GeneratorConfig& config() const { return cfg_; }

 private:
  GeneratorConfig cfg_;
  nn::Sequential<T> body_;
};

template <typename T>
class Discriminator : public nn::Module<T> {
 public:
  Discriminator(const DiscriminatorConfig& cfg, RandomEngine& rng) : cfg_(cfg) {
    cfg.validate();
    int64_t in = cfg.in_channels;
    int64_t width = cfg.base_width;
    for (int64_t i = 0; i < cfg.n_conv_blocks; ++i) {
      body_.template emplace<nn::Conv2d<T>>(in, width, 4, 2, 1, rng);
      if (i == 1) body_.template emplace<nn::BatchNorm2d<T>>(width);
      body_.template emplace<nn::LeakyReLU<T>>(cfg.leaky_slope);
      in = width;
      width *= 2;
    }
    body_.template emplace<nn::Conv2d<T>>(in, 1, 3, 1, 1, rng);
  }

  ad::Var<T> forward(const ad::Var<T>& x, const nn::Ctx& ctx) override {
    const Shape& s = x.shape();
    if (s.rank() != 4)
      throw std::invalid_argument("discriminator forward: expected [N,C,H,W], got " + s.str());
    if (s[1] != cfg_.in_channels)
      throw std::invalid_argument("discriminator forward: expected " +
                                  std::to_string(cfg_.in_channels) + " input channels, got " +
                                  std::to_string(s[1]) + " in " + s.str());
    const int64_t min_dim = int64_t(1) << cfg_.n_conv_blocks;
    if (s[2] < min_dim || s[3] < min_dim)
      throw std::invalid_argument("discriminator forward: input " + s.str() +
                                  " too small for " + std::to_string(cfg_.n_conv_blocks) +
                                  " stride-2 blocks");
    ad::Var<T> h = body_.forward(x, ctx);
    // Pixel-wise scores: bring the map back to the input's spatial size.
    return ad::upsample_bilinear(h, s[2], s[3]);
  }

  void collect_params(nn::NamedParams<T>& out, const std::string& prefix) const override {
    body_.collect_params(out, prefix);
  }
  void collect_buffers(nn::NamedBuffers<T>& out, const std::string& prefix) const override {
    body_.collect_buffers(out, prefix);
  }

  const DiscriminatorConfig& config() const { return cfg_; }

 private:
  DiscriminatorConfig cfg_;
  nn::Sequential<T> body_;
};

/// Owning handle around a built network: module, name, config summary, and
/// cached parameter/buffer maps.
template <typename T>
class Network {
 public:
  Network() = default;
  Network(std::string name, std::string config_summary, std::unique_ptr<nn::Module<T>> module)
      : name_(std::move(name)), config_(std::move(config_summary)), module_(std::move(module)) {
    module_->collect_params(params_, "");
    module_->collect_buffers(buffers_, "");
  }

  bool defined() const { return module_ != nullptr; }
  const std::string& name() const { return name_; }
  const std::string& config_summary() const { return config_; }

  ad::Var<T> forward(const ad::Var<T>& x, const nn::Ctx& ctx) {
    return module_->forward(x, ctx);
  }

  const nn::NamedParams<T>& params() const { return params_; }
  const nn::NamedBuffers<T>& buffers() const { return buffers_; }

  int64_t param_count() const {
    int64_t n = 0;
    for (const auto& [name, p] : params_) n += p.value().numel();
    return n;
  }

  void zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
  }

  /// Trainable parameter values, cloned; used for phase-isolation checks and
  /// tests that compare parameters across steps.
  std::vector<Tensor<T>> snapshot_params() const {
    std::vector<Tensor<T>> out;
    out.reserve(params_.size());
    for (const auto& [name, p] : params_) out.push_back(p.value().clone());
    return out;
  }

 private:
  std::string name_;
  std::string config_;
  std::unique_ptr<nn::Module<T>> module_;
  nn::NamedParams<T> params_;
  nn::NamedBuffers<T> buffers_;
};

/// Parameters are drawn from `rng` in declaration order, so a given seed
/// yields one specific network.
template <typename T>
inline Network<T> build_generator(const std::string& name, const GeneratorConfig& cfg,
                                  RandomEngine& rng) {
  cfg.validate();
  return Network<T>(name, cfg.str(), std::make_unique<Generator<T>>(cfg, rng));
}

template <typename T>
inline Network<T> build_discriminator(const std::string& name, const DiscriminatorConfig& cfg,
                                      RandomEngine& rng) {
  cfg.validate();
  return Network<T>(name, cfg.str(), std::make_unique<Discriminator<T>>(cfg, rng));
}

}  // namespace cycleseg
