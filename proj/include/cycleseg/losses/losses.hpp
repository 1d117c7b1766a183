#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "cycleseg/autodiff/ops.hpp"
#include "cycleseg/core/hyperparams.hpp"
#include "cycleseg/core/types.hpp"
#include "cycleseg/networks/networks.hpp"

namespace cycleseg {

// Probabilities are clamped to [kLogClampFloor, 1] before any log so
// cross-entropy stays finite on saturated softmax outputs.
inline constexpr double kLogClampFloor = 1e-7;

// Scalar summary of one training step.  total_G is the lambda-weighted
// generator objective; total_D is the sum of both discriminator losses.
struct LossReport {
  double seg_ce = 0;
  double img_l2 = 0;
  double cycle_labels = 0;
  double cycle_image = 0;
  double disc_labels = 0;
  double disc_image = 0;
  double adv_gen_labels = 0;
  double adv_gen_image = 0;
  double total_G = 0;
  double total_D = 0;

  bool all_finite() const {
    for (double v : {seg_ce, img_l2, cycle_labels, cycle_image, disc_labels, disc_image,
                     adv_gen_labels, adv_gen_image, total_G, total_D}) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }
};

// ---------------------------------------------------------------------------
// Differentiable primitives on free tensors.
//
// These carry the actual math; the network-level functions below only wire
// network outputs into them.  `target` rows may be all-zero to exclude pixels
// (void labels); `valid_pixels` is the count the sum is normalized by.
// ---------------------------------------------------------------------------

template <typename T>
ad::Var<T> masked_ce_mean(const ad::Var<T>& probs, const Tensor<T>& target,
                          int64_t valid_pixels) {
  if (!(probs.shape() == target.shape())) {
    throw std::invalid_argument("cross_entropy: prediction shape " + probs.shape().str() +
                                " does not match target shape " + target.shape().str());
  }
  if (valid_pixels <= 0) return ad::Var<T>::leaf(Tensor<T>::full(Shape{1}, T(0)));
  auto y = ad::Var<T>::leaf(target);
  auto logp = ad::log(ad::clamp(probs, static_cast<T>(kLogClampFloor), T(1)));
  return ad::mul_scalar(ad::sum_all(ad::mul(y, logp)), -T(1) / static_cast<T>(valid_pixels));
}

template <typename T>
ad::Var<T> ce_mean(const ad::Var<T>& probs, const Tensor<T>& target) {
  const auto& s = probs.shape();
  const int64_t pixels = probs.value().numel() / (s.rank() == 4 ? s[1] : s[0]);
  return masked_ce_mean(probs, target, pixels);
}

template <typename T>
ad::Var<T> mse_mean(const ad::Var<T>& pred, const Tensor<T>& target) {
  return ad::mean_all(ad::square(ad::sub(pred, ad::Var<T>::leaf(target))));
}

template <typename T>
ad::Var<T> mae_mean(const ad::Var<T>& pred, const Tensor<T>& target) {
  return ad::mean_all(ad::abs(ad::sub(pred, ad::Var<T>::leaf(target))));
}

// Least-squares GAN objectives: the discriminator drives real scores to 1 and
// fake scores to 0; the generator drives the discriminator's fake scores to 1.
template <typename T>
ad::Var<T> lsgan_disc_term(const ad::Var<T>& real_scores, const ad::Var<T>& fake_scores) {
  auto real = ad::mean_all(ad::square(ad::add_scalar(real_scores, T(-1))));
  auto fake = ad::mean_all(ad::square(fake_scores));
  return ad::add(real, fake);
}

template <typename T>
ad::Var<T> lsgan_gen_term(const ad::Var<T>& fake_scores) {
  return ad::mean_all(ad::square(ad::add_scalar(fake_scores, T(-1))));
}

// ---------------------------------------------------------------------------
// Plain scalar cross-entropy on core mask types (reporting / oracles).
// ---------------------------------------------------------------------------

inline double cross_entropy(const OneHotMask& y, const ProbMap& p) {
  if (!(y.data.shape() == p.data.shape())) {
    throw std::invalid_argument("cross_entropy: one-hot shape " + y.data.shape().str() +
                                " does not match probability shape " + p.data.shape().str());
  }
  const int64_t pixels = p.height() * p.width();
  double sum = 0;
  for (int64_t i = 0; i < p.data.numel(); ++i) {
    if (y.data[i] != 0.0f) {
      const double q = std::min(std::max(static_cast<double>(p.data[i]), kLogClampFloor), 1.0);
      sum -= static_cast<double>(y.data[i]) * std::log(q);
    }
  }
  return sum / static_cast<double>(pixels);
}

// ---------------------------------------------------------------------------
// Network-level loss terms.
//
// Batches are packed tensors: images [N,C,H,W], one-hot masks [N,K,H,W].
// `ce_target` may zero out void pixels; `onehot_input` (what G_SI and D_S
// consume) keeps them on the background channel.  For datasets without a void
// label the two tensors are identical and valid_pixels == N*H*W.
// ---------------------------------------------------------------------------

namespace detail {
template <typename T>
inline void require_batch(const Tensor<T>& t, const char* what) {
  if (!t.defined() || t.shape().rank() != 4 || t.shape()[0] == 0) {
    throw std::invalid_argument(std::string(what) + ": expected a nonempty [N,C,H,W] batch" +
                                (t.defined() ? ", got " + t.shape().str() : ""));
  }
}
}  // namespace detail

template <typename T>
ad::Var<T> loss_seg_supervised(Network<T>& g_is, const Tensor<T>& images,
                               const Tensor<T>& ce_target, int64_t valid_pixels,
                               nn::Ctx ctx = nn::kTrain) {
  detail::require_batch(images, "loss_seg_supervised");
  return masked_ce_mean(g_is.forward(ad::Var<T>::leaf(images), ctx), ce_target, valid_pixels);
}

template <typename T>
ad::Var<T> loss_img_supervised(Network<T>& g_si, const Tensor<T>& onehot_input,
                               const Tensor<T>& images, nn::Ctx ctx = nn::kTrain) {
  detail::require_batch(onehot_input, "loss_img_supervised");
  return mse_mean(g_si.forward(ad::Var<T>::leaf(onehot_input), ctx), images);
}

// Discriminator updates: both generator outputs enter as plain tensors, so no
// gradient can reach the generators from these terms.
template <typename T>
ad::Var<T> loss_disc_labels(Network<T>& d_s, const Tensor<T>& real_onehot,
                            const Tensor<T>& fake_probs, nn::Ctx ctx = nn::kTrain) {
  detail::require_batch(real_onehot, "loss_disc_labels");
  detail::require_batch(fake_probs, "loss_disc_labels");
  auto real = d_s.forward(ad::Var<T>::leaf(real_onehot), ctx);
  auto fake = d_s.forward(ad::Var<T>::leaf(fake_probs), ctx);
  return lsgan_disc_term(real, fake);
}

template <typename T>
ad::Var<T> loss_disc_image(Network<T>& d_i, const Tensor<T>& real_images,
                           const Tensor<T>& fake_images, nn::Ctx ctx = nn::kTrain) {
  detail::require_batch(real_images, "loss_disc_image");
  detail::require_batch(fake_images, "loss_disc_image");
  auto real = d_i.forward(ad::Var<T>::leaf(real_images), ctx);
  auto fake = d_i.forward(ad::Var<T>::leaf(fake_images), ctx);
  return lsgan_disc_term(real, fake);
}

// Generator-side adversarial term.  The discriminator is always evaluated
// with frozen (detached) parameters here, so backward reaches the generator
// that produced `fake` but never the discriminator.
template <typename T>
ad::Var<T> loss_adv_generator(Network<T>& d, const ad::Var<T>& fake, nn::Ctx ctx = nn::kTrain) {
  ctx.frozen = true;
  return lsgan_gen_term(d.forward(fake, ctx));
}

template <typename T>
ad::Var<T> loss_cycle_image(Network<T>& g_is, Network<T>& g_si, const Tensor<T>& images,
                            nn::Ctx ctx = nn::kTrain) {
  detail::require_batch(images, "loss_cycle_image");
  auto seg = g_is.forward(ad::Var<T>::leaf(images), ctx);
  return mae_mean(g_si.forward(seg, ctx), images);
}

template <typename T>
ad::Var<T> loss_cycle_labels(Network<T>& g_is, Network<T>& g_si, const Tensor<T>& onehot_input,
                             const Tensor<T>& ce_target, int64_t valid_pixels,
                             nn::Ctx ctx = nn::kTrain) {
  detail::require_batch(onehot_input, "loss_cycle_labels");
  auto fake_image = g_si.forward(ad::Var<T>::leaf(onehot_input), ctx);
  return masked_ce_mean(g_is.forward(fake_image, ctx), ce_target, valid_pixels);
}

// Lambda-weighted generator objective, as plain arithmetic on reported parts.
inline double total_generator_loss(const LossReport& parts, const HyperParams& h) {
  return parts.seg_ce + h.lambda1 * parts.img_l2 + h.lambda2 * parts.cycle_labels +
         h.lambda3 * parts.cycle_image + h.lambda4 * parts.adv_gen_labels +
         h.lambda5 * parts.adv_gen_image;
}

}  // namespace cycleseg
