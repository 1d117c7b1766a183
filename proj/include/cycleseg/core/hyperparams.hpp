#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace cycleseg {

/// All knobs of a training run, with the defaults used throughout: Adam with
/// beta1 = 0.5, learning rate 2e-4 held for 100 epochs then decayed linearly
/// to zero over the remaining 300, batches of 5, and loss weights
/// lambda1 = lambda3 = lambda4 = lambda5 = 1, lambda2 = 0.05.
struct HyperParams {
  // Loss weights (Eq. 8): total = seg_ce + l1*img_l2 + l2*cycle_labels
  //                             + l3*cycle_image + l4*adv_labels + l5*adv_image
  double lambda1 = 1.0;   // image reconstruction L2
  double lambda2 = 0.05;  // labels cycle cross-entropy
  double lambda3 = 1.0;   // image cycle L1
  double lambda4 = 1.0;   // adversarial, label domain
  double lambda5 = 1.0;   // adversarial, image domain

  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;

  int64_t batch_size = 5;
  int64_t total_epochs = 400;
  int64_t decay_start_epoch = 100;  // constant lr before, linear to zero after

  uint64_t seed = 0;

  void validate() const {
    auto bad = [](const std::string& msg) { throw std::invalid_argument("HyperParams: " + msg); };
    if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0 || lambda4 < 0 || lambda5 < 0)
      bad("loss weights must be non-negative");
    if (learning_rate <= 0) bad("learning_rate must be positive");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) bad("betas must lie in [0, 1)");
    if (adam_epsilon <= 0) bad("adam_epsilon must be positive");
    if (batch_size <= 0) bad("batch_size must be positive");
    if (total_epochs <= 0) bad("total_epochs must be positive");
    if (decay_start_epoch < 0 || decay_start_epoch > total_epochs)
      bad("decay_start_epoch must lie in [0, total_epochs]");
  }
};

/// Learning rate schedule: base rate up to decay_start, then linear decay
/// reaching exactly zero at total_epochs.
inline double lr_at(const HyperParams& hp, int64_t epoch) {
  if (epoch < hp.decay_start_epoch) return hp.learning_rate;
  const double remaining = static_cast<double>(hp.total_epochs - epoch);
  const double span = static_cast<double>(hp.total_epochs - hp.decay_start_epoch);
  return hp.learning_rate * (span > 0 ? remaining / span : 0.0);
}

}  // namespace cycleseg
