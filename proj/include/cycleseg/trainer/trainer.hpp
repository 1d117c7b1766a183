#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cycleseg/core/hyperparams.hpp"
#include "cycleseg/core/random.hpp"
#include "cycleseg/core/types.hpp"
#include "cycleseg/data/dataset.hpp"
#include "cycleseg/data/sampler.hpp"
#include "cycleseg/data/split.hpp"
#include "cycleseg/evaluator/evaluator.hpp"
#include "cycleseg/losses/losses.hpp"
#include "cycleseg/networks/checkpoint.hpp"
#include "cycleseg/networks/networks.hpp"
#include "cycleseg/trainer/adam.hpp"

namespace cycleseg::trainer {

/// Distinct initialization streams so each network draws an independent,
/// reproducible weight sequence from the run seed.
inline constexpr uint64_t kGisInitStream = 0x6749;
inline constexpr uint64_t kGsiInitStream = 0x6753;
inline constexpr uint64_t kDsInitStream = 0x6453;
inline constexpr uint64_t kDiInitStream = 0x6449;

inline constexpr const char* kMetricsHeader =
    "epoch,lr,seg_ce,img_l2,cycle_labels,cycle_image,disc_labels,disc_image,"
    "adv_gen_labels,adv_gen_image,val_miou";

/// Architectures of the four networks. The segmentation generator maps
/// image channels to class probabilities; the inverse generator maps class
/// scores back to image channels; one discriminator scores label maps, the
/// other images.
struct ArchConfig {
  GeneratorConfig seg;
  GeneratorConfig inverse;
  DiscriminatorConfig disc_labels;
  DiscriminatorConfig disc_image;

  void validate() const {
    seg.validate();
    inverse.validate();
    disc_labels.validate();
    disc_image.validate();
    if (seg.output_activation != OutputActivation::softmax_per_pixel)
      throw std::invalid_argument("ArchConfig: segmentation generator must end in softmax");
    if (inverse.output_activation != OutputActivation::tanh_unit)
      throw std::invalid_argument("ArchConfig: inverse generator must end in tanh");
    if (seg.in_channels != inverse.out_channels || seg.out_channels != inverse.in_channels)
      throw std::invalid_argument("ArchConfig: generators must map between the same two domains");
    if (disc_labels.in_channels != seg.out_channels)
      throw std::invalid_argument("ArchConfig: label discriminator must take class channels");
    if (disc_image.in_channels != seg.in_channels)
      throw std::invalid_argument("ArchConfig: image discriminator must take image channels");
  }
};

inline ArchConfig make_arch(int64_t num_classes, int64_t image_channels = 3,
                            int64_t gen_width = 64, int64_t n_residual_blocks = 9,
                            int64_t disc_width = 64, int64_t disc_blocks = 3) {
  ArchConfig a;
  a.seg = {image_channels, num_classes, n_residual_blocks, gen_width,
           OutputActivation::softmax_per_pixel};
  a.inverse = {num_classes, image_channels, n_residual_blocks, gen_width,
               OutputActivation::tanh_unit};
  a.disc_labels = {num_classes, disc_blocks, 0.2, disc_width};
  a.disc_image = {image_channels, disc_blocks, 0.2, disc_width};
  a.validate();
  return a;
}

/// Everything that evolves during training: the four networks, one shared
/// Adam over both generators, one shared Adam over both discriminators, and
/// the index of the next epoch to run. Sampling and initialization draw from
/// stateless per-(seed, epoch) streams, so together with the hyperparameters
/// this is the complete resume state.
struct TrainState {
  Network<float> g_is, g_si, d_s, d_i;
  Adam<float> opt_g, opt_d;
  int64_t epoch = 0;
  HyperParams hparams;
};

inline TrainState make_train_state(const ArchConfig& arch, const HyperParams& h) {
  arch.validate();
  h.validate();
  TrainState s;
  s.hparams = h;
  RandomEngine rng_gis(mix_seed(h.seed, kGisInitStream));
  RandomEngine rng_gsi(mix_seed(h.seed, kGsiInitStream));
  RandomEngine rng_ds(mix_seed(h.seed, kDsInitStream));
  RandomEngine rng_di(mix_seed(h.seed, kDiInitStream));
  s.g_is = build_generator<float>("G_IS", arch.seg, rng_gis);
  s.g_si = build_generator<float>("G_SI", arch.inverse, rng_gsi);
  s.d_s = build_discriminator<float>("D_S", arch.disc_labels, rng_ds);
  s.d_i = build_discriminator<float>("D_I", arch.disc_image, rng_di);

  nn::NamedParams<float> gen_params;
  for (const auto& [name, p] : s.g_is.params()) gen_params.emplace_back("G_IS/" + name, p);
  for (const auto& [name, p] : s.g_si.params()) gen_params.emplace_back("G_SI/" + name, p);
  s.opt_g = Adam<float>(std::move(gen_params), h.beta1, h.beta2, h.adam_epsilon);

  nn::NamedParams<float> disc_params;
  for (const auto& [name, p] : s.d_s.params()) disc_params.emplace_back("D_S/" + name, p);
  for (const auto& [name, p] : s.d_i.params()) disc_params.emplace_back("D_I/" + name, p);
  s.opt_d = Adam<float>(std::move(disc_params), h.beta1, h.beta2, h.adam_epsilon);
  return s;
}

/// Raised when any active loss term stops being finite; training must halt
/// rather than continue from poisoned weights.
class NonFiniteLossError : public std::runtime_error {
 public:
  NonFiniteLossError(std::string term, int64_t epoch, int64_t step)
      : std::runtime_error("non-finite loss: term '" + term + "' at epoch " +
                           std::to_string(epoch) + ", step " + std::to_string(step)),
        term_(std::move(term)),
        epoch_(epoch),
        step_(step) {}
  const std::string& term() const { return term_; }
  int64_t epoch() const { return epoch_; }
  int64_t step() const { return step_; }

 private:
  std::string term_;
  int64_t epoch_, step_;
};

namespace detail {

inline void check_finite(double v, const char* term, int64_t epoch, int64_t step) {
  if (!std::isfinite(v)) throw NonFiniteLossError(term, epoch, step);
}

inline void add_report(LossReport& into, const LossReport& r) {
  into.seg_ce += r.seg_ce;
  into.img_l2 += r.img_l2;
  into.cycle_labels += r.cycle_labels;
  into.cycle_image += r.cycle_image;
  into.disc_labels += r.disc_labels;
  into.disc_image += r.disc_image;
  into.adv_gen_labels += r.adv_gen_labels;
  into.adv_gen_image += r.adv_gen_image;
  into.total_G += r.total_G;
  into.total_D += r.total_D;
}

inline void scale_report(LossReport& r, double s) {
  r.seg_ce *= s;
  r.img_l2 *= s;
  r.cycle_labels *= s;
  r.cycle_image *= s;
  r.disc_labels *= s;
  r.disc_image *= s;
  r.adv_gen_labels *= s;
  r.adv_gen_image *= s;
  r.total_G *= s;
  r.total_D *= s;
}

inline std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace detail

/// Generator update: every λ-active generator term on one tape, a single
/// backward pass, and one Adam step covering both generators. Discriminators
/// are forwarded frozen, so their parameters receive no gradient. Terms that
/// need unlabeled images are skipped when the batch carries none (labeled
/// fraction 1.0). Shared forwards (the inverse generator on the one-hot
/// batch; the segmentation generator on the unlabeled batch) feed every term
/// that consumes them.
inline LossReport generator_phase(TrainState& s, const SampleBatch& batch, double lr,
                                          int64_t epoch = 0, int64_t step = 0) {
  const HyperParams& h = s.hparams;
  const bool has_unlabeled = batch.unlabeled_images.defined();
  const bool use_img_l2 = h.lambda1 != 0;
  const bool use_cycle_labels = h.lambda2 != 0;
  const bool use_cycle_image = h.lambda3 != 0 && has_unlabeled;
  const bool use_adv_labels = h.lambda4 != 0 && has_unlabeled;
  const bool use_adv_image = h.lambda5 != 0 && has_unlabeled;

  s.opt_g.zero_grad();

  auto probs = s.g_is.forward(ad::Var<float>::leaf(batch.labeled_images), nn::kTrain);
  auto seg_ce = masked_ce_mean(probs, batch.ce_target, batch.valid_pixels);

  ad::Var<float> fake_img;
  if (use_img_l2 || use_cycle_labels || use_adv_image)
    fake_img = s.g_si.forward(ad::Var<float>::leaf(batch.onehot_input), nn::kTrain);

  ad::Var<float> img_l2, cycle_labels, cycle_image, adv_labels, adv_image;
  if (use_img_l2) img_l2 = mse_mean(fake_img, batch.labeled_images);
  if (use_cycle_labels)
    cycle_labels = masked_ce_mean(s.g_is.forward(fake_img, nn::kTrain), batch.ce_target,
                                          batch.valid_pixels);

  ad::Var<float> seg_u;
  if (use_cycle_image || use_adv_labels)
    seg_u = s.g_is.forward(ad::Var<float>::leaf(batch.unlabeled_images), nn::kTrain);
  if (use_cycle_image)
    cycle_image =
        mae_mean(s.g_si.forward(seg_u, nn::kTrain), batch.unlabeled_images);
  if (use_adv_labels) adv_labels = loss_adv_generator(s.d_s, seg_u, nn::kTrain);
  if (use_adv_image) adv_image = loss_adv_generator(s.d_i, fake_img, nn::kTrain);

  auto total = seg_ce;
  if (use_img_l2) total = ad::add(total, ad::mul_scalar(img_l2, static_cast<float>(h.lambda1)));
  if (use_cycle_labels)
    total = ad::add(total, ad::mul_scalar(cycle_labels, static_cast<float>(h.lambda2)));
  if (use_cycle_image)
    total = ad::add(total, ad::mul_scalar(cycle_image, static_cast<float>(h.lambda3)));
  if (use_adv_labels)
    total = ad::add(total, ad::mul_scalar(adv_labels, static_cast<float>(h.lambda4)));
  if (use_adv_image)
    total = ad::add(total, ad::mul_scalar(adv_image, static_cast<float>(h.lambda5)));

  LossReport r;
  r.seg_ce = seg_ce.item();
  detail::check_finite(r.seg_ce, "seg_ce", epoch, step);
  if (use_img_l2) {
    r.img_l2 = img_l2.item();
    detail::check_finite(r.img_l2, "img_l2", epoch, step);
  }
  if (use_cycle_labels) {
    r.cycle_labels = cycle_labels.item();
    detail::check_finite(r.cycle_labels, "cycle_labels", epoch, step);
  }
  if (use_cycle_image) {
    r.cycle_image = cycle_image.item();
    detail::check_finite(r.cycle_image, "cycle_image", epoch, step);
  }
  if (use_adv_labels) {
    r.adv_gen_labels = adv_labels.item();
    detail::check_finite(r.adv_gen_labels, "adv_gen_labels", epoch, step);
  }
  if (use_adv_image) {
    r.adv_gen_image = adv_image.item();
    detail::check_finite(r.adv_gen_image, "adv_gen_image", epoch, step);
  }
  r.total_G = total.item();
  detail::check_finite(r.total_G, "total_G", epoch, step);

  ad::backward(total);
  s.opt_g.step(lr);
  return r;
}

/// Discriminator update: fakes are recomputed from the just-updated
/// generators with gradients off, so no generator parameter is touched; one
/// backward over the summed discriminator losses and one Adam step covering
/// both discriminators. A discriminator whose adversarial weight is zero (or
/// that has no unlabeled real/fake source) is skipped entirely.
inline LossReport discriminator_phase(TrainState& s, const SampleBatch& batch, double lr,
                                              int64_t epoch = 0, int64_t step = 0) {
  const HyperParams& h = s.hparams;
  const bool has_unlabeled = batch.unlabeled_images.defined();
  const bool train_ds = h.lambda4 != 0 && has_unlabeled;
  const bool train_di = h.lambda5 != 0 && has_unlabeled;

  LossReport r;
  if (!train_ds && !train_di) return r;

  s.opt_d.zero_grad();

  Tensor<float> fake_seg, fake_img;
  {
    ad::NoGradGuard ng;
    if (train_ds)
      fake_seg = s.g_is.forward(ad::Var<float>::leaf(batch.unlabeled_images), nn::kTrain).value();
    if (train_di)
      fake_img = s.g_si.forward(ad::Var<float>::leaf(batch.onehot_input), nn::kTrain).value();
  }

  ad::Var<float> loss_ds, loss_di;
  if (train_ds) loss_ds = loss_disc_labels(s.d_s, batch.onehot_input, fake_seg);
  if (train_di) loss_di = loss_disc_image(s.d_i, batch.unlabeled_images, fake_img);

  ad::Var<float> total = train_ds ? loss_ds : loss_di;
  if (train_ds && train_di) total = ad::add(loss_ds, loss_di);

  if (train_ds) {
    r.disc_labels = loss_ds.item();
    detail::check_finite(r.disc_labels, "disc_labels", epoch, step);
  }
  if (train_di) {
    r.disc_image = loss_di.item();
    detail::check_finite(r.disc_image, "disc_image", epoch, step);
  }
  r.total_D = total.item();
  detail::check_finite(r.total_D, "total_D", epoch, step);

  ad::backward(total);
  s.opt_d.step(lr);
  return r;
}

/// One optimization step: generators first, then discriminators (1:1 ratio).
inline LossReport train_step(TrainState& s, const SampleBatch& batch, double lr,
                                     int64_t epoch = 0, int64_t step = 0) {
  LossReport r = generator_phase(s, batch, lr, epoch, step);
  const LossReport d = discriminator_phase(s, batch, lr, epoch, step);
  r.disc_labels = d.disc_labels;
  r.disc_image = d.disc_image;
  r.total_D = d.total_D;
  return r;
}

/// Confusion counts of the segmentation generator over a dataset, forwarding
/// in small evaluation batches under kEval with gradients disabled.
inline ConfusionAccumulator segmentation_confusion(Network<float>& g_is, const LoadedDataset& data,
                                                   int64_t eval_batch = 4) {
  if (data.size() == 0) throw std::invalid_argument("segmentation_confusion: empty dataset");
  ad::NoGradGuard ng;
  const int64_t c = data.items.front().image.channels();
  const int64_t h = data.spec.target_h, w = data.spec.target_w;
  const int64_t k = data.spec.num_classes;
  ConfusionAccumulator acc(k);
  for (int64_t start = 0; start < data.size(); start += eval_batch) {
    const int64_t n = std::min<int64_t>(eval_batch, data.size() - start);
    Tensor<float> images(Shape{n, c, h, w});
    for (int64_t i = 0; i < n; ++i)
      std::memcpy(images.data() + i * c * h * w,
                  data.items[static_cast<size_t>(start + i)].image.data.data(),
                  sizeof(float) * static_cast<size_t>(c * h * w));
    const Tensor<float> probs =
        g_is.forward(ad::Var<float>::leaf(std::move(images)), nn::kEval).value();
    for (int64_t i = 0; i < n; ++i) {
      Tensor<float> slice(Shape{k, h, w});
      std::memcpy(slice.data(), probs.data() + i * k * h * w,
                  sizeof(float) * static_cast<size_t>(k * h * w));
      const LabelMask pred = argmax_labels(ProbMap{std::move(slice)});
      accumulate(acc, pred, data.items[static_cast<size_t>(start + i)].mask,
                            data.spec.ignore_index);
    }
  }
  return acc;
}

/// Mean IoU of the segmentation generator over a dataset. An empty class
/// subset means all classes.
inline double validate_miou(Network<float>& g_is, const LoadedDataset& data,
                            const std::vector<int64_t>& class_subset = {},
                            int64_t eval_batch = 4) {
  return mean_iou(segmentation_confusion(g_is, data, eval_batch), class_subset);
}

struct FitConfig {
  std::string run_dir;
  int64_t checkpoint_every = 10;
  int64_t eval_batch = 4;
  std::vector<int64_t> miou_class_subset{};  // empty = all classes
  bool verbose = false;
};

struct FitResult {
  int64_t best_epoch = -1;
  double best_val_miou = -1.0;
  double final_val_miou = -1.0;
  std::vector<LossReport> epoch_means;
  std::vector<double> val_mious;
};

inline std::string network_checkpoint_path(const std::string& dir, const std::string& net_name,
                                           const std::string& tag) {
  return dir + "/" + net_name + "_" + tag + ".net";
}

inline std::string trainer_state_path(const std::string& dir, const std::string& tag) {
  return dir + "/trainer_" + tag + ".state";
}

/// Writes the four network checkpoints plus optimizer moments, epoch counter,
/// and run seed under the given tag ("epoch{N}" or "best").
inline void save_checkpoint(const TrainState& s, const std::string& dir, const std::string& tag) {
  save_network(s.g_is, network_checkpoint_path(dir, "G_IS", tag));
  save_network(s.g_si, network_checkpoint_path(dir, "G_SI", tag));
  save_network(s.d_s, network_checkpoint_path(dir, "D_S", tag));
  save_network(s.d_i, network_checkpoint_path(dir, "D_I", tag));
  std::ofstream os(trainer_state_path(dir, tag), std::ios::binary);
  if (!os) throw std::runtime_error("save_checkpoint: cannot open " + trainer_state_path(dir, tag));
  os.write("CSEGTRN1", 8);
  const uint64_t epoch = static_cast<uint64_t>(s.epoch);
  os.write(reinterpret_cast<const char*>(&epoch), sizeof(epoch));
  const uint64_t seed = s.hparams.seed;
  os.write(reinterpret_cast<const char*>(&seed), sizeof(seed));
  s.opt_g.save(os);
  s.opt_d.save(os);
  if (!os) throw std::runtime_error("save_checkpoint: write failed in " + dir);
}

/// Restores networks, optimizer moments, and the epoch counter saved under
/// `tag` into a state built with the same architecture and hyperparameters.
inline void load_checkpoint(TrainState& s, const std::string& dir, const std::string& tag) {
  load_network(s.g_is, network_checkpoint_path(dir, "G_IS", tag));
  load_network(s.g_si, network_checkpoint_path(dir, "G_SI", tag));
  load_network(s.d_s, network_checkpoint_path(dir, "D_S", tag));
  load_network(s.d_i, network_checkpoint_path(dir, "D_I", tag));
  std::ifstream is(trainer_state_path(dir, tag), std::ios::binary);
  if (!is) throw std::runtime_error("load_checkpoint: cannot open " + trainer_state_path(dir, tag));
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, "CSEGTRN1", 8) != 0)
    throw std::runtime_error("load_checkpoint: " + trainer_state_path(dir, tag) +
                             " is not a trainer state file");
  uint64_t epoch = 0, seed = 0;
  is.read(reinterpret_cast<char*>(&epoch), sizeof(epoch));
  is.read(reinterpret_cast<char*>(&seed), sizeof(seed));
  if (seed != s.hparams.seed)
    throw std::runtime_error("load_checkpoint: state was written under seed " +
                             std::to_string(seed) + ", expected " +
                             std::to_string(s.hparams.seed));
  s.opt_g.load(is);
  s.opt_d.load(is);
  if (!is) throw std::runtime_error("load_checkpoint: truncated " + trainer_state_path(dir, tag));
  s.epoch = static_cast<int64_t>(epoch);
}

/// Full training loop from state.epoch to total_epochs: per-epoch sampling,
/// two-phase steps at the scheduled learning rate, validation mean IoU,
/// one metrics row per epoch, periodic checkpoints, and a tracked best
/// validation epoch (checkpointed under "best", recorded in best.txt).
inline FitResult fit(TrainState& s, const LoadedDataset& train, const LoadedDataset& val,
                     const SplitSpec& split, const FitConfig& cfg) {
  const HyperParams& h = s.hparams;
  h.validate();
  if (cfg.run_dir.empty()) throw std::invalid_argument("fit: run_dir must be set");
  std::filesystem::create_directories(cfg.run_dir);
  save_split(cfg.run_dir, split);

  BatchSampler sampler(train, split, h.batch_size, h.seed);
  const int64_t steps = sampler.steps_per_epoch();

  const std::string metrics_path = cfg.run_dir + "/metrics.csv";
  const bool fresh = !std::filesystem::exists(metrics_path) ||
                     std::filesystem::file_size(metrics_path) == 0;
  std::ofstream metrics(metrics_path, std::ios::app);
  if (!metrics) throw std::runtime_error("fit: cannot open " + metrics_path);
  if (fresh) metrics << kMetricsHeader << "\n";

  FitResult result;
  // A resumed run (s.epoch > 0) must not let a weaker later epoch overwrite
  // the historical best checkpoint, so seed the tracker from best.txt.
  if (s.epoch > 0) {
    std::ifstream best_in(cfg.run_dir + "/best.txt");
    std::string key;
    int64_t epoch_val = -1;
    double miou_val = -1;
    if (best_in >> key >> epoch_val >> key >> miou_val) {
      result.best_epoch = epoch_val;
      result.best_val_miou = miou_val;
    }
  }
  for (int64_t e = s.epoch; e < h.total_epochs; ++e) {
    const double lr = lr_at(h, e);
    const EpochPlan plan = sampler.plan_epoch(e);
    LossReport mean;
    for (int64_t st = 0; st < steps; ++st) {
      const SampleBatch batch = sampler.make_batch(plan, st);
      const LossReport r = train_step(s, batch, lr, e, st);
      detail::add_report(mean, r);
    }
    detail::scale_report(mean, 1.0 / static_cast<double>(steps));

    const double miou = validate_miou(s.g_is, val, cfg.miou_class_subset, cfg.eval_batch);
    if (!std::isfinite(miou)) throw NonFiniteLossError("val_miou", e, steps - 1);

    metrics << e << ',' << detail::fmt_g(lr) << ',' << detail::fmt_g(mean.seg_ce) << ','
            << detail::fmt_g(mean.img_l2) << ',' << detail::fmt_g(mean.cycle_labels) << ','
            << detail::fmt_g(mean.cycle_image) << ',' << detail::fmt_g(mean.disc_labels) << ','
            << detail::fmt_g(mean.disc_image) << ',' << detail::fmt_g(mean.adv_gen_labels) << ','
            << detail::fmt_g(mean.adv_gen_image) << ',' << detail::fmt_g(miou) << "\n";
    metrics.flush();
    if (cfg.verbose)
      std::cout << "epoch " << e + 1 << "/" << h.total_epochs << "  lr " << detail::fmt_g(lr)
                << "  total_G " << detail::fmt_g(mean.total_G) << "  total_D "
                << detail::fmt_g(mean.total_D) << "  val_miou " << detail::fmt_g(miou)
                << std::endl;

    s.epoch = e + 1;
    result.epoch_means.push_back(mean);
    result.val_mious.push_back(miou);
    result.final_val_miou = miou;

    if (miou > result.best_val_miou) {
      result.best_val_miou = miou;
      result.best_epoch = e;
      save_checkpoint(s, cfg.run_dir, "best");
      std::ofstream best(cfg.run_dir + "/best.txt");
      best << "best_epoch: " << e << "\n"
           << "best_val_miou: " << detail::fmt_g(miou) << "\n";
    }
    if (cfg.checkpoint_every > 0 &&
        ((e + 1) % cfg.checkpoint_every == 0 || e + 1 == h.total_epochs))
      save_checkpoint(s, cfg.run_dir, "epoch" + std::to_string(e + 1));
  }
  return result;
}

/// Supervised baseline: identical loop with every auxiliary weight zeroed,
/// so only the segmentation cross-entropy trains G_IS. The inverse generator
/// and both discriminators receive no gradient and keep their initial
/// weights.
inline FitResult fit_partial_baseline(TrainState& s, const LoadedDataset& train,
                                      const LoadedDataset& val, const SplitSpec& split,
                                      const FitConfig& cfg) {
  s.hparams.lambda1 = 0;
  s.hparams.lambda2 = 0;
  s.hparams.lambda3 = 0;
  s.hparams.lambda4 = 0;
  s.hparams.lambda5 = 0;
  return fit(s, train, val, split, cfg);
}

}  // namespace cycleseg::trainer
