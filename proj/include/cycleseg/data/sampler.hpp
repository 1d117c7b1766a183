#pragma once

#include <cstring>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "cycleseg/core/random.hpp"
#include "cycleseg/data/dataset.hpp"
#include "cycleseg/data/split.hpp"

namespace cycleseg {

/// One training step's worth of data. The unlabeled tensor is undefined when
/// the split has no unlabeled pool (full supervision).
struct SampleBatch {
  Tensor<float> labeled_images;    // [B, C, H, W]
  Tensor<float> onehot_input;      // [B, K, H, W], void pixels on background
  Tensor<float> ce_target;         // [B, K, H, W], void pixels zeroed
  int64_t valid_pixels = 0;        // contributing pixels across the sub-batch
  Tensor<float> unlabeled_images;  // [B, C, H, W] or undefined
};

/// Index orders for one epoch; `labeled` and `unlabeled` each hold
/// steps*B dataset indices.
struct EpochPlan {
  std::vector<int64_t> labeled;
  std::vector<int64_t> unlabeled;
};

/// Deterministic batch stream over a split dataset.
///
/// An epoch is one pass over the larger pool: floor(max(|L|,|U|)/B) steps.
/// The smaller pool is reshuffled and recycled as needed. Each pool draws its
/// per-epoch order from an independent seeded stream, so the labeled sequence
/// is identical whether or not the unlabeled pool is ever consumed.
class BatchSampler {
 public:
  BatchSampler(const LoadedDataset& train, const SplitSpec& split, int64_t batch_size,
               uint64_t seed)
      : train_(train), batch_(batch_size), seed_(seed) {
    if (batch_size < 1) throw std::invalid_argument("BatchSampler: batch size must be >= 1");
    std::unordered_map<std::string, int64_t> index;
    for (int64_t i = 0; i < train.size(); ++i) index[train.items[static_cast<size_t>(i)].id] = i;
    auto resolve = [&](const std::vector<std::string>& ids, std::vector<int64_t>& out) {
      out.reserve(ids.size());
      for (const auto& id : ids) {
        auto it = index.find(id);
        if (it == index.end())
          throw std::invalid_argument("BatchSampler: split id " + id +
                                      " is not in the training dataset");
        out.push_back(it->second);
      }
    };
    resolve(split.labeled, labeled_pool_);
    resolve(split.unlabeled, unlabeled_pool_);
    if (labeled_pool_.empty()) throw std::invalid_argument("BatchSampler: empty labeled pool");
    if (batch_ > static_cast<int64_t>(labeled_pool_.size()))
      throw std::invalid_argument("BatchSampler: batch size " + std::to_string(batch_) +
                                  " exceeds labeled pool size " +
                                  std::to_string(labeled_pool_.size()));
    if (!unlabeled_pool_.empty() && batch_ > static_cast<int64_t>(unlabeled_pool_.size()))
      throw std::invalid_argument("BatchSampler: batch size " + std::to_string(batch_) +
                                  " exceeds unlabeled pool size " +
                                  std::to_string(unlabeled_pool_.size()));
  }

  int64_t steps_per_epoch() const {
    const auto larger = std::max(labeled_pool_.size(), unlabeled_pool_.size());
    return static_cast<int64_t>(larger) / batch_;
  }

  int64_t batch_size() const { return batch_; }
  bool has_unlabeled() const { return !unlabeled_pool_.empty(); }

  EpochPlan plan_epoch(int64_t epoch) const {
    const int64_t need = steps_per_epoch() * batch_;
    EpochPlan plan;
    plan.labeled = draw_order(labeled_pool_, need, mix_seed(seed_, static_cast<uint64_t>(epoch),
                                                            kLabeledStream));
    if (!unlabeled_pool_.empty()) {
      plan.unlabeled = draw_order(unlabeled_pool_, need,
                                  mix_seed(seed_, static_cast<uint64_t>(epoch), kUnlabeledStream));
    }
    return plan;
  }

  SampleBatch make_batch(const EpochPlan& plan, int64_t step) const {
    if (step < 0 || step >= steps_per_epoch())
      throw std::invalid_argument("BatchSampler: step " + std::to_string(step) +
                                  " outside epoch of " + std::to_string(steps_per_epoch()));
    const auto& spec = train_.spec;
    const int64_t c = train_.items.front().image.channels();
    const int64_t h = spec.target_h, w = spec.target_w, k = spec.num_classes;

    SampleBatch batch;
    batch.labeled_images = Tensor<float>(Shape{batch_, c, h, w});
    batch.onehot_input = Tensor<float>(Shape{batch_, k, h, w});
    batch.ce_target = Tensor<float>(Shape{batch_, k, h, w});
    for (int64_t n = 0; n < batch_; ++n) {
      const auto& item = train_.items[static_cast<size_t>(plan.labeled[step * batch_ + n])];
      std::memcpy(batch.labeled_images.data() + n * c * h * w, item.image.data.data(),
                  sizeof(float) * static_cast<size_t>(c * h * w));
      EncodedMask enc = one_hot_with_ignore(item.mask, k, spec.ignore_index);
      std::memcpy(batch.onehot_input.data() + n * k * h * w, enc.onehot_input.data(),
                  sizeof(float) * static_cast<size_t>(k * h * w));
      std::memcpy(batch.ce_target.data() + n * k * h * w, enc.ce_target.data(),
                  sizeof(float) * static_cast<size_t>(k * h * w));
      batch.valid_pixels += enc.valid_pixels;
    }
    if (!plan.unlabeled.empty()) {
      batch.unlabeled_images = Tensor<float>(Shape{batch_, c, h, w});
      for (int64_t n = 0; n < batch_; ++n) {
        const auto& item = train_.items[static_cast<size_t>(plan.unlabeled[step * batch_ + n])];
        std::memcpy(batch.unlabeled_images.data() + n * c * h * w, item.image.data.data(),
                    sizeof(float) * static_cast<size_t>(c * h * w));
      }
    }
    return batch;
  }

 private:
  /// First `need` entries of repeated seeded shuffles of `pool`; the engine
  /// persists across reshuffles so each recycling pass differs.
  static std::vector<int64_t> draw_order(const std::vector<int64_t>& pool, int64_t need,
                                         uint64_t stream_seed) {
    RandomEngine rng(stream_seed);
    std::vector<int64_t> order;
    order.reserve(static_cast<size_t>(need));
    std::vector<int64_t> pass = pool;
    while (static_cast<int64_t>(order.size()) < need) {
      rng.shuffle(pass);
      const int64_t take = std::min<int64_t>(need - static_cast<int64_t>(order.size()),
                                             static_cast<int64_t>(pass.size()));
      order.insert(order.end(), pass.begin(), pass.begin() + take);
    }
    return order;
  }

  const LoadedDataset& train_;
  int64_t batch_;
  uint64_t seed_;
  std::vector<int64_t> labeled_pool_;
  std::vector<int64_t> unlabeled_pool_;
};

}  // namespace cycleseg
