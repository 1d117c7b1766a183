#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "cycleseg/core/tensor.hpp"

namespace cycleseg {

/// Real-valued image, channels x height x width. After preprocessing every
/// entry lies in [-1, 1].
struct Image {
  Tensor<float> data;  // [C, H, W]

  int64_t channels() const { return data.shape()[0]; }
  int64_t height() const { return data.shape()[1]; }
  int64_t width() const { return data.shape()[2]; }
};

/// Integer class-index grid, height x width. Entries are class indices in
/// {0..K-1} or the dataset's ignore value.
struct LabelMask {
  Tensor<int32_t> data;  // [H, W]

  int64_t height() const { return data.shape()[0]; }
  int64_t width() const { return data.shape()[1]; }
};

/// K-channel one-hot encoding of a LabelMask, stored as reals so it can feed
/// the mask-to-image generator and the mask discriminator directly.
struct OneHotMask {
  Tensor<float> data;  // [K, H, W]

  int64_t classes() const { return data.shape()[0]; }
  int64_t height() const { return data.shape()[1]; }
  int64_t width() const { return data.shape()[2]; }
};

/// Per-pixel class distribution (softmax output of the segmenter).
struct ProbMap {
  Tensor<float> data;  // [K, H, W]

  int64_t classes() const { return data.shape()[0]; }
  int64_t height() const { return data.shape()[1]; }
  int64_t width() const { return data.shape()[2]; }
};

inline void check_rank(const Shape& s, int64_t rank, const char* what) {
  if (s.rank() != rank)
    throw std::invalid_argument(std::string(what) + ": expected rank " + std::to_string(rank) +
                                ", got shape " + s.str());
}

/// One-hot encode a mask. Every entry must be a valid class index below K;
/// ignore-valued pixels are the caller's responsibility (see
/// one_hot_with_ignore in data/ for the training-path variant).
inline OneHotMask one_hot(const LabelMask& mask, int64_t num_classes) {
  check_rank(mask.data.shape(), 2, "one_hot");
  const int64_t h = mask.height(), w = mask.width();
  OneHotMask out{Tensor<float>(Shape{num_classes, h, w})};
  for (int64_t j = 0; j < h * w; ++j) {
    const int32_t c = mask.data[j];
    if (c < 0 || c >= num_classes)
      throw std::invalid_argument("one_hot: class index " + std::to_string(c) + " at pixel " +
                                  std::to_string(j) + " is outside [0, " +
                                  std::to_string(num_classes) + ")");
    out.data[c * h * w + j] = 1.0f;
  }
  return out;
}

/// Per-pixel argmax of a ProbMap. Ties break toward the lowest class index.
inline LabelMask argmax_labels(const ProbMap& p) {
  check_rank(p.data.shape(), 3, "argmax_labels");
  const int64_t k = p.classes(), h = p.height(), w = p.width();
  LabelMask out{Tensor<int32_t>(Shape{h, w})};
  const int64_t hw = h * w;
  for (int64_t j = 0; j < hw; ++j) {
    int32_t best = 0;
    float best_v = p.data[j];
    for (int64_t c = 1; c < k; ++c) {
      const float v = p.data[c * hw + j];
      if (v > best_v) {
        best_v = v;
        best = static_cast<int32_t>(c);
      }
    }
    out.data[j] = best;
  }
  return out;
}

/// Column sums of a [K, H, W] (or [N, K, H, W]) distribution must be 1 within
/// tol at every pixel.
template <typename T>
inline bool per_pixel_normalized(const Tensor<T>& t, double tol = 1e-5) {
  const Shape& s = t.shape();
  const bool batched = s.rank() == 4;
  if (!batched) check_rank(s, 3, "per_pixel_normalized");
  const int64_t n = batched ? s[0] : 1;
  const int64_t k = batched ? s[1] : s[0];
  const int64_t hw = batched ? s[2] * s[3] : s[1] * s[2];
  for (int64_t i = 0; i < n; ++i) {
    const T* base = t.data() + i * k * hw;
    for (int64_t j = 0; j < hw; ++j) {
      double sum = 0;
      for (int64_t c = 0; c < k; ++c) sum += static_cast<double>(base[c * hw + j]);
      if (std::abs(sum - 1.0) > tol) return false;
    }
  }
  return true;
}

}  // namespace cycleseg
