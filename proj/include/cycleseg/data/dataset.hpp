#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "cycleseg/core/types.hpp"

namespace cycleseg {

/// Where a dataset lives and how to interpret it.
struct DatasetSpec {
  std::string root;
  std::string name = "dataset";
  int64_t num_classes = 2;
  int32_t ignore_index = 255;
  int64_t target_h = 64;
  int64_t target_w = 64;

  void validate() const {
    if (num_classes < 2)
      throw std::invalid_argument("DatasetSpec: need at least 2 classes, got " +
                                  std::to_string(num_classes));
    if (target_h <= 0 || target_w <= 0 || target_h % 4 != 0 || target_w % 4 != 0)
      throw std::invalid_argument("DatasetSpec: target size " + std::to_string(target_h) + "x" +
                                  std::to_string(target_w) +
                                  " must be positive and divisible by 4");
    if (ignore_index >= 0 && ignore_index < num_classes)
      throw std::invalid_argument("DatasetSpec: ignore_index " + std::to_string(ignore_index) +
                                  " collides with a class index");
  }
};

struct DatasetItem {
  Image image;
  LabelMask mask;
  std::string id;  // basename without extension
  bool all_ignored = false;
};

struct LoadedDataset {
  DatasetSpec spec;
  std::vector<DatasetItem> items;

  int64_t size() const { return static_cast<int64_t>(items.size()); }
};

/// Per-channel normalization of a raw [C,H,W] image to [-1, 1]:
/// (x - mean) / (max - min), dividing by 1 when the channel is constant.
inline Image normalize(const Tensor<float>& raw) {
  check_rank(raw.shape(), 3, "normalize");
  if (raw.numel() == 0) throw std::invalid_argument("normalize: empty image");
  const int64_t c = raw.shape()[0], hw = raw.shape()[1] * raw.shape()[2];
  Image out{Tensor<float>(raw.shape())};
  for (int64_t ch = 0; ch < c; ++ch) {
    const float* src = raw.data() + ch * hw;
    double sum = 0;
    float lo = src[0], hi = src[0];
    for (int64_t j = 0; j < hw; ++j) {
      sum += src[j];
      lo = std::min(lo, src[j]);
      hi = std::max(hi, src[j]);
    }
    const float mean = static_cast<float>(sum / static_cast<double>(hw));
    const float range = (hi > lo) ? (hi - lo) : 1.0f;
    float* dst = out.data.data() + ch * hw;
    for (int64_t j = 0; j < hw; ++j) dst[j] = (src[j] - mean) / range;
  }
  return out;
}

/// One-hot encodings of a mask for the two places it is consumed.
/// `onehot_input` feeds G_SI and D_S: void pixels sit on the background
/// channel so the tensor stays a valid per-pixel distribution. `ce_target`
/// weights the cross-entropy: void pixels are all-zero rows, dropping them
/// from the loss; `valid_pixels` counts the rows that remain.
struct EncodedMask {
  Tensor<float> onehot_input;  // [K, H, W]
  Tensor<float> ce_target;     // [K, H, W]
  int64_t valid_pixels = 0;
};

inline EncodedMask one_hot_with_ignore(const LabelMask& mask, int64_t num_classes,
                                       int32_t ignore_index) {
  check_rank(mask.data.shape(), 2, "one_hot_with_ignore");
  const int64_t h = mask.height(), w = mask.width(), hw = h * w;
  EncodedMask enc{Tensor<float>(Shape{num_classes, h, w}), Tensor<float>(Shape{num_classes, h, w}),
                  0};
  for (int64_t j = 0; j < hw; ++j) {
    const int32_t v = mask.data[j];
    if (v == ignore_index) {
      enc.onehot_input[j] = 1.0f;  // background channel
      continue;
    }
    if (v < 0 || v >= num_classes)
      throw std::invalid_argument("one_hot_with_ignore: class index " + std::to_string(v) +
                                  " at pixel " + std::to_string(j) + " is outside [0, " +
                                  std::to_string(num_classes) + ")");
    enc.onehot_input[v * hw + j] = 1.0f;
    enc.ce_target[v * hw + j] = 1.0f;
    ++enc.valid_pixels;
  }
  return enc;
}

/// Nearest-neighbor mask resize. Implemented directly (not via cv::resize) so
/// the index mapping is explicit and mask values are copied, never blended.
inline LabelMask resize_mask(const LabelMask& mask, int64_t out_h, int64_t out_w) {
  check_rank(mask.data.shape(), 2, "resize_mask");
  const int64_t in_h = mask.height(), in_w = mask.width();
  if (in_h == out_h && in_w == out_w) return LabelMask{mask.data.clone()};
  LabelMask out{Tensor<int32_t>(Shape{out_h, out_w})};
  for (int64_t r = 0; r < out_h; ++r) {
    const int64_t sr = std::min(in_h - 1, static_cast<int64_t>((r + 0.5) * in_h / out_h));
    for (int64_t c = 0; c < out_w; ++c) {
      const int64_t sc = std::min(in_w - 1, static_cast<int64_t>((c + 0.5) * in_w / out_w));
      out.data[r * out_w + c] = mask.data[sr * in_w + sc];
    }
  }
  return out;
}

namespace detail {

/// 8-bit BGR cv::Mat -> raw [3,H,W] float tensor in RGB channel order.
inline Tensor<float> mat_to_chw(const cv::Mat& bgr) {
  Tensor<float> t(Shape{3, bgr.rows, bgr.cols});
  const int64_t hw = static_cast<int64_t>(bgr.rows) * bgr.cols;
  for (int64_t r = 0; r < bgr.rows; ++r) {
    const cv::Vec3b* row = bgr.ptr<cv::Vec3b>(static_cast<int>(r));
    for (int64_t c = 0; c < bgr.cols; ++c) {
      const int64_t j = r * bgr.cols + c;
      t[0 * hw + j] = row[c][2];
      t[1 * hw + j] = row[c][1];
      t[2 * hw + j] = row[c][0];
    }
  }
  return t;
}

/// Raw [3,H,W] RGB tensor (0..255) -> 8-bit BGR cv::Mat, clamped and rounded.
inline cv::Mat chw_to_mat(const Tensor<float>& t) {
  check_rank(t.shape(), 3, "chw_to_mat");
  const int h = static_cast<int>(t.shape()[1]), w = static_cast<int>(t.shape()[2]);
  const int64_t hw = static_cast<int64_t>(h) * w;
  cv::Mat bgr(h, w, CV_8UC3);
  for (int r = 0; r < h; ++r) {
    cv::Vec3b* row = bgr.ptr<cv::Vec3b>(r);
    for (int c = 0; c < w; ++c) {
      const int64_t j = static_cast<int64_t>(r) * w + c;
      for (int ch = 0; ch < 3; ++ch) {
        const float v = std::round(t[(2 - ch) * hw + j]);
        row[c][ch] = static_cast<uchar>(std::clamp(v, 0.0f, 255.0f));
      }
    }
  }
  return bgr;
}

inline LabelMask mask_mat_to_tensor(const cv::Mat& gray) {
  LabelMask m{Tensor<int32_t>(Shape{gray.rows, gray.cols})};
  for (int r = 0; r < gray.rows; ++r) {
    const uchar* row = gray.ptr<uchar>(r);
    for (int c = 0; c < gray.cols; ++c) m.data[static_cast<int64_t>(r) * gray.cols + c] = row[c];
  }
  return m;
}

}  // namespace detail

/// Loads `<root>/images/*` with matching `<root>/masks/<stem>.png`. Images
/// are resized bilinearly to the target size and normalized; masks are
/// resized nearest-neighbor and validated against K / ignore_index.
inline LoadedDataset load_dataset(const DatasetSpec& spec) {
  namespace fs = std::filesystem;
  spec.validate();
  const fs::path images_dir = fs::path(spec.root) / "images";
  const fs::path masks_dir = fs::path(spec.root) / "masks";
  if (!fs::is_directory(images_dir) || !fs::is_directory(masks_dir))
    throw std::invalid_argument("load_dataset: " + spec.root +
                                " must contain images/ and masks/ subdirectories");

  std::vector<fs::path> image_files;
  for (const auto& entry : fs::directory_iterator(images_dir)) {
    const std::string ext = entry.path().extension().string();
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") image_files.push_back(entry.path());
  }
  std::sort(image_files.begin(), image_files.end());
  if (image_files.empty())
    throw std::invalid_argument("load_dataset: no images found under " + images_dir.string());

  LoadedDataset ds{spec, {}};
  ds.items.reserve(image_files.size());
  for (const auto& img_path : image_files) {
    const std::string id = img_path.stem().string();
    const fs::path mask_path = masks_dir / (id + ".png");
    if (!fs::exists(mask_path))
      throw std::invalid_argument("load_dataset: image " + id + " has no mask at " +
                                  mask_path.string());

    cv::Mat bgr = cv::imread(img_path.string(), cv::IMREAD_COLOR);
    if (bgr.empty())
      throw std::invalid_argument("load_dataset: failed to read image " + img_path.string());
    cv::Mat gray = cv::imread(mask_path.string(), cv::IMREAD_GRAYSCALE);
    if (gray.empty())
      throw std::invalid_argument("load_dataset: failed to read mask " + mask_path.string());

    if (bgr.rows != spec.target_h || bgr.cols != spec.target_w) {
      cv::resize(bgr, bgr,
                 cv::Size(static_cast<int>(spec.target_w), static_cast<int>(spec.target_h)), 0, 0,
                 cv::INTER_LINEAR);
    }
    LabelMask mask = detail::mask_mat_to_tensor(gray);
    mask = resize_mask(mask, spec.target_h, spec.target_w);

    bool any_valid = false;
    for (int64_t j = 0; j < mask.data.numel(); ++j) {
      const int32_t v = mask.data[j];
      if (v == spec.ignore_index) continue;
      if (v < 0 || v >= spec.num_classes)
        throw std::invalid_argument("load_dataset: mask " + id + " contains value " +
                                    std::to_string(v) + " outside [0, " +
                                    std::to_string(spec.num_classes) + ") and != ignore_index " +
                                    std::to_string(spec.ignore_index));
      any_valid = true;
    }

    DatasetItem item;
    item.image = normalize(detail::mat_to_chw(bgr));
    item.mask = std::move(mask);
    item.id = id;
    item.all_ignored = !any_valid;
    ds.items.push_back(std::move(item));
  }
  return ds;
}

}  // namespace cycleseg
