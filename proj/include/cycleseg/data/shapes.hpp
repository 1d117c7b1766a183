#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <opencv2/imgcodecs.hpp>

#include "cycleseg/core/random.hpp"
#include "cycleseg/data/dataset.hpp"

namespace cycleseg {

inline constexpr uint64_t kShapesStream = 0x5A;

/// Parameters of the synthetic shapes dataset: colored geometric figures on a
/// textured background, labeled by figure class, with Gaussian pixel noise.
struct ShapesConfig {
  int64_t n_images = 200;
  int64_t height = 64;
  int64_t width = 64;
  int64_t num_classes = 4;  // class 0 is background
  double noise_sigma = 8.0;
  uint64_t seed = 0;
  int64_t min_shapes = 1;
  int64_t max_shapes = 3;

  void validate() const {
    if (num_classes < 2)
      throw std::invalid_argument("ShapesConfig: need at least 2 classes (background + 1)");
    if (height % 4 != 0 || width % 4 != 0 || height < 16 || width < 16)
      throw std::invalid_argument("ShapesConfig: size must be >= 16 and divisible by 4");
    if (n_images < 1) throw std::invalid_argument("ShapesConfig: need at least one image");
    if (min_shapes < 1 || max_shapes < min_shapes)
      throw std::invalid_argument("ShapesConfig: invalid shape-count range");
    if (noise_sigma < 0) throw std::invalid_argument("ShapesConfig: negative noise sigma");
  }
};

struct ShapesSample {
  Tensor<float> rgb;  // raw [3,H,W], integer values in [0,255]
  LabelMask mask;     // [H,W]
};

namespace detail {

struct Rgb {
  float r, g, b;
};

/// Saturated, class-distinct base color: hues spread evenly around the wheel.
inline Rgb class_color(int64_t cls, int64_t num_classes) {
  const double h = 6.0 * static_cast<double>(cls - 1) / static_cast<double>(num_classes - 1);
  const double s = 0.85, v = 0.9;
  const int i = static_cast<int>(h) % 6;
  const double f = h - std::floor(h);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  double r = 0, g = 0, b = 0;
  switch (i) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
  return {static_cast<float>(255 * r), static_cast<float>(255 * g), static_cast<float>(255 * b)};
}

struct PlacedShape {
  int type = 0;  // 0 rect, 1 circle, 2 triangle
  int64_t cx = 0, cy = 0;
  int64_t half_w = 0, half_h = 0;  // bounding half-extents
  int32_t cls = 1;
  Rgb color{0, 0, 0};

  bool bbox_overlaps(const PlacedShape& o) const {
    return std::llabs(cx - o.cx) <= half_w + o.half_w + 1 &&
           std::llabs(cy - o.cy) <= half_h + o.half_h + 1;
  }

  bool contains(int64_t r, int64_t c) const {
    const int64_t dx = c - cx, dy = r - cy;
    switch (type) {
      case 0:
        return std::llabs(dx) <= half_w && std::llabs(dy) <= half_h;
      case 1:
        return dx * dx + dy * dy <= half_w * half_w;
      default: {
        // Upright isosceles triangle: apex (cx, cy-half_h), base corners
        // (cx +/- half_w, cy+half_h).
        if (dy < -half_h || dy > half_h) return false;
        // Width grows linearly from 0 at the apex to half_w at the base.
        const double frac = static_cast<double>(dy + half_h) / static_cast<double>(2 * half_h);
        return std::abs(static_cast<double>(dx)) <= frac * static_cast<double>(half_w);
      }
    }
  }
};

}  // namespace detail

/// Renders one scene deterministically from `rng`. Background is a textured
/// gradient; each figure is a flat patch of its class color (plus a small
/// per-instance jitter). Gaussian noise of sd `noise_sigma` is added to every
/// pixel and the result is quantized to integers, so the in-memory sample is
/// exactly what a PNG round trip reproduces.
inline ShapesSample render_shapes_scene(RandomEngine& rng, const ShapesConfig& cfg) {
  const int64_t h = cfg.height, w = cfg.width, hw = h * w;
  ShapesSample out{Tensor<float>(Shape{3, h, w}), LabelMask{Tensor<int32_t>(Shape{h, w})}};

  // Textured background: base gray + two low-frequency sinusoids + tint.
  const double base = rng.uniform(35, 75);
  const double amp = rng.uniform(5, 14);
  const double fr = rng.uniform(0.02, 0.08), fc = rng.uniform(0.02, 0.08);
  const double pr = rng.uniform(0, 1), pc = rng.uniform(0, 1);
  const double tint[3] = {rng.uniform(-8, 8), rng.uniform(-8, 8), rng.uniform(-8, 8)};
  constexpr double tau = 2 * std::numbers::pi;
  for (int64_t r = 0; r < h; ++r) {
    for (int64_t c = 0; c < w; ++c) {
      const double v = base + amp * std::sin(tau * (fr * static_cast<double>(r) + pr)) +
                       amp * std::sin(tau * (fc * static_cast<double>(c) + pc));
      for (int64_t ch = 0; ch < 3; ++ch)
        out.rgb[ch * hw + r * w + c] = static_cast<float>(v + tint[ch]);
    }
  }

  // Place figures without bounding-box overlap; give up on a figure after a
  // bounded number of tries rather than failing the scene.
  const int64_t want =
      cfg.min_shapes + static_cast<int64_t>(rng.uniform_int(cfg.max_shapes - cfg.min_shapes + 1));
  std::vector<detail::PlacedShape> placed;
  const int64_t min_half = std::max<int64_t>(3, std::min(h, w) / 12);
  const int64_t max_half = std::max<int64_t>(min_half + 1, std::min(h, w) / 5);
  for (int64_t s = 0; s < want; ++s) {
    for (int attempt = 0; attempt < 30; ++attempt) {
      detail::PlacedShape cand;
      cand.type = static_cast<int>(rng.uniform_int(3));
      cand.half_w = min_half + static_cast<int64_t>(rng.uniform_int(max_half - min_half + 1));
      cand.half_h = cand.type == 1
                        ? cand.half_w
                        : min_half + static_cast<int64_t>(rng.uniform_int(max_half - min_half + 1));
      cand.cx = cand.half_w + 2 +
                static_cast<int64_t>(rng.uniform_int(std::max<int64_t>(1, w - 2 * cand.half_w - 4)));
      cand.cy = cand.half_h + 2 +
                static_cast<int64_t>(rng.uniform_int(std::max<int64_t>(1, h - 2 * cand.half_h - 4)));
      cand.cls = 1 + static_cast<int32_t>(rng.uniform_int(cfg.num_classes - 1));
      detail::Rgb col = detail::class_color(cand.cls, cfg.num_classes);
      cand.color = {col.r + static_cast<float>(rng.uniform(-15, 15)),
                    col.g + static_cast<float>(rng.uniform(-15, 15)),
                    col.b + static_cast<float>(rng.uniform(-15, 15))};
      bool ok = true;
      for (const auto& p : placed) ok = ok && !cand.bbox_overlaps(p);
      if (!ok) continue;
      placed.push_back(cand);
      break;
    }
  }

  for (const auto& shape : placed) {
    for (int64_t r = shape.cy - shape.half_h; r <= shape.cy + shape.half_h; ++r) {
      for (int64_t c = shape.cx - shape.half_w; c <= shape.cx + shape.half_w; ++c) {
        if (r < 0 || r >= h || c < 0 || c >= w || !shape.contains(r, c)) continue;
        const int64_t j = r * w + c;
        out.rgb[0 * hw + j] = shape.color.r;
        out.rgb[1 * hw + j] = shape.color.g;
        out.rgb[2 * hw + j] = shape.color.b;
        out.mask.data[j] = shape.cls;
      }
    }
  }

  // Pixel noise, then quantization to the 8-bit grid.
  for (int64_t i = 0; i < out.rgb.numel(); ++i) {
    const double v = out.rgb[i] + (cfg.noise_sigma > 0 ? rng.normal(0, cfg.noise_sigma) : 0.0);
    out.rgb[i] = static_cast<float>(std::clamp(std::round(v), 0.0, 255.0));
  }
  return out;
}

/// Deterministic dataset: image i depends only on (seed, i).
inline std::vector<ShapesSample> generate_shapes_dataset(const ShapesConfig& cfg) {
  cfg.validate();
  std::vector<ShapesSample> samples;
  samples.reserve(static_cast<size_t>(cfg.n_images));
  for (int64_t i = 0; i < cfg.n_images; ++i) {
    RandomEngine rng(mix_seed(cfg.seed, static_cast<uint64_t>(i), kShapesStream));
    samples.push_back(render_shapes_scene(rng, cfg));
  }
  return samples;
}

/// Writes images/, masks/ (PNG, lossless) and meta.txt under `dir`.
inline void write_shapes_dataset(const ShapesConfig& cfg, const std::string& dir) {
  namespace fs = std::filesystem;
  const auto samples = generate_shapes_dataset(cfg);
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "masks");
  char name[32];
  for (size_t i = 0; i < samples.size(); ++i) {
    std::snprintf(name, sizeof(name), "img_%05zu", i);
    cv::Mat bgr = detail::chw_to_mat(samples[i].rgb);
    cv::Mat mask(static_cast<int>(cfg.height), static_cast<int>(cfg.width), CV_8UC1);
    for (int r = 0; r < mask.rows; ++r)
      for (int c = 0; c < mask.cols; ++c)
        mask.at<uchar>(r, c) =
            static_cast<uchar>(samples[i].mask.data[static_cast<int64_t>(r) * cfg.width + c]);
    if (!cv::imwrite((fs::path(dir) / "images" / (std::string(name) + ".png")).string(), bgr) ||
        !cv::imwrite((fs::path(dir) / "masks" / (std::string(name) + ".png")).string(), mask))
      throw std::runtime_error("write_shapes_dataset: PNG write failed under " + dir);
  }
  std::ofstream meta(fs::path(dir) / "meta.txt");
  meta << "seed: " << cfg.seed << "\n"
       << "n_images: " << cfg.n_images << "\n"
       << "num_classes: " << cfg.num_classes << "\n"
       << "noise_sigma: " << cfg.noise_sigma << "\n"
       << "height: " << cfg.height << "\n"
       << "width: " << cfg.width << "\n";
}

}  // namespace cycleseg
