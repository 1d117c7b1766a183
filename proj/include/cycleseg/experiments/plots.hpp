#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "cycleseg/core/types.hpp"
#include "cycleseg/data/dataset.hpp"
#include "cycleseg/data/shapes.hpp"
#include "cycleseg/networks/networks.hpp"

namespace cycleseg::experiments {

/// One named curve for a line chart. Points are drawn in the order given.
struct Series {
  std::string label;
  std::vector<double> xs;
  std::vector<double> ys;
  bool markers = false;  // draw a dot at every point (for sparse series)
};

namespace plot_detail {

inline const std::vector<cv::Scalar>& palette() {
  // BGR, chosen to stay distinguishable on white.
  static const std::vector<cv::Scalar> p = {
      {180, 119, 31}, {14, 127, 255}, {44, 160, 44},  {40, 39, 214},
      {189, 103, 148}, {75, 86, 140},  {194, 119, 227}, {34, 189, 188},
  };
  return p;
}

inline std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

}  // namespace plot_detail

/// Renders series as a PNG line chart with axes, ticks, and a legend.
/// Throws if no series contains a finite point.
inline void draw_line_chart(const std::string& path, const std::string& title,
                            const std::string& x_label, const std::string& y_label,
                            const std::vector<Series>& series, int width = 960, int height = 600) {
  double x_min = 0, x_max = 0, y_min = 0, y_max = 0;
  bool any = false;
  for (const auto& s : series)
    for (size_t i = 0; i < s.xs.size() && i < s.ys.size(); ++i) {
      if (!std::isfinite(s.xs[i]) || !std::isfinite(s.ys[i])) continue;
      if (!any) {
        x_min = x_max = s.xs[i];
        y_min = y_max = s.ys[i];
        any = true;
      } else {
        x_min = std::min(x_min, s.xs[i]);
        x_max = std::max(x_max, s.xs[i]);
        y_min = std::min(y_min, s.ys[i]);
        y_max = std::max(y_max, s.ys[i]);
      }
    }
  if (!any) throw std::invalid_argument("draw_line_chart: no finite points to plot");
  if (x_max - x_min < 1e-12) { x_min -= 0.5; x_max += 0.5; }
  if (y_max - y_min < 1e-12) { y_min -= 0.5; y_max += 0.5; }
  const double y_pad = 0.05 * (y_max - y_min);
  y_min -= y_pad;
  y_max += y_pad;

  const int ml = 78, mr = 24, mt = 46, mb = 58;  // margins
  cv::Mat canvas(height, width, CV_8UC3, cv::Scalar(255, 255, 255));
  const auto to_px = [&](double x, double y) {
    const int px = ml + static_cast<int>(std::lround((x - x_min) / (x_max - x_min) *
                                                     (width - ml - mr)));
    const int py = height - mb -
                   static_cast<int>(std::lround((y - y_min) / (y_max - y_min) *
                                                (height - mt - mb)));
    return cv::Point(px, py);
  };

  const cv::Scalar axis(60, 60, 60), grid(225, 225, 225), text(30, 30, 30);
  const int font = cv::FONT_HERSHEY_SIMPLEX;
  for (int t = 0; t <= 5; ++t) {  // grid + tick labels
    const double fx = x_min + (x_max - x_min) * t / 5.0;
    const double fy = y_min + (y_max - y_min) * t / 5.0;
    const cv::Point px = to_px(fx, y_min), py = to_px(x_min, fy);
    cv::line(canvas, {px.x, mt}, {px.x, height - mb}, grid, 1, cv::LINE_AA);
    cv::line(canvas, {ml, py.y}, {width - mr, py.y}, grid, 1, cv::LINE_AA);
    cv::putText(canvas, plot_detail::tick_label(fx), {px.x - 16, height - mb + 18}, font, 0.38,
                text, 1, cv::LINE_AA);
    cv::putText(canvas, plot_detail::tick_label(fy), {6, py.y + 4}, font, 0.38, text, 1,
                cv::LINE_AA);
  }
  cv::line(canvas, {ml, height - mb}, {width - mr, height - mb}, axis, 1, cv::LINE_AA);
  cv::line(canvas, {ml, mt}, {ml, height - mb}, axis, 1, cv::LINE_AA);
  cv::putText(canvas, title, {ml, 26}, font, 0.6, text, 1, cv::LINE_AA);
  cv::putText(canvas, x_label, {(ml + width - mr) / 2 - 20, height - 12}, font, 0.45, text, 1,
              cv::LINE_AA);
  cv::putText(canvas, y_label, {6, mt - 8}, font, 0.45, text, 1, cv::LINE_AA);

  for (size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const cv::Scalar color = plot_detail::palette()[si % plot_detail::palette().size()];
    cv::Point prev;
    bool have_prev = false;
    for (size_t i = 0; i < s.xs.size() && i < s.ys.size(); ++i) {
      if (!std::isfinite(s.xs[i]) || !std::isfinite(s.ys[i])) {
        have_prev = false;  // break the polyline at non-finite samples
        continue;
      }
      const cv::Point p = to_px(s.xs[i], s.ys[i]);
      if (have_prev) cv::line(canvas, prev, p, color, 2, cv::LINE_AA);
      if (s.markers) cv::circle(canvas, p, 3, color, cv::FILLED, cv::LINE_AA);
      prev = p;
      have_prev = true;
    }
    // Legend entry, top-right column.
    const int ly = mt + 16 + static_cast<int>(si) * 18;
    const int lx = width - mr - 190;
    cv::line(canvas, {lx, ly - 4}, {lx + 26, ly - 4}, color, 2, cv::LINE_AA);
    cv::putText(canvas, s.label, {lx + 34, ly}, font, 0.42, text, 1, cv::LINE_AA);
  }

  std::filesystem::create_directories(std::filesystem::path(path).parent_path());
  if (!cv::imwrite(path, canvas))
    throw std::runtime_error("draw_line_chart: cannot write " + path);
}

namespace plot_detail {

/// Label mask -> display colors: background dark gray, classes on the shared
/// hue wheel, ignored pixels white.
inline cv::Mat mask_to_color(const LabelMask& mask, int64_t num_classes, int32_t ignore_index) {
  const int h = static_cast<int>(mask.height()), w = static_cast<int>(mask.width());
  cv::Mat bgr(h, w, CV_8UC3);
  for (int r = 0; r < h; ++r) {
    cv::Vec3b* row = bgr.ptr<cv::Vec3b>(r);
    for (int c = 0; c < w; ++c) {
      const int32_t cls = mask.data[static_cast<int64_t>(r) * w + c];
      if (cls == ignore_index) {
        row[c] = {255, 255, 255};
      } else if (cls == 0) {
        row[c] = {45, 45, 45};
      } else {
        const cycleseg::detail::Rgb col = cycleseg::detail::class_color(cls, num_classes);
        row[c] = {static_cast<uchar>(col.b * 255), static_cast<uchar>(col.g * 255),
                  static_cast<uchar>(col.r * 255)};
      }
    }
  }
  return bgr;
}

/// Normalized image [-1,1] -> displayable BGR.
inline cv::Mat image_to_bgr(const Image& img) {
  Tensor<float> raw = img.data.clone();
  for (int64_t i = 0; i < raw.numel(); ++i) raw.data()[i] = (raw.data()[i] + 1.0f) * 127.5f;
  return cycleseg::detail::chw_to_mat(raw);
}

}  // namespace plot_detail

/// Writes rows of [input | ground truth | prediction] panels for the chosen
/// dataset items, predictions taken from the given segmentation generator.
inline void draw_qualitative_panel(const std::string& path, Network<float>& g_is,
                                   const LoadedDataset& data,
                                   const std::vector<int64_t>& indices, int upscale = 2) {
  if (indices.empty()) throw std::invalid_argument("draw_qualitative_panel: no items selected");
  ad::NoGradGuard ng;
  const int gap = 4, header = 22;
  std::vector<cv::Mat> rows;
  for (int64_t idx : indices) {
    if (idx < 0 || idx >= data.size())
      throw std::invalid_argument("draw_qualitative_panel: item index out of range");
    const DatasetItem& item = data.items[static_cast<size_t>(idx)];
    Tensor<float> input = item.image.data.clone();
    const int64_t c = item.image.channels(), h = item.image.height(), w = item.image.width();
    Tensor<float> batched(Shape{1, c, h, w});
    std::memcpy(batched.data(), input.data(), sizeof(float) * static_cast<size_t>(input.numel()));
    const Tensor<float> probs =
        g_is.forward(ad::Var<float>::leaf(std::move(batched)), nn::kEval).value();
    Tensor<float> slice(Shape{data.spec.num_classes, h, w});
    std::memcpy(slice.data(), probs.data(), sizeof(float) * static_cast<size_t>(slice.numel()));
    const LabelMask pred = argmax_labels(ProbMap{std::move(slice)});

    std::vector<cv::Mat> panels = {
        plot_detail::image_to_bgr(item.image),
        plot_detail::mask_to_color(item.mask, data.spec.num_classes, data.spec.ignore_index),
        plot_detail::mask_to_color(pred, data.spec.num_classes, data.spec.ignore_index)};
    cv::Mat row(static_cast<int>(h) * upscale,
                (static_cast<int>(w) * upscale + gap) * 3 - gap, CV_8UC3,
                cv::Scalar(255, 255, 255));
    for (int p = 0; p < 3; ++p) {
      cv::Mat scaled;
      cv::resize(panels[static_cast<size_t>(p)], scaled, {}, upscale, upscale, cv::INTER_NEAREST);
      scaled.copyTo(row(cv::Rect(p * (scaled.cols + gap), 0, scaled.cols, scaled.rows)));
    }
    rows.push_back(row);
  }

  cv::Mat sheet(header + static_cast<int>(rows.size()) * (rows.front().rows + gap) - gap,
                rows.front().cols, CV_8UC3, cv::Scalar(255, 255, 255));
  const int panel_w = (rows.front().cols + gap) / 3;
  const char* titles[3] = {"input", "ground truth", "prediction"};
  for (int p = 0; p < 3; ++p)
    cv::putText(sheet, titles[p], {p * panel_w + 4, header - 7}, cv::FONT_HERSHEY_SIMPLEX, 0.45,
                cv::Scalar(30, 30, 30), 1, cv::LINE_AA);
  for (size_t i = 0; i < rows.size(); ++i)
    rows[i].copyTo(sheet(cv::Rect(0, header + static_cast<int>(i) * (rows[i].rows + gap),
                                  rows[i].cols, rows[i].rows)));

  std::filesystem::create_directories(std::filesystem::path(path).parent_path());
  if (!cv::imwrite(path, sheet))
    throw std::runtime_error("draw_qualitative_panel: cannot write " + path);
}

}  // namespace cycleseg::experiments
