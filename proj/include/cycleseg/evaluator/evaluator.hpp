#pragma once

#include <cstdint>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cycleseg/core/types.hpp"

namespace cycleseg {

/// IoU value reported for classes that never appear in either prediction or
/// ground truth (zero denominator). Such classes are skipped by mean_iou.
inline constexpr double kAbsentIoU = -1.0;

/// Per-class TP/FP/FN pixel counters over a validation set.
struct ConfusionAccumulator {
  std::vector<int64_t> tp, fp, fn;
  int64_t pixels = 0;  // non-ignored pixels processed

  explicit ConfusionAccumulator(int64_t num_classes)
      : tp(static_cast<size_t>(num_classes), 0),
        fp(static_cast<size_t>(num_classes), 0),
        fn(static_cast<size_t>(num_classes), 0) {
    if (num_classes <= 0)
      throw std::invalid_argument("ConfusionAccumulator: need at least one class");
  }

  int64_t num_classes() const { return static_cast<int64_t>(tp.size()); }
};

/// Folds one prediction/ground-truth pair into the counters. Pixels whose
/// ground truth equals ignore_index contribute nothing.
inline void accumulate(ConfusionAccumulator& acc, const LabelMask& pred, const LabelMask& truth,
                       int32_t ignore_index = 255) {
  if (pred.data.shape() != truth.data.shape()) {
    throw std::invalid_argument("accumulate: prediction shape " + pred.data.shape().str() +
                                " does not match ground-truth shape " + truth.data.shape().str());
  }
  const int64_t k = acc.num_classes();
  for (int64_t j = 0; j < truth.data.numel(); ++j) {
    const int32_t t = truth.data[j];
    if (t == ignore_index) continue;
    const int32_t p = pred.data[j];
    if (t < 0 || t >= k || p < 0 || p >= k) {
      throw std::invalid_argument("accumulate: class index out of range at pixel " +
                                  std::to_string(j) + " (truth " + std::to_string(t) +
                                  ", prediction " + std::to_string(p) + ", K=" +
                                  std::to_string(k) + ")");
    }
    if (p == t) {
      ++acc.tp[static_cast<size_t>(t)];
    } else {
      ++acc.fp[static_cast<size_t>(p)];
      ++acc.fn[static_cast<size_t>(t)];
    }
    ++acc.pixels;
  }
}

/// Counter addition; associative and commutative, so validation work can be
/// sharded and merged in any order.
inline void merge(ConfusionAccumulator& into, const ConfusionAccumulator& from) {
  if (into.num_classes() != from.num_classes())
    throw std::invalid_argument("merge: accumulators disagree on class count");
  for (size_t i = 0; i < into.tp.size(); ++i) {
    into.tp[i] += from.tp[i];
    into.fp[i] += from.fp[i];
    into.fn[i] += from.fn[i];
  }
  into.pixels += from.pixels;
}

/// IoU[k] = TP / (TP + FP + FN); classes the set never saw get kAbsentIoU.
inline std::vector<double> iou_per_class(const ConfusionAccumulator& acc) {
  std::vector<double> out(acc.tp.size(), kAbsentIoU);
  for (size_t i = 0; i < acc.tp.size(); ++i) {
    const int64_t denom = acc.tp[i] + acc.fp[i] + acc.fn[i];
    if (denom > 0) out[i] = static_cast<double>(acc.tp[i]) / static_cast<double>(denom);
  }
  return out;
}

/// Mean IoU over `class_subset` (all classes if empty), skipping absent ones.
inline double mean_iou(const ConfusionAccumulator& acc,
                       const std::vector<int64_t>& class_subset = {}) {
  const std::vector<double> iou = iou_per_class(acc);
  std::vector<int64_t> subset = class_subset;
  if (subset.empty())
    for (int64_t i = 0; i < acc.num_classes(); ++i) subset.push_back(i);
  double sum = 0;
  int64_t n = 0;
  for (int64_t c : subset) {
    if (c < 0 || c >= acc.num_classes())
      throw std::invalid_argument("mean_iou: class " + std::to_string(c) + " outside [0, " +
                                  std::to_string(acc.num_classes()) + ")");
    if (iou[static_cast<size_t>(c)] == kAbsentIoU) continue;
    sum += iou[static_cast<size_t>(c)];
    ++n;
  }
  if (n == 0)
    throw std::invalid_argument("mean_iou: every class in the subset is absent from the data");
  return sum / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Report emission: one row per class, one column per named run, plus a mean
// row. Text output is column-aligned; CSV is the same table machine-readable.
// ---------------------------------------------------------------------------

struct IouReportColumn {
  std::string name;                // e.g. a labeled fraction or run label
  std::vector<double> iou;         // per-class, kAbsentIoU allowed
  double mean = 0;
};

namespace detail {
inline std::string format_iou(double v) {
  if (v == kAbsentIoU) return "absent";
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << v;
  return os.str();
}
}  // namespace detail

inline void write_iou_report_text(std::ostream& os, const std::vector<IouReportColumn>& cols) {
  if (cols.empty()) throw std::invalid_argument("write_iou_report_text: no columns");
  const size_t k = cols.front().iou.size();
  for (const auto& c : cols)
    if (c.iou.size() != k)
      throw std::invalid_argument("write_iou_report_text: column " + c.name +
                                  " has inconsistent class count");
  os << std::left << std::setw(8) << "class";
  for (const auto& c : cols) os << std::right << std::setw(12) << c.name;
  os << "\n";
  for (size_t i = 0; i < k; ++i) {
    os << std::left << std::setw(8) << i;
    for (const auto& c : cols) os << std::right << std::setw(12) << detail::format_iou(c.iou[i]);
    os << "\n";
  }
  os << std::left << std::setw(8) << "mean";
  for (const auto& c : cols) os << std::right << std::setw(12) << detail::format_iou(c.mean);
  os << "\n";
}

inline void write_iou_report_csv(std::ostream& os, const std::vector<IouReportColumn>& cols) {
  if (cols.empty()) throw std::invalid_argument("write_iou_report_csv: no columns");
  const size_t k = cols.front().iou.size();
  os << "class";
  for (const auto& c : cols) os << "," << c.name;
  os << "\n";
  for (size_t i = 0; i < k; ++i) {
    os << i;
    for (const auto& c : cols) os << "," << detail::format_iou(c.iou[i]);
    os << "\n";
  }
  os << "mean";
  for (const auto& c : cols) os << "," << detail::format_iou(c.mean);
  os << "\n";
}

}  // namespace cycleseg
