#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "cycleseg/experiments/config.hpp"

namespace cycleseg::experiments {

/// Published PASCAL VOC 2012 reference results reported alongside desk-scale
/// numbers for orientation. Desk-scale runs use a synthetic dataset and a
/// reduced schedule, so only the direction of the comparisons is expected to
/// transfer, never the absolute values.
struct VocReferenceRow {
  double fraction;
  double partial;  // supervised baseline on the labeled subset only
  double ours;     // full semi-supervised model
};

inline const std::vector<VocReferenceRow>& voc_reference_table() {
  static const std::vector<VocReferenceRow> rows = {
      {0.1, 0.2158, 0.2543},
      {0.2, 0.2688, 0.2981},
      {0.3, 0.3237, 0.3514},
      {0.5, 0.4108, 0.4197},
  };
  return rows;
}

inline constexpr double kVocReferenceFullyLabeled = 0.5543;

/// Published VOC mIoU at the 20% labeled fraction for the full model and the
/// four single-term ablations.
inline double voc_reference_ablation(AblationTarget t) {
  switch (t) {
    case AblationTarget::none: return 0.2981;
    case AblationTarget::cycle_labels: return 0.2627;
    case AblationTarget::cycle_image: return 0.2733;
    case AblationTarget::disc_labels: return 0.2614;
    case AblationTarget::disc_image: return 0.2543;
  }
  return 0.0;
}

/// Looks up the VOC reference row for a labeled fraction; returns nullptr for
/// fractions the published table does not cover.
inline const VocReferenceRow* voc_reference_for_fraction(double fraction) {
  for (const auto& row : voc_reference_table())
    if (std::abs(row.fraction - fraction) < 1e-9) return &row;
  return nullptr;
}

namespace detail {

inline std::string fmt4(double v) {
  if (!std::isfinite(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

inline std::string pad(const std::string& s, size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

}  // namespace detail

/// One row of a results table: a label, per-seed scores, and an optional
/// external reference value (negative = none).
struct ResultRow {
  std::string label;
  std::vector<double> seed_scores;
  double reference = -1.0;

  double mean() const {
    double s = 0;
    for (double v : seed_scores) s += v;
    return seed_scores.empty() ? 0.0 : s / static_cast<double>(seed_scores.size());
  }
  /// Half the spread between the best and worst seed.
  double half_range() const {
    if (seed_scores.size() < 2) return 0.0;
    const auto [lo, hi] = std::minmax_element(seed_scores.begin(), seed_scores.end());
    return (*hi - *lo) / 2.0;
  }
};

/// Renders rows as `label  mean ± half-range  [per-seed ...]  reference`.
inline void write_result_table(std::ostream& os, const std::string& title,
                               const std::string& reference_header,
                               const std::vector<ResultRow>& rows) {
  size_t label_w = 12;
  for (const auto& r : rows) label_w = std::max(label_w, r.label.size());
  os << title << "\n";
  os << detail::pad("run", label_w + 2) << detail::pad("mIoU (mean +/- range/2)", 26)
     << detail::pad("seeds", 10 * (rows.empty() ? 1 : rows.front().seed_scores.size()) + 2)
     << reference_header << "\n";
  for (const auto& r : rows) {
    os << detail::pad(r.label, label_w + 2);
    os << detail::pad(detail::fmt4(r.mean()) + " +/- " + detail::fmt4(r.half_range()), 26);
    std::string seeds;
    for (double v : r.seed_scores) seeds += detail::fmt4(v) + "  ";
    os << detail::pad(seeds, 10 * (rows.empty() ? 1 : rows.front().seed_scores.size()) + 2);
    os << (r.reference >= 0 ? detail::fmt4(r.reference) : std::string("-")) << "\n";
  }
}

/// CSV twin of write_result_table: label,mean,half_range,seed_0..,reference.
inline void write_result_csv(std::ostream& os, const std::vector<ResultRow>& rows) {
  size_t n_seeds = 0;
  for (const auto& r : rows) n_seeds = std::max(n_seeds, r.seed_scores.size());
  os << "run,mean_miou,half_range";
  for (size_t i = 0; i < n_seeds; ++i) os << ",seed_" << i;
  os << ",reference\n";
  for (const auto& r : rows) {
    os << r.label << "," << detail::fmt4(r.mean()) << "," << detail::fmt4(r.half_range());
    for (size_t i = 0; i < n_seeds; ++i)
      os << "," << (i < r.seed_scores.size() ? detail::fmt4(r.seed_scores[i]) : "");
    os << "," << (r.reference >= 0 ? detail::fmt4(r.reference) : "") << "\n";
  }
}

}  // namespace cycleseg::experiments
