#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>
#include <vector>

#include "cycleseg/core/random.hpp"
#include "cycleseg/evaluator/evaluator.hpp"

using namespace cycleseg;

namespace {

LabelMask random_mask(int64_t h, int64_t w, int64_t k, RandomEngine& rng,
                      double ignore_fraction = 0.0, int32_t ignore_index = 255) {
  LabelMask m{Tensor<int32_t>(Shape{h, w})};
  for (int64_t j = 0; j < h * w; ++j) {
    if (ignore_fraction > 0 && rng.uniform() < ignore_fraction)
      m.data[j] = ignore_index;
    else
      m.data[j] = static_cast<int32_t>(rng.uniform_int(k));
  }
  return m;
}

/// Independent oracle: per-class set counting over full-image passes, instead
/// of accumulate's single-pass branching.
struct OracleCounts {
  std::vector<int64_t> tp, fp, fn;
};

OracleCounts oracle_counts(const std::vector<LabelMask>& preds,
                           const std::vector<LabelMask>& truths, int64_t k,
                           int32_t ignore_index) {
  OracleCounts o{std::vector<int64_t>(k, 0), std::vector<int64_t>(k, 0),
                 std::vector<int64_t>(k, 0)};
  for (int64_t c = 0; c < k; ++c) {
    for (size_t i = 0; i < preds.size(); ++i) {
      for (int64_t j = 0; j < preds[i].data.numel(); ++j) {
        const int32_t p = preds[i].data[j], t = truths[i].data[j];
        if (t == ignore_index) continue;
        if (p == c && t == c) ++o.tp[c];
        if (p == c && t != c) ++o.fp[c];
        if (t == c && p != c) ++o.fn[c];
      }
    }
  }
  return o;
}

/// From-scratch mIoU used for the exact-equivalence property.
double oracle_miou(const std::vector<LabelMask>& preds, const std::vector<LabelMask>& truths,
                   int64_t k, int32_t ignore_index) {
  OracleCounts o = oracle_counts(preds, truths, k, ignore_index);
  double sum = 0;
  int64_t present = 0;
  for (int64_t c = 0; c < k; ++c) {
    const int64_t denom = o.tp[c] + o.fp[c] + o.fn[c];
    if (denom == 0) continue;
    sum += static_cast<double>(o.tp[c]) / static_cast<double>(denom);
    ++present;
  }
  return sum / static_cast<double>(present);
}

}  // namespace

TEST(ConfusionTest, PerfectPredictionHasNoErrors) {
  RandomEngine rng(1);
  LabelMask truth = random_mask(6, 6, 3, rng);
  ConfusionAccumulator acc(3);
  accumulate(acc, truth, truth);
  for (int64_t c = 0; c < 3; ++c) {
    EXPECT_EQ(acc.fp[c], 0);
    EXPECT_EQ(acc.fn[c], 0);
  }
  EXPECT_EQ(acc.pixels, 36);
  for (double v : iou_per_class(acc)) {
    if (v != kAbsentIoU) {
      EXPECT_EQ(v, 1.0);
    }
  }
  EXPECT_EQ(mean_iou(acc), 1.0);
}

TEST(ConfusionTest, TotalDisagreementCounts) {
  LabelMask truth{Tensor<int32_t>(Shape{2, 2})};
  LabelMask pred{Tensor<int32_t>::full(Shape{2, 2}, 1)};
  ConfusionAccumulator acc(3);
  accumulate(acc, pred, truth);
  EXPECT_EQ(acc.fp[1], 4);
  EXPECT_EQ(acc.fn[0], 4);
  for (int64_t c = 0; c < 3; ++c) EXPECT_EQ(acc.tp[c], 0);
  auto iou = iou_per_class(acc);
  EXPECT_EQ(iou[0], 0.0);
  EXPECT_EQ(iou[1], 0.0);
  EXPECT_EQ(iou[2], kAbsentIoU);
  EXPECT_EQ(mean_iou(acc), 0.0);
}

TEST(ConfusionTest, MatchesTripleCounterLoopOracle) {
  RandomEngine rng(2);
  std::vector<LabelMask> preds, truths;
  for (int i = 0; i < 3; ++i) {
    preds.push_back(random_mask(8, 8, 4, rng));
    truths.push_back(random_mask(8, 8, 4, rng));
  }
  ConfusionAccumulator acc(4);
  for (size_t i = 0; i < preds.size(); ++i) accumulate(acc, preds[i], truths[i]);
  OracleCounts o = oracle_counts(preds, truths, 4, 255);
  EXPECT_EQ(acc.tp, o.tp);
  EXPECT_EQ(acc.fp, o.fp);
  EXPECT_EQ(acc.fn, o.fn);
}

TEST(ConfusionTest, IgnoredPixelsTouchNoCounter) {
  RandomEngine rng(3);
  LabelMask truth = random_mask(8, 8, 3, rng, 0.3);
  LabelMask pred = random_mask(8, 8, 3, rng);
  ConfusionAccumulator acc(3);
  accumulate(acc, pred, truth);

  int64_t expected_pixels = 0;
  for (int64_t j = 0; j < 64; ++j)
    if (truth.data[j] != 255) ++expected_pixels;
  EXPECT_EQ(acc.pixels, expected_pixels);

  OracleCounts o = oracle_counts({pred}, {truth}, 3, 255);
  EXPECT_EQ(acc.tp, o.tp);
  EXPECT_EQ(acc.fp, o.fp);
  EXPECT_EQ(acc.fn, o.fn);
}

TEST(ConfusionTest, RejectsShapeMismatchAndOutOfRange) {
  ConfusionAccumulator acc(3);
  LabelMask a{Tensor<int32_t>(Shape{2, 2})};
  LabelMask b{Tensor<int32_t>(Shape{2, 3})};
  EXPECT_THROW(accumulate(acc, a, b), std::invalid_argument);
  LabelMask bad{Tensor<int32_t>::full(Shape{2, 2}, 7)};
  EXPECT_THROW(accumulate(acc, a, bad), std::invalid_argument);
}

TEST(ConfusionTest, AccumulationIsOrderIndependentAndMergeable) {
  RandomEngine rng(4);
  std::vector<LabelMask> preds, truths;
  for (int i = 0; i < 6; ++i) {
    preds.push_back(random_mask(5, 7, 4, rng));
    truths.push_back(random_mask(5, 7, 4, rng, 0.1));
  }

  ConfusionAccumulator forward(4), reversed(4);
  for (size_t i = 0; i < preds.size(); ++i) accumulate(forward, preds[i], truths[i]);
  for (size_t i = preds.size(); i-- > 0;) accumulate(reversed, preds[i], truths[i]);
  EXPECT_EQ(forward.tp, reversed.tp);
  EXPECT_EQ(forward.fp, reversed.fp);
  EXPECT_EQ(forward.fn, reversed.fn);

  ConfusionAccumulator shard_a(4), shard_b(4);
  for (size_t i = 0; i < 3; ++i) accumulate(shard_a, preds[i], truths[i]);
  for (size_t i = 3; i < 6; ++i) accumulate(shard_b, preds[i], truths[i]);
  merge(shard_a, shard_b);
  EXPECT_EQ(shard_a.tp, forward.tp);
  EXPECT_EQ(shard_a.fp, forward.fp);
  EXPECT_EQ(shard_a.fn, forward.fn);
  EXPECT_EQ(shard_a.pixels, forward.pixels);
}

TEST(IouTest, ArithmeticCases) {
  ConfusionAccumulator acc(2);
  acc.tp[0] = 2;
  acc.fp[0] = 1;
  acc.fn[0] = 1;
  EXPECT_EQ(iou_per_class(acc)[0], 0.5);

  // Two classes with IoU 0.5 and 0.25 -> mean 0.375.
  acc.tp[1] = 1;
  acc.fp[1] = 2;
  acc.fn[1] = 1;
  EXPECT_EQ(iou_per_class(acc)[1], 0.25);
  EXPECT_EQ(mean_iou(acc), 0.375);
}

TEST(IouTest, SubsetSelectionAndAbsentSkipping) {
  ConfusionAccumulator acc(4);
  acc.tp[0] = 4;            // IoU 1.0
  acc.tp[1] = 1;
  acc.fp[1] = 1;            // IoU 0.5
  acc.fn[2] = 2;            // IoU 0.0
  // class 3 absent
  EXPECT_EQ(mean_iou(acc), 0.5);                        // (1.0 + 0.5 + 0.0) / 3
  EXPECT_EQ(mean_iou(acc, {1, 2}), 0.25);               // background excluded
  EXPECT_EQ(mean_iou(acc, {1, 3}), 0.5);                // absent class skipped
  EXPECT_THROW(mean_iou(acc, {3}), std::invalid_argument);
  EXPECT_THROW(mean_iou(acc, {5}), std::invalid_argument);
}

TEST(IouTest, BoundsHoldOnRandomData) {
  RandomEngine rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    ConfusionAccumulator acc(5);
    for (int i = 0; i < 4; ++i)
      accumulate(acc, random_mask(9, 9, 5, rng), random_mask(9, 9, 5, rng, 0.2));
    for (double v : iou_per_class(acc)) {
      if (v == kAbsentIoU) continue;
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    const double m = mean_iou(acc);
    EXPECT_GE(m, 0.0);
    EXPECT_LE(m, 1.0);
  }
}

TEST(IouTest, ExactlyMatchesBruteForceOnSmallInstances) {
  RandomEngine rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const int64_t k = 2 + rng.uniform_int(4);
    const int64_t h = 2 + rng.uniform_int(15);
    const int64_t w = 2 + rng.uniform_int(15);
    const int n = 1 + static_cast<int>(rng.uniform_int(10));
    const bool with_ignore = trial % 2 == 0;

    std::vector<LabelMask> preds, truths;
    ConfusionAccumulator acc(k);
    for (int i = 0; i < n; ++i) {
      preds.push_back(random_mask(h, w, k, rng));
      truths.push_back(random_mask(h, w, k, rng, with_ignore ? 0.25 : 0.0));
      accumulate(acc, preds.back(), truths.back());
    }
    // Integer counters on both sides: the division sequences are identical,
    // so the doubles must match bit for bit.
    EXPECT_EQ(mean_iou(acc), oracle_miou(preds, truths, k, 255));
  }
}

TEST(ReportTest, TextAndCsvTablesCarryAllCells) {
  std::vector<IouReportColumn> cols(2);
  cols[0] = {"0.1", {0.5, kAbsentIoU, 0.25}, 0.375};
  cols[1] = {"1.0", {0.9, 0.8, 0.7}, 0.8};

  std::ostringstream text;
  write_iou_report_text(text, cols);
  const std::string t = text.str();
  EXPECT_NE(t.find("0.5000"), std::string::npos);
  EXPECT_NE(t.find("absent"), std::string::npos);
  EXPECT_NE(t.find("mean"), std::string::npos);

  std::ostringstream csv;
  write_iou_report_csv(csv, cols);
  std::istringstream lines(csv.str());
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(line, "class,0.1,1.0");
  std::getline(lines, line);
  EXPECT_EQ(line, "0,0.5000,0.9000");
  std::getline(lines, line);
  EXPECT_EQ(line, "1,absent,0.8000");
  std::getline(lines, line);
  EXPECT_EQ(line, "2,0.2500,0.7000");
  std::getline(lines, line);
  EXPECT_EQ(line, "mean,0.3750,0.8000");

  EXPECT_THROW(write_iou_report_text(text, {}), std::invalid_argument);
}
