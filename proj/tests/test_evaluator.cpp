#include <gtest/gtest.h>

#include "refineseg/evaluator.hpp"
#include "test_util.hpp"

using namespace refineseg;
using namespace refineseg::testing;

namespace {

void expect_metrics(const MetricsRecord& m, double dice, double sen, double ppv) {
  EXPECT_NEAR(m.dice, dice, 1e-12);
  EXPECT_NEAR(m.sen, sen, 1e-12);
  EXPECT_NEAR(m.ppv, ppv, 1e-12);
}

}  // namespace

TEST(Metrics, IdenticalAndDisjoint) {
  const BinaryMask a = disk_mask(20, 20, 10, 10, 5);
  expect_metrics(metrics(a, a), 1, 1, 1);
  const BinaryMask b = disk_mask(20, 20, 2, 2, 1);
  expect_metrics(metrics(a, b), 0, 0, 0);
}

TEST(Metrics, HalfOverlapSquare) {
  const BinaryMask gt = mask_from_rows({"0000", "0110", "0110", "0000"});
  const BinaryMask pred = mask_from_rows({"0000", "0011", "0011", "0000"});
  const ConfusionCounts c = confusion(pred, gt);
  EXPECT_EQ(c.tp, 2);
  EXPECT_EQ(c.fp, 2);
  EXPECT_EQ(c.fn, 2);
  expect_metrics(metrics(pred, gt), 0.5, 0.5, 0.5);
}

TEST(Metrics, HandCountedAsymmetric) {
  // gt has 6 pixels, pred has 4, overlap 3.
  const BinaryMask gt = mask_from_rows({"111", "111", "000"});
  const BinaryMask pred = mask_from_rows({"110", "100", "100"});
  // TP=3, FP=1, FN=3.
  expect_metrics(metrics(pred, gt), 6.0 / 10.0, 3.0 / 6.0, 3.0 / 4.0);
}

TEST(Metrics, DegenerateConventions) {
  const BinaryMask empty(5, 5);
  const BinaryMask some = mask_from_rows({"10000", "00000", "00000", "00000", "00000"});
  expect_metrics(metrics(empty, empty), 1, 1, 1);
  expect_metrics(metrics(empty, some), 0, 0, 0);
  expect_metrics(metrics(some, empty), 0, 0, 0);
}

TEST(Metrics, ShapeMismatch) {
  try {
    metrics(BinaryMask(3, 3), BinaryMask(3, 4));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShapeMismatch);
  }
}

TEST(Metrics, RandomPropertiesAgainstDirectCounting) {
  Rng rng(5);
  for (int t = 0; t < 300; ++t) {
    const int h = 1 + static_cast<int>(rng.below(30));
    const int w = 1 + static_cast<int>(rng.below(30));
    const BinaryMask a = random_mask(rng, h, w, rng.uniform());
    const BinaryMask b = random_mask(rng, h, w, rng.uniform());
    long long tp = 0, fp = 0, fn = 0;
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        tp += a.at(r, c) && b.at(r, c);
        fp += a.at(r, c) && !b.at(r, c);
        fn += !a.at(r, c) && b.at(r, c);
      }
    }
    const MetricsRecord ab = metrics(a, b), ba = metrics(b, a);
    if (tp + fp + fn > 0) {
      ASSERT_NEAR(ab.dice, 2.0 * tp / (2.0 * tp + fp + fn), 1e-12);
    }
    ASSERT_EQ(ab.dice, ba.dice);
    ASSERT_EQ(ab.sen, ba.ppv);
    ASSERT_EQ(ab.ppv, ba.sen);
    for (double v : {ab.dice, ab.sen, ab.ppv}) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
    }
  }
}

TEST(EvaluateVolume, PoolsCounts) {
  const BinaryMask gt = disk_mask(16, 16, 8, 8, 4);
  const std::vector<BinaryMask> g{gt, gt};
  expect_metrics(evaluate_volume(g, g), 1, 1, 1);
  // One perfect slice, one empty prediction over an equal-area gt.
  const std::vector<BinaryMask> p{gt, BinaryMask(16, 16)};
  expect_metrics(evaluate_volume(p, g), 2.0 / 3.0, 0.5, 1.0);
}

TEST(EvaluateVolume, SingleSliceAndIdenticalSlices) {
  Rng rng(3);
  const BinaryMask a = random_blobs(rng, 20, 20, 2);
  const BinaryMask b = random_blobs(rng, 20, 20, 2);
  const MetricsRecord one = metrics(a, b);
  const MetricsRecord vol1 = evaluate_volume({a}, {b});
  const MetricsRecord vol3 = evaluate_volume({a, a, a}, {b, b, b});
  for (const MetricsRecord& m : {vol1, vol3}) {
    EXPECT_NEAR(m.dice, one.dice, 1e-12);
    EXPECT_NEAR(m.sen, one.sen, 1e-12);
    EXPECT_NEAR(m.ppv, one.ppv, 1e-12);
  }
}

TEST(EvaluateVolume, Errors) {
  EXPECT_THROW(evaluate_volume({BinaryMask(4, 4)}, {}), Error);
  EXPECT_THROW(evaluate_volume({}, {}), Error);
  EXPECT_THROW(evaluate_volume({BinaryMask(4, 4)}, {BinaryMask(4, 5)}), Error);
}
