#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "refineseg/seedgen.hpp"
#include "test_util.hpp"

using namespace refineseg;
using namespace refineseg::testing;

namespace {

std::set<Point> as_set(const PointList& p) { return {p.begin(), p.end()}; }

}  // namespace

TEST(TrainingSeeds, SubtractionOracleOnRandomPairs) {
  Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    const int h = 8 + static_cast<int>(rng.below(57));
    const int w = 8 + static_cast<int>(rng.below(57));
    const BinaryMask gt = random_blobs(rng, h, w, 1 + static_cast<int>(rng.below(3)));
    BinaryMask pred = t % 4 == 0 ? random_mask(rng, h, w, 0.3)
                                 : random_blobs(rng, h, w, 1 + static_cast<int>(rng.below(3)));
    const int min_region = 1 + static_cast<int>(rng.below(5));
    const SeedSet s = generate_training_seeds(pred, gt, min_region);
    for (const Point& p : s.background) {
      ASSERT_EQ(static_cast<int>(pred[p]) - static_cast<int>(gt[p]), 1) << t;
    }
    for (const Point& p : s.foreground) {
      ASSERT_EQ(static_cast<int>(pred[p]) - static_cast<int>(gt[p]), -1) << t;
    }
    // Every disagreement region of at least min_region pixels carries a
    // seed of its own sign; smaller ones carry none.
    const SignedMask d = subtraction_mask(pred, gt);
    for (int sign : {1, -1}) {
      const BinaryMask region = sign > 0 ? d.positive() : d.negative();
      const PointList& seeds = sign > 0 ? s.background : s.foreground;
      int n = 0;
      const Grid<int> labels = label_components(region, &n);
      std::vector<int> size(n + 1, 0), hits(n + 1, 0);
      for (int v : labels.values) ++size[v];
      for (const Point& p : seeds) ++hits[labels[p]];
      for (int k = 1; k <= n; ++k) {
        ASSERT_EQ(hits[k] > 0, size[k] >= min_region) << t << " sign " << sign;
      }
    }
    ASSERT_TRUE(generate_training_seeds(gt, gt, min_region).empty());
    ASSERT_TRUE(generate_training_seeds(pred, pred, 1).empty());
  }
}

TEST(TrainingSeeds, SpuriousRectangleGivesItsSkeletonAsBackground) {
  BinaryMask gt = disk_mask(24, 24, 6, 6, 4);
  BinaryMask pred = gt;
  // 3x7 rectangle rows 15..17, cols 10..16, away from the disk.
  for (int r = 15; r <= 17; ++r) {
    for (int c = 10; c <= 16; ++c) pred.at(r, c) = 1;
  }
  const SeedSet s = generate_training_seeds(pred, gt, 1);
  EXPECT_TRUE(s.foreground.empty());
  // Thinning a solid 3x7 block leaves its middle row minus the two ends
  // (same as the rect_3x7 reference fixture).
  EXPECT_EQ(s.background, (PointList{{16, 11}, {16, 12}, {16, 13}, {16, 14}}));
}

TEST(TrainingSeeds, MissedDiskGivesForegroundSeeds) {
  const BinaryMask gt = disk_mask(32, 32, 16, 16, 10);
  BinaryMask pred = gt;
  const BinaryMask hole = disk_mask(32, 32, 16, 16, 4);
  for (size_t i = 0; i < pred.values.size(); ++i) pred.values[i] &= !hole.values[i];
  const SeedSet s = generate_training_seeds(pred, gt);
  EXPECT_TRUE(s.background.empty());
  ASSERT_FALSE(s.foreground.empty());
  const SignedMask d = subtraction_mask(pred, gt);
  for (const Point& p : s.foreground) EXPECT_EQ(d[p], -1);
  EXPECT_EQ(as_set(s.foreground), as_set(mask_to_points(skeletonize(hole))));
}

TEST(TrainingSeeds, SmallRegionsIgnored) {
  BinaryMask gt(16, 16), pred(16, 16);
  pred.at(3, 3) = 1;  // 1-pixel over-segmentation
  pred.at(10, 10) = pred.at(10, 11) = pred.at(11, 10) = pred.at(11, 11) = 1;
  EXPECT_EQ(generate_training_seeds(pred, gt, 4).background.size(), 1u);
  EXPECT_EQ(generate_training_seeds(pred, gt, 5).background.size(), 0u);
  EXPECT_EQ(generate_training_seeds(pred, gt, 1).background.size(), 2u);
}

TEST(TrainingSeeds, CountsMonotoneInMinRegion) {
  Rng rng(31);
  for (int t = 0; t < 50; ++t) {
    const BinaryMask gt = random_blobs(rng, 40, 40, 3);
    const BinaryMask pred = random_mask(rng, 40, 40, 0.2);
    size_t prev = SIZE_MAX;
    for (int min_region : {1, 2, 3, 5, 8, 20, 100}) {
      const SeedSet s = generate_training_seeds(pred, gt, min_region);
      const size_t n = s.foreground.size() + s.background.size();
      ASSERT_LE(n, prev) << t << " min_region " << min_region;
      prev = n;
    }
  }
}

TEST(TrainingSeeds, Errors) {
  EXPECT_THROW(generate_training_seeds(BinaryMask(4, 4), BinaryMask(4, 5)), Error);
  EXPECT_TRUE(generate_training_seeds(BinaryMask(4, 4), BinaryMask(4, 4)).empty());
}

TEST(ReferenceSeeds, DiskSkeletonAndRing) {
  const BinaryMask disk = disk_mask(40, 40, 20, 20, 10);
  const SeedSet s = seeds_from_reference_slice(disk, 2);
  EXPECT_EQ(s.foreground, mask_to_points(skeletonize(disk)));
  EXPECT_EQ(s.background, mask_to_points(dilation_boundary(disk, 2)));
  for (const Point& p : s.background) EXPECT_EQ(disk[p], 0);
  for (const Point& p : s.foreground) EXPECT_EQ(disk[p], 1);
  // Ring pixels lie exactly two dilation steps out.
  const BinaryMask one = dilate(disk, 1);
  for (const Point& p : s.background) EXPECT_EQ(one[p], 0);
}

TEST(ReferenceSeeds, SinglePixel) {
  BinaryMask m(9, 9);
  m.at(4, 4) = 1;
  const SeedSet s = seeds_from_reference_slice(m, 1);
  EXPECT_EQ(s.foreground, (PointList{{4, 4}}));
  EXPECT_EQ(s.background.size(), 8u);
}

TEST(ReferenceSeeds, EmptyAndErrors) {
  EXPECT_TRUE(seeds_from_reference_slice(BinaryMask(8, 8), 3).empty());
  EXPECT_THROW(seeds_from_reference_slice(BinaryMask(8, 8, 1), 0), Error);
}

TEST(Subsample, CapsAndKeepsOrder) {
  SeedSet s;
  for (int i = 0; i < 100; ++i) s.foreground.push_back({i / 10, i % 10});
  for (int i = 0; i < 5; ++i) s.background.push_back({20, i});
  const SeedSet out = subsample_seeds(s, 10, 7);
  EXPECT_EQ(out.foreground.size(), 10u);
  EXPECT_EQ(out.background, s.background);
  EXPECT_TRUE(std::is_sorted(out.foreground.begin(), out.foreground.end()));
  const auto all = as_set(s.foreground);
  for (const Point& p : out.foreground) EXPECT_TRUE(all.count(p));
  EXPECT_EQ(as_set(out.foreground).size(), 10u);
}

TEST(Subsample, DeterministicPerSeed) {
  SeedSet s;
  for (int i = 0; i < 64; ++i) s.background.push_back({i, 0});
  EXPECT_EQ(subsample_seeds(s, 8, 1), subsample_seeds(s, 8, 1));
  EXPECT_NE(subsample_seeds(s, 8, 1), subsample_seeds(s, 8, 2));
  EXPECT_THROW(subsample_seeds(s, 0, 1), Error);
}

TEST(Subsample, RoughlyUniform) {
  SeedSet s;
  for (int i = 0; i < 20; ++i) s.foreground.push_back({0, i});
  std::vector<int> hits(20, 0);
  for (std::uint64_t seed = 0; seed < 4000; ++seed) {
    for (const Point& p : subsample_seeds(s, 5, seed).foreground) ++hits[p.col];
  }
  // Each point is kept with probability 1/4: 1000 expected per point.
  for (int h : hits) {
    EXPECT_GT(h, 850);
    EXPECT_LT(h, 1150);
  }
}

TEST(SeedJson, RoundTripAndErrors) {
  const SeedSet s{{{1, 2}, {3, 4}}, {{5, 6}}};
  EXPECT_EQ(seeds_from_json(seeds_to_json(s)), s);
  EXPECT_EQ(seeds_from_json("{}"), SeedSet{});
  EXPECT_THROW(seeds_from_json("[1,2]"), Error);
  EXPECT_THROW(seeds_from_json("{\"fg\": [[1]]}"), Error);
  EXPECT_THROW(seeds_from_json("{\"fg\": 3}"), Error);
  EXPECT_THROW(seeds_from_json("{\"fg\": [[1, \"a\"]]}"), Error);
  EXPECT_THROW(seeds_from_json("not json"), Error);
}
