#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "dff/error.hpp"
#include "dff/segmentation.hpp"
#include "oracles.hpp"

using namespace dff;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected dff::Error";
  return ErrorCode::InvalidArgument;
}

Mask mask_of(std::size_t h, std::size_t w, std::initializer_list<std::uint8_t> v) {
  Mask m(h, w);
  m.values.assign(v);
  return m;
}

Grid grid_of(std::size_t h, std::size_t w, std::initializer_list<float> v) {
  Grid g(h, w);
  g.values.assign(v);
  return g;
}

std::size_t foreground(const BinaryMaskSet& b) {
  std::size_t n = 0;
  for (const Mask& m : b.masks) n += m.count();
  return n;
}

}  // namespace

TEST(Percentile, NearestRank) {
  EXPECT_EQ(nearest_rank_percentile({4, 1, 3, 2}, 50), 2.0f);
  EXPECT_EQ(nearest_rank_percentile({4, 1, 3, 2}, 51), 3.0f);
  EXPECT_EQ(nearest_rank_percentile({4, 1, 3, 2}, 99), 4.0f);
  EXPECT_EQ(nearest_rank_percentile({7}, 1), 7.0f);
}

TEST(Binarize, OneToHundredAtSeventyFifth) {
  // 1..100 spread over four 5x5 maps; tau = 75, so values 75..100 are foreground.
  std::vector<Grid> maps(4, Grid(5, 5));
  for (int v = 1; v <= 100; ++v) maps[(v - 1) / 25].values[(v - 1) % 25] = static_cast<float>(v);
  const auto b = binarize_factor(maps, 75.0, 2);
  EXPECT_EQ(b.factor_id, 2u);
  ASSERT_EQ(b.masks.size(), 4u);
  for (int v = 1; v <= 100; ++v) EXPECT_EQ(b.masks[(v - 1) / 25].values[(v - 1) % 25], v >= 75 ? 1 : 0) << v;
  EXPECT_EQ(foreground(b), 26u);
}

TEST(Binarize, TwoMapsAtMedian) {
  const std::vector<Grid> maps{grid_of(2, 2, {1, 2, 3, 4}), grid_of(2, 2, {5, 6, 7, 8})};
  const auto b = binarize_factor(maps, 50.0);
  EXPECT_EQ(b.masks[0], mask_of(2, 2, {0, 0, 0, 1}));
  EXPECT_EQ(b.masks[1], mask_of(2, 2, {1, 1, 1, 1}));
}

TEST(Binarize, ConstantMapsAreAllForeground) {
  const std::vector<Grid> maps{Grid(3, 3, 0.2f), Grid(2, 4, 0.2f)};
  const auto b = binarize_factor(maps, 75.0);
  EXPECT_EQ(foreground(b), 17u);
}

TEST(Binarize, EmptySet) {
  EXPECT_EQ(code_of([] { binarize_factor(std::vector<Grid>{}, 75.0); }), ErrorCode::EmptySet);
}

TEST(Binarize, RejectsPercentileOutOfRange) {
  const std::vector<Grid> maps{Grid(2, 2, 1.0f)};
  EXPECT_EQ(code_of([&] { binarize_factor(maps, 0.0); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([&] { binarize_factor(maps, 100.0); }), ErrorCode::InvalidArgument);
}

TEST(Binarize, ForegroundBoundedByRankPlusTies) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> levels(0, 9);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Grid> maps(3, Grid(4, 5));
    std::vector<float> all;
    for (auto& m : maps)
      for (auto& v : m.values) all.push_back(v = static_cast<float>(levels(rng)));
    for (double p : {10.0, 50.0, 75.0, 90.0}) {
      const auto b = binarize_factor(maps, p);
      const float tau = nearest_rank_percentile(all, p);
      const auto ties = static_cast<std::size_t>(std::count(all.begin(), all.end(), tau));
      const auto budget = static_cast<std::size_t>(std::ceil((100.0 - p) / 100.0 * all.size()));
      EXPECT_LE(foreground(b), budget + ties);
    }
  }
}

TEST(Binarize, RaisingPercentileNeverAddsForeground) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<float> u(0, 1);
  std::vector<Grid> maps(2, Grid(6, 6));
  for (auto& m : maps)
    for (auto& v : m.values) v = u(rng);
  for (double p = 5; p < 95; p += 5) {
    const auto lo = binarize_factor(maps, p), hi = binarize_factor(maps, p + 5);
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 36; ++j) EXPECT_LE(hi.masks[i].values[j], lo.masks[i].values[j]);
  }
}

TEST(Binarize, StacksSplitPerFactor) {
  const std::vector<HeatMapStack> stacks{{"a", 1, 2, {grid_of(1, 2, {0, 1}), grid_of(1, 2, {1, 0})}}};
  const auto sets = binarize_stacks(stacks, 75.0);
  ASSERT_EQ(sets.size(), 2u);
  EXPECT_EQ(sets[1].factor_id, 1u);
  EXPECT_EQ(sets[0].masks[0], mask_of(1, 2, {0, 1}));
  EXPECT_EQ(sets[1].masks[0], mask_of(1, 2, {1, 0}));
}

TEST(Coverage, Examples) {
  const PartAnnotation p{"head", {mask_of(2, 2, {1, 1, 0, 0}), mask_of(2, 2, {0, 0, 1, 1})}};
  EXPECT_EQ(coverage({0, p.masks}, p), 1.0);
  EXPECT_EQ(coverage({0, {mask_of(2, 2, {0, 0, 1, 1}), mask_of(2, 2, {1, 1, 0, 0})}}, p), 0.0);
  EXPECT_EQ(coverage({0, {mask_of(2, 2, {1, 1, 0, 0}), mask_of(2, 2, {0, 0, 1, 0})}}, p), 0.75);
}

TEST(Coverage, EmptyPart) {
  const PartAnnotation p{"head", {Mask(2, 2)}};
  EXPECT_EQ(code_of([&] { coverage({0, {Mask(2, 2, 1)}}, p); }), ErrorCode::EmptyPart);
}

TEST(AssociateParts, StrictThreshold) {
  EXPECT_EQ(associate_parts({{"head", 0.8}, {"leg", 0.3}}, 0.5), (std::set<std::string>{"head"}));
  EXPECT_TRUE(associate_parts({{"head", 0.5}}, 0.5).empty());
  EXPECT_TRUE(associate_parts({}, 0.5).empty());
}

TEST(DatasetIou, PooledCounts) {
  // image 1: |and| = 2, |or| = 4; image 2: |and| = 1, |or| = 2
  const BinaryMaskSet b{0, {mask_of(2, 2, {1, 1, 1, 0}), mask_of(1, 2, {1, 1})}};
  const std::vector<PartAnnotation> parts{{"p", {mask_of(2, 2, {1, 1, 0, 1}), mask_of(1, 2, {1, 0})}}};
  EXPECT_DOUBLE_EQ(dataset_iou(b, parts), 0.5);
}

TEST(DatasetIou, IdentityAndEmpty) {
  const std::vector<PartAnnotation> parts{{"p", {mask_of(2, 2, {1, 0, 0, 1})}}};
  EXPECT_EQ(dataset_iou({0, parts[0].masks}, parts), 1.0);
  EXPECT_EQ(dataset_iou({0, {Mask(2, 2)}}, parts), 0.0);
  const std::vector<PartAnnotation> empty{{"p", {Mask(2, 2)}}};
  EXPECT_EQ(code_of([&] { dataset_iou({0, {Mask(2, 2)}}, empty); }), ErrorCode::EmptyUnion);
}

TEST(DatasetIou, UnionOfSeveralParts) {
  const std::vector<PartAnnotation> parts{{"a", {mask_of(1, 4, {1, 0, 0, 0})}}, {"b", {mask_of(1, 4, {0, 1, 0, 0})}}};
  EXPECT_DOUBLE_EQ(dataset_iou({0, {mask_of(1, 4, {1, 1, 1, 0})}}, parts), 2.0 / 3.0);
}

TEST(MetricOracles, RandomMasksAgreeExactly) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    const BinaryMaskSet b{0, {oracle::random_mask(rng, 8, 8, 0.4), oracle::random_mask(rng, 8, 8, 0.4)}};
    const std::vector<PartAnnotation> parts{{"p", {oracle::random_mask(rng, 8, 8, 0.3), oracle::random_mask(rng, 8, 8, 0.3)}}};
    long inter = 0, uni = 0, part = 0;
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 64; ++j) {
        const int bv = b.masks[i].values[j], pv = parts[0].masks[i].values[j];
        inter += bv & pv;
        uni += bv | pv;
        part += pv;
      }
    if (part > 0) ASSERT_EQ(coverage(b, parts[0]), static_cast<double>(inter) / static_cast<double>(part));
    if (uni > 0) ASSERT_EQ(dataset_iou(b, parts), static_cast<double>(inter) / static_cast<double>(uni));
  }
}

TEST(ConnectedComponents, DiagonalNeighboursJoin) {
  const auto c = connected_components(mask_of(2, 2, {1, 0, 0, 1}));
  ASSERT_EQ(c.sizes.size(), 1u);
  EXPECT_EQ(c.sizes[0], 2u);
}

TEST(ConnectedComponents, EmptyAndFull) {
  EXPECT_TRUE(connected_components(Mask(3, 4)).sizes.empty());
  const auto full = connected_components(Mask(3, 4, 1));
  ASSERT_EQ(full.sizes.size(), 1u);
  EXPECT_EQ(full.sizes[0], 12u);
}

TEST(ConnectedComponents, AgreesWithFloodFill) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 300; ++trial) {
    const Mask m = oracle::random_mask(rng, 10, 12, 0.35);
    const auto c = connected_components(m);
    const auto ref = oracle::flood_components(m);
    ASSERT_EQ(c.sizes.size(), ref.size());
    for (std::size_t l = 0; l < ref.size(); ++l) {
      ASSERT_EQ(c.sizes[l], ref[l].size());
      for (auto [y, x] : ref[l]) ASSERT_EQ(c.labels[static_cast<std::size_t>(y) * 12 + x], static_cast<int>(l + 1));
    }
  }
}

TEST(LargestComponentBbox, PicksLargest) {
  // 3-pixel component top-left, 5-pixel component on the right.
  const Mask m = mask_of(4, 6, {1, 1, 0, 0, 1, 1,
                                1, 0, 0, 0, 1, 1,
                                0, 0, 0, 0, 0, 1,
                                0, 0, 0, 0, 0, 0});
  EXPECT_EQ(largest_component_bbox(m), (BBox{4, 0, 5, 2}));
}

TEST(LargestComponentBbox, TieGoesToFirstEncountered) {
  const Mask m = mask_of(3, 5, {0, 0, 0, 1, 1,
                                0, 0, 0, 0, 0,
                                1, 1, 0, 0, 0});
  EXPECT_EQ(largest_component_bbox(m), (BBox{3, 0, 4, 0}));
}

TEST(LargestComponentBbox, FullAndEmpty) {
  EXPECT_EQ(largest_component_bbox(Mask(3, 7, 1)), (BBox{0, 0, 6, 2}));
  EXPECT_EQ(code_of([] { largest_component_bbox(Mask(3, 3)); }), ErrorCode::NoForeground);
}

TEST(LargestComponentBbox, AgreesWithFloodFillExtent) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const Mask m = oracle::random_mask(rng, 9, 9, 0.3);
    const auto comps = oracle::flood_components(m);
    if (comps.empty()) continue;
    std::size_t best = 0;
    for (std::size_t l = 1; l < comps.size(); ++l)
      if (comps[l].size() > comps[best].size()) best = l;
    BBox ref{9, 9, -1, -1};
    for (auto [y, x] : comps[best]) {
      ref.x_min = std::min(ref.x_min, x);
      ref.y_min = std::min(ref.y_min, y);
      ref.x_max = std::max(ref.x_max, x);
      ref.y_max = std::max(ref.y_max, y);
    }
    ASSERT_EQ(largest_component_bbox(m), ref);
  }
}

TEST(BoxIou, AgreesWithRasterOracle) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 1000; ++trial) {
    const BBox a = oracle::random_box(rng, 8), b = oracle::random_box(rng, 8);
    ASSERT_DOUBLE_EQ(box_iou(a, b), oracle::box_iou_raster(a, b));
  }
}

TEST(Corloc, Examples) {
  const BBox gt{0, 0, 9, 9};
  // 10x6 inside 10x10: IoU 0.6; 10x4: IoU 0.4
  const std::map<std::string, std::vector<BBox>> gts{{"a", {gt}}, {"b", {gt}}};
  EXPECT_EQ(corloc({{"a", gt}, {"b", gt}}, gts), 100.0);
  EXPECT_EQ(corloc({{"a", {0, 0, 9, 5}}, {"b", {0, 0, 9, 3}}}, gts), 50.0);
}

TEST(Corloc, HalfIsNotAMatch) {
  const BBox gt{0, 0, 9, 9}, half{0, 0, 9, 4};
  ASSERT_EQ(box_iou(gt, half), 0.5);
  EXPECT_EQ(corloc({{"a", half}}, {{"a", {gt}}}), 0.0);
}

TEST(Corloc, AnyGroundTruthBoxCounts) {
  EXPECT_EQ(corloc({{"a", {5, 5, 8, 8}}}, {{"a", {{0, 0, 2, 2}, {5, 5, 8, 9}}}}), 100.0);
}

TEST(Corloc, Errors) {
  EXPECT_EQ(code_of([] { corloc({{"a", {0, 0, 1, 1}}}, {}); }), ErrorCode::MissingGroundTruth);
  EXPECT_EQ(code_of([] { corloc({{"a", {0, 0, 1, 1}}}, {{"a", {}}}); }), ErrorCode::MissingGroundTruth);
  EXPECT_EQ(code_of([] { corloc({}, {}); }), ErrorCode::EmptySet);
}

TEST(Corloc, PermutationInvariant) {
  std::mt19937_64 rng(7);
  std::vector<std::pair<BBox, BBox>> pairs;
  for (int i = 0; i < 30; ++i) pairs.emplace_back(oracle::random_box(rng, 10), oracle::random_box(rng, 10));
  auto score = [&](const std::vector<std::pair<BBox, BBox>>& order) {
    std::map<std::string, BBox> pred;
    std::map<std::string, std::vector<BBox>> gt;
    for (std::size_t i = 0; i < order.size(); ++i) {
      pred["img" + std::to_string(i)] = order[i].first;
      gt["img" + std::to_string(i)] = {order[i].second};
    }
    return corloc(pred, gt);
  };
  const double base = score(pairs);
  for (int t = 0; t < 10; ++t) {
    std::shuffle(pairs.begin(), pairs.end(), rng);
    EXPECT_EQ(score(pairs), base);
  }
}

TEST(AverageBestIou, Examples) {
  const Mask a = mask_of(1, 10, {1, 1, 1, 1, 0, 0, 0, 0, 0, 0});
  const std::vector<PartAnnotation> one{{"head", {a}}};
  const std::vector<BinaryMaskSet> same{{0, {a}}};
  EXPECT_EQ(average_best_iou(same, one, {"background"}), 1.0);

  // factor 0 hits head with IoU 0.4, factor 1 hits leg with IoU 0.2 and background perfectly
  const std::vector<PartAnnotation> parts{{"head", {mask_of(1, 10, {1, 1, 1, 1, 1, 0, 0, 0, 0, 0})}},
                                          {"leg", {mask_of(1, 10, {0, 0, 0, 0, 0, 1, 1, 1, 1, 1})}},
                                          {"background", {mask_of(1, 10, {0, 0, 0, 0, 0, 0, 0, 0, 0, 1})}}};
  const std::vector<BinaryMaskSet> factors{{0, {mask_of(1, 10, {1, 1, 0, 0, 0, 0, 0, 0, 0, 0})}},
                                           {1, {mask_of(1, 10, {0, 0, 0, 0, 0, 0, 0, 0, 0, 1})}}};
  EXPECT_NEAR(average_best_iou(factors, parts, {"background"}), 0.3, 1e-12);

  const std::vector<PartAnnotation> bg_only{{"background", {a}}};
  EXPECT_EQ(code_of([&] { average_best_iou(same, bg_only, {"background"}); }), ErrorCode::NoParts);
}
