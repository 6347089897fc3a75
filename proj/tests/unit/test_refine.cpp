#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "dff/error.hpp"
#include "dff/refine.hpp"
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

Grid random_grid(std::mt19937_64& rng, std::size_t h, std::size_t w, float lo = 0.0f, float hi = 1.0f) {
  std::uniform_real_distribution<float> u(lo, hi);
  Grid g(h, w);
  for (auto& v : g.values) v = u(rng);
  return g;
}

float max_abs_diff(const Grid& a, const Grid& b) {
  float d = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a.values[i] - b.values[i]));
  return d;
}

// Pixels between the 10% and 90% levels of a row profile.
int transition_width(const Grid& g, std::size_t row) {
  float lo = g.at(row, 0), hi = g.at(row, 0);
  for (std::size_t x = 0; x < g.width; ++x) {
    lo = std::min(lo, g.at(row, x));
    hi = std::max(hi, g.at(row, x));
  }
  const float a = lo + 0.1f * (hi - lo), b = lo + 0.9f * (hi - lo);
  int n = 0;
  for (std::size_t x = 0; x < g.width; ++x) n += g.at(row, x) > a && g.at(row, x) < b;
  return n;
}

}  // namespace

TEST(LumaGuide, BlackAndWhite) {
  RgbImage img(1, 2);
  std::fill(img.pixels.begin() + 3, img.pixels.end(), 255);
  const Grid g = luma_guide(img);
  EXPECT_EQ(g.at(0, 0), 0.0f);
  EXPECT_NEAR(g.at(0, 1), 1.0f, 1e-6f);
}

TEST(GuidedFilter, ConstantSourceStaysConstant) {
  std::mt19937_64 rng(1);
  const Grid guide = random_grid(rng, 9, 7);
  const Grid out = guided_filter(guide, Grid(9, 7, 0.42f), 2, 1e-3);
  for (float v : out.values) EXPECT_NEAR(v, 0.42f, 1e-6f);
}

TEST(GuidedFilter, SelfGuidanceReproducesSource) {
  std::mt19937_64 rng(2);
  const Grid src = random_grid(rng, 12, 10, 0.0f, 10.0f);
  EXPECT_LE(max_abs_diff(guided_filter(src, src, 2, 1e-8), src), 1e-4f);
}

TEST(GuidedFilter, FourByFourMatchesWindowOracle) {
  std::mt19937_64 rng(3);
  const Grid guide = random_grid(rng, 4, 4), src = random_grid(rng, 4, 4);
  const Grid out = guided_filter(guide, src, 1, 0.01);
  const Grid ref = oracle::guided_filter(guide, src, 1, 0.01);
  EXPECT_LE(max_abs_diff(out, ref), 1e-5f);
}

TEST(GuidedFilter, RandomGridsMatchWindowOracle) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_int_distribution<std::size_t> d(1, 15);
    const std::size_t h = d(rng), w = d(rng);
    const int r = static_cast<int>(d(rng) % 4) + 1;
    const Grid guide = random_grid(rng, h, w), src = random_grid(rng, h, w);
    EXPECT_LE(max_abs_diff(guided_filter(guide, src, r, 1e-3), oracle::guided_filter(guide, src, r, 1e-3)), 1e-5f);
  }
}

TEST(GuidedFilter, FarPixelsDoNotInfluenceOutput) {
  std::mt19937_64 rng(5);
  const int r = 2;
  Grid guide = random_grid(rng, 20, 20), src = random_grid(rng, 20, 20);
  const Grid before = guided_filter(guide, src, r, 1e-3);
  guide.at(2, 17) += 0.5f;
  src.at(2, 17) += 0.7f;
  const Grid after = guided_filter(guide, src, r, 1e-3);
  for (std::size_t y = 0; y < 20; ++y)
    for (std::size_t x = 0; x < 20; ++x) {
      const long dy = std::labs(static_cast<long>(y) - 2), dx = std::labs(static_cast<long>(x) - 17);
      if (std::max(dy, dx) > 2 * r) EXPECT_NEAR(after.at(y, x), before.at(y, x), 1e-6f) << y << "," << x;
    }
}

TEST(GuidedFilter, SizeMismatch) {
  EXPECT_EQ(code_of([] { guided_filter(Grid(3, 3), Grid(3, 4), 1, 0.1); }), ErrorCode::SizeMismatch);
}

TEST(SoftmaxUnary, DirectArithmetic) {
  HeatMapStack s{"a", 1, 1, {Grid(1, 1, 1.0f), Grid(1, 1, 0.0f)}};
  const auto q = softmax_unary(s, 0.0);
  ASSERT_EQ(q.size(), 3u);
  const double e = std::exp(1.0);
  EXPECT_NEAR(q[0].at(0, 0), e / (e + 2), 1e-6);
  EXPECT_NEAR(q[1].at(0, 0), 1 / (e + 2), 1e-6);
  EXPECT_NEAR(q[2].at(0, 0), 1 / (e + 2), 1e-6);
}

TEST(SoftmaxUnary, EqualScoresAreUniform) {
  HeatMapStack s{"a", 2, 2, {Grid(2, 2, 0.5f), Grid(2, 2, 0.5f), Grid(2, 2, 0.5f)}};
  const auto q = softmax_unary(s, 0.5, 1.0);
  for (const Grid& c : q)
    for (float v : c.values) EXPECT_NEAR(v, 0.25f, 1e-6f);
}

TEST(SoftmaxUnary, DominantChannelApproachesOne) {
  HeatMapStack s{"a", 1, 1, {Grid(1, 1, 0.0f), Grid(1, 1, 200.0f)}};
  const auto q = softmax_unary(s, 0.0, 1.0);
  EXPECT_NEAR(q[1].at(0, 0), 1.0f, 1e-6f);
}

TEST(SoftmaxUnary, ChannelsSumToOne) {
  std::mt19937_64 rng(6);
  HeatMapStack s{"a", 5, 6, {random_grid(rng, 5, 6, 0, 4), random_grid(rng, 5, 6, 0, 4), random_grid(rng, 5, 6, 0, 4)}};
  const auto q = softmax_unary(s, 0.3);
  for (std::size_t i = 0; i < 30; ++i) {
    double sum = 0;
    for (const Grid& c : q) sum += c.values[i];
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
}

TEST(SetStatistics, MaxAndMedianBackground) {
  HeatMapStack a{"a", 1, 2, {Grid(1, 2)}};
  HeatMapStack b{"b", 1, 2, {Grid(1, 2)}};
  a.maps[0].values = {1, 2};
  b.maps[0].values = {3, 4};
  const std::vector<HeatMapStack> set{a, b};
  EXPECT_EQ(set_max(set), 4.0);
  EXPECT_DOUBLE_EQ(default_background_level(set), 0.5);
  const std::vector<HeatMapStack> zeros{HeatMapStack{"z", 1, 1, {Grid(1, 1)}}};
  EXPECT_EQ(set_max(zeros), 1.0);
}

TEST(MeanField, ZeroIterationsReturnsUnary) {
  std::mt19937_64 rng(7);
  const HeatMapStack s{"a", 6, 6, {random_grid(rng, 6, 6), random_grid(rng, 6, 6)}};
  const Grid guide = random_grid(rng, 6, 6);
  const auto unary = softmax_unary(s, 0.4, 1.0);
  const auto out = meanfield_refine_image(s, guide, {.iterations = 0, .radius = 2}, 1.0, 0.4);
  ASSERT_EQ(out.k(), 2u);
  EXPECT_EQ(out.maps[0], unary[0]);
  EXPECT_EQ(out.maps[1], unary[1]);
}

TEST(MeanField, ZeroWeightIsAFixedPoint) {
  std::mt19937_64 rng(8);
  const HeatMapStack s{"a", 6, 6, {random_grid(rng, 6, 6), random_grid(rng, 6, 6)}};
  const Grid guide = random_grid(rng, 6, 6);
  const auto unary = softmax_unary(s, 0.4, 1.0);
  for (int iters : {1, 5, 20}) {
    const auto out =
        meanfield_refine_image(s, guide, {.iterations = iters, .radius = 2, .pairwise_weight = 0.0}, 1.0, 0.4);
    EXPECT_EQ(out.maps[0], unary[0]);
    EXPECT_EQ(out.maps[1], unary[1]);
  }
}

TEST(MeanField, MatchesStatedIteration) {
  std::mt19937_64 rng(9);
  const HeatMapStack s{"a", 8, 8, {random_grid(rng, 8, 8), random_grid(rng, 8, 8)}};
  const Grid guide = random_grid(rng, 8, 8);
  const RefineConfig cfg{.iterations = 4, .radius = 2, .epsilon = 1e-3, .pairwise_weight = 2.0};
  const auto unary = softmax_unary(s, 0.5, 1.0);
  std::vector<Grid> q = unary;
  for (int it = 0; it < cfg.iterations; ++it) {
    std::vector<Grid> filtered;
    for (const Grid& c : q) filtered.push_back(oracle::guided_filter(guide, c, cfg.radius, cfg.epsilon));
    for (std::size_t i = 0; i < 64; ++i) {
      double logits[3], mx = -1e300, sum = 0;
      for (int c = 0; c < 3; ++c) {
        logits[c] = std::log(static_cast<double>(unary[c].values[i])) + cfg.pairwise_weight * filtered[c].values[i];
        mx = std::max(mx, logits[c]);
      }
      for (double& l : logits) sum += (l = std::exp(l - mx));
      for (int c = 0; c < 3; ++c) q[c].values[i] = static_cast<float>(logits[c] / sum);
    }
  }
  const auto out = meanfield_refine_image(s, guide, cfg, 1.0, 0.5);
  EXPECT_LE(max_abs_diff(out.maps[0], q[0]), 1e-5f);
  EXPECT_LE(max_abs_diff(out.maps[1], q[1]), 1e-5f);
}

TEST(MeanField, DominantChannelStaysArgmaxOnConstantGuide) {
  std::mt19937_64 rng(10);
  const HeatMapStack s{"a", 8, 8, {random_grid(rng, 8, 8, 0.8f, 1.0f), random_grid(rng, 8, 8, 0.0f, 0.3f)}};
  const RefineConfig cfg{.iterations = 10, .radius = 2, .epsilon = 1e-4, .pairwise_weight = 3.0};
  const auto out = meanfield_refine_image(s, Grid(8, 8, 0.5f), cfg, 1.0, 0.2);
  for (std::size_t i = 0; i < 64; ++i) {
    const float bg = 1.0f - out.maps[0].values[i] - out.maps[1].values[i];
    EXPECT_GT(out.maps[0].values[i], out.maps[1].values[i]);
    EXPECT_GT(out.maps[0].values[i], bg);
  }
}

TEST(MeanField, EveryIterationConservesProbability) {
  std::mt19937_64 rng(11);
  const HeatMapStack s{"a", 10, 9, {random_grid(rng, 10, 9), random_grid(rng, 10, 9), random_grid(rng, 10, 9)}};
  const Grid guide = random_grid(rng, 10, 9);
  int calls = 0;
  const auto out = meanfield_refine_image(
      s, guide, {.iterations = 6, .radius = 3}, 1.0, 0.5, [&](int it, std::span<const Grid> q) {
        EXPECT_EQ(it, calls++);
        ASSERT_EQ(q.size(), 4u);
        for (std::size_t i = 0; i < 90; ++i) {
          double sum = 0;
          for (const Grid& c : q) {
            EXPECT_GE(c.values[i], 0.0f);
            sum += c.values[i];
          }
          EXPECT_NEAR(sum, 1.0, 1e-5);
        }
      });
  EXPECT_EQ(calls, 7);
  for (const Grid& m : out.maps)
    for (float v : m.values) EXPECT_GE(v, 0.0f);
}

TEST(MeanField, SharpensBlurredStepAlongGuideEdge) {
  const std::size_t h = 4, w = 32;
  Grid guide(h, w), src(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      guide.at(y, x) = x < 16 ? 0.0f : 1.0f;
      src.at(y, x) = std::clamp((static_cast<float>(x) - 11.5f) / 9.0f, 0.0f, 1.0f);
    }
  const HeatMapStack s{"a", h, w, {src}};
  const auto out = meanfield_refine_image(s, guide, {.iterations = 10, .radius = 4, .epsilon = 1e-3}, 1.0, 0.5);
  for (std::size_t y = 0; y < h; ++y) EXPECT_LE(transition_width(out.maps[0], y), transition_width(src, y));
}

TEST(MeanField, SetLevelUsesSetMaxAndMedian) {
  std::mt19937_64 rng(12);
  const std::vector<HeatMapStack> stacks{{"a", 5, 5, {random_grid(rng, 5, 5, 0, 2), random_grid(rng, 5, 5, 0, 2)}},
                                         {"b", 5, 5, {random_grid(rng, 5, 5, 0, 5), random_grid(rng, 5, 5, 0, 5)}}};
  const std::vector<Grid> guides{random_grid(rng, 5, 5), random_grid(rng, 5, 5)};
  const RefineConfig cfg{.iterations = 3, .radius = 1};
  const auto out = meanfield_refine(stacks, guides, cfg);
  ASSERT_EQ(out.size(), 2u);
  const double scale = set_max(stacks), bg = default_background_level(stacks);
  EXPECT_EQ(out[1], meanfield_refine_image(stacks[1], guides[1], cfg, scale, bg));
  EXPECT_EQ(out[1].image_id, "b");
}

TEST(MeanField, GuideSizeMismatch) {
  const HeatMapStack s{"a", 4, 4, {Grid(4, 4)}};
  EXPECT_EQ(code_of([&] { meanfield_refine_image(s, Grid(4, 5), {}, 1.0, 0.5); }), ErrorCode::SizeMismatch);
}

TEST(RefineConfig, Validation) {
  EXPECT_EQ(code_of([] { RefineConfig{.iterations = -1}.validate(); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([] { RefineConfig{.radius = 0}.validate(); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([] { RefineConfig{.epsilon = 0.0}.validate(); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([] { RefineConfig{.pairwise_weight = -1.0}.validate(); }), ErrorCode::InvalidArgument);
}
