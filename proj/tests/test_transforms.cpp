#include <gtest/gtest.h>

#include <cstdlib>

#include "dcnn/rng.hpp"
#include "dcnn/transforms.hpp"

using namespace dcnn;
using namespace dcnn::transforms;

namespace {

GrayImage random_image(int w, int h, Rng& rng, int levels = 256) {
  std::vector<std::uint8_t> lv(static_cast<std::size_t>(w) * h);
  for (auto& v : lv) v = static_cast<std::uint8_t>(rng.below(levels) * (255 / (levels - 1)));
  return GrayImage::from_levels(w, h, lv);
}

Plane naive_rank(const GrayImage& img, int w) {
  const int W = img.width(), H = img.height(), r = w / 2;
  auto lv = img.levels();
  Plane out{W, H, std::vector<float>(lv.size())};
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      int total = 0, brighter = 0;
      for (int yy = y - r; yy <= y + r; ++yy)
        for (int xx = x - r; xx <= x + r; ++xx) {
          if (xx < 0 || yy < 0 || xx >= W || yy >= H) continue;
          ++total;
          brighter += lv[yy * W + xx] > lv[y * W + x];
        }
      out.data[y * W + x] = static_cast<float>(brighter) / static_cast<float>(total);
    }
  return out;
}

Plane naive_companion(const GrayImage& img, int w, int directions) {
  const int W = img.width(), H = img.height(), r = w / 2;
  auto lv = img.levels();
  Plane out{W, H, std::vector<float>(lv.size(), 0.0f)};
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      int total = 0, equal = 0;
      for (auto [dx, dy] : ray_steps(directions))
        for (int k = 1;; ++k) {
          const int qx = x + k * dx, qy = y + k * dy;
          if (std::abs(k * dx) > r || std::abs(k * dy) > r) break;
          if (qx < 0 || qy < 0 || qx >= W || qy >= H) break;
          ++total;
          equal += lv[qy * W + qx] == lv[y * W + x];
        }
      if (total > 0) out.data[y * W + x] = static_cast<float>(equal) / static_cast<float>(total);
    }
  return out;
}

GrayImage remap(const GrayImage& img, const std::array<std::uint8_t, 256>& f) {
  auto lv = img.levels();
  for (auto& v : lv) v = f[v];
  return GrayImage::from_levels(img.width(), img.height(), lv);
}

}  // namespace

TEST(Rank, ConstantImageIsZero) {
  auto r = rank_transform(GrayImage(9, 7, 0.4f), 5);
  for (float v : r.data) EXPECT_EQ(v, 0.0f);
}

TEST(Rank, HandExample) {
  auto img = GrayImage::from_levels(3, 3, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  auto r = rank_transform(img, 3);
  EXPECT_EQ(r(1, 1), 4.0f / 9.0f);
  // corner (0,0): window {1,2,4,5}, three brighter
  EXPECT_EQ(r(0, 0), 3.0f / 4.0f);
}

TEST(Rank, MatchesBruteForce) {
  Rng rng(1);
  for (int t = 0; t < 4; ++t) {
    auto img = random_image(37 + t, 29, rng);
    for (int w : {3, 5, 15, 61}) EXPECT_EQ(rank_transform(img, w), naive_rank(img, w)) << w;
  }
}

TEST(Rank, RangeBound) {
  Rng rng(4);
  auto img = random_image(20, 20, rng);
  auto r = rank_transform(img, 7);
  for (float v : r.data) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
}

TEST(Rank, BadWindow) {
  GrayImage img(4, 4);
  EXPECT_THROW(rank_transform(img, 4), ParameterError);
  EXPECT_THROW(rank_transform(img, 1), ParameterError);
}

TEST(Companion, ConstantAndUnique) {
  auto c = companion_transform(GrayImage(12, 9, 0.2f), 5, 8);
  for (float v : c.data) EXPECT_EQ(v, 1.0f);
  std::vector<std::uint8_t> lv(25);
  for (int i = 0; i < 25; ++i) lv[i] = static_cast<std::uint8_t>(i);
  auto u = companion_transform(GrayImage::from_levels(5, 5, lv), 5, 16);
  for (float v : u.data) EXPECT_EQ(v, 0.0f);
}

TEST(Companion, MatchesRayWalkingReference) {
  Rng rng(2);
  for (int dirs : {4, 8, 16}) {
    auto img = random_image(40, 33, rng, 8);
    for (int w : {3, 7, 15, 61}) EXPECT_EQ(companion_transform(img, w, dirs), naive_companion(img, w, dirs)) << w;
  }
}

TEST(Companion, SinglePixelImage) {
  auto c = companion_transform(GrayImage(1, 1, 0.5f), 3, 8);
  EXPECT_EQ(c.data[0], 0.0f);
}

TEST(Companion, BadDirections) {
  EXPECT_THROW(companion_transform(GrayImage(4, 4), 3, 6), ParameterError);
  EXPECT_THROW(companion_transform(GrayImage(4, 4), 2, 8), ParameterError);
}

TEST(Invariance, MonotoneAndInjectiveRemaps) {
  Rng rng(5);
  auto img = random_image(32, 32, rng, 16);
  std::array<std::uint8_t, 256> inc{}, perm{};
  for (int v = 0; v < 256; ++v) inc[v] = static_cast<std::uint8_t>(v / 2 + 20);
  for (int v = 0; v < 256; ++v) perm[v] = static_cast<std::uint8_t>((v * 37 + 11) % 256);
  // inc is strictly increasing on the 16 levels present (multiples of 17)
  for (int w : {3, 15}) {
    EXPECT_EQ(rank_transform(remap(img, inc), w), rank_transform(img, w));
    EXPECT_EQ(companion_transform(remap(img, perm), w), companion_transform(img, w));
  }
}

TEST(Stack, LayoutAndInterleave) {
  Rng rng(6);
  auto a = random_image(16, 12, rng), b = random_image(16, 12, rng);
  TransformConfig cfg{5, 7, 8};
  auto la = build_stack(a, cfg), lb = build_stack(b, cfg);
  ASSERT_EQ(la.size(), 3u);
  EXPECT_EQ(la.labels, (std::vector<std::string>{"gray", "rank", "companion"}));
  EXPECT_EQ(la.channels[0].data, a.data());
  EXPECT_EQ(la, build_stack(a, cfg));
  auto m = interleave(la, lb);
  ASSERT_EQ(m.size(), 6u);
  for (int k = 0; k < 3; ++k) {
    EXPECT_EQ(m.channels[2 * k], la.channels[k]);
    EXPECT_EQ(m.channels[2 * k + 1], lb.channels[k]);
  }
  EXPECT_EQ(m.labels[0], "L:gray");
  EXPECT_EQ(m.labels[5], "R:companion");
  auto self = interleave(la, la);
  for (int k = 0; k < 3; ++k) EXPECT_EQ(self.channels[2 * k], self.channels[2 * k + 1]);
  auto small = build_stack(random_image(8, 8, rng), cfg);
  EXPECT_THROW(interleave(la, small), ParameterError);
}

TEST(Stack, ConfigValidation) {
  EXPECT_NO_THROW((TransformConfig{31, 61, 8}.validate()));
  EXPECT_THROW((TransformConfig{30, 61, 8}.validate()), ParameterError);
  EXPECT_THROW((TransformConfig{31, 61, 5}.validate()), ParameterError);
}
