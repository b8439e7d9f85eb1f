#include <gtest/gtest.h>

#include <random>

#include "milnet/preprocess.hpp"

using namespace milnet;

namespace {

GrayImage from_rows(const std::vector<std::vector<double>>& rows) {
  GrayImage img(rows.front().size(), rows.size());
  for (std::size_t y = 0; y < rows.size(); ++y)
    for (std::size_t x = 0; x < rows[y].size(); ++x) img.at(x, y) = rows[y][x];
  return img;
}

// Exhaustive scan over pixels (no histogram). Between-class variance is
// (n1*s0 - n0*s1)^2 / (N^2 n0 n1); candidates are compared exactly by
// cross-multiplying in 128-bit integers.
int brute_force_otsu(const GrayImage& img) {
  using i128 = __int128;
  int best_t = 0;
  i128 best_num = 0, best_den = 1;
  for (int t = 0; t <= 254; ++t) {
    long long n0 = 0, n1 = 0, s0 = 0, s1 = 0;
    for (double p : img.pixels) {
      const long long v = to_byte(p);
      if (v <= t) {
        ++n0;
        s0 += v;
      } else {
        ++n1;
        s1 += v;
      }
    }
    i128 num = 0, den = 1;
    if (n0 > 0 && n1 > 0) {
      const i128 d = i128(n1) * s0 - i128(n0) * s1;
      num = d * d;
      den = i128(n0) * n1;
    }
    if (num * best_den > best_num * den) {
      best_num = num;
      best_den = den;
      best_t = t;
    }
  }
  return best_t;
}

}  // namespace

TEST(Otsu, Examples) {
  GrayImage a(5, 1);
  a.pixels = {0, 0, 0, 255, 255};
  EXPECT_EQ(otsu_threshold(a).threshold, 0);
  EXPECT_FALSE(otsu_threshold(a).degenerate);

  GrayImage b(20, 1);
  for (std::size_t i = 0; i < 20; ++i) b.pixels[i] = i < 10 ? 20 : 200;
  EXPECT_EQ(otsu_threshold(b).threshold, 20);

  GrayImage c(4, 3, 7.0);
  const OtsuResult r = otsu_threshold(c);
  EXPECT_EQ(r.threshold, 7);
  EXPECT_TRUE(r.degenerate);
}

TEST(Otsu, MatchesExhaustiveSearch) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t w = 1 + rng() % 24, h = 1 + rng() % 24;
    GrayImage img(w, h);
    const int style = trial % 4;
    const int levels = 2 + int(rng() % 6);
    std::normal_distribution<double> dark(60, 25), bright(170, 30);
    for (auto& p : img.pixels) {
      switch (style) {
        case 0: p = double(rng() % 256); break;
        case 1: p = double((rng() % levels) * (255 / (levels - 1))); break;  // few distinct values, many ties
        case 2: p = std::clamp(std::round((rng() % 3 == 0 ? bright : dark)(rng)), 0.0, 255.0); break;
        default: p = double(rng() % 2 ? 255 : rng() % 4); break;
      }
    }
    const OtsuResult r = otsu_threshold(img);
    if (r.degenerate) continue;
    ASSERT_EQ(r.threshold, brute_force_otsu(img)) << "trial " << trial;
  }
}

TEST(Crop, Examples) {
  GrayImage img(10, 10, 0.0);
  for (std::size_t y = 2; y < 5; ++y)
    for (std::size_t x = 3; x < 7; ++x) img.at(x, y) = 200;
  const GrayImage c = crop_foreground(img, 100);
  EXPECT_EQ(c.width, 4u);
  EXPECT_EQ(c.height, 3u);
  EXPECT_EQ(foreground_box(img, 100), (Box{3, 2, 4, 3}));

  GrayImage all(6, 5, 255.0);
  EXPECT_EQ(crop_foreground(all, 100), all);

  GrayImage single(7, 7, 0.0);
  single.at(4, 1) = 30;
  const GrayImage s = crop_foreground(single, 10);
  EXPECT_EQ(s.width, 1u);
  EXPECT_EQ(s.height, 1u);
  EXPECT_EQ(s.pixels[0], 30);

  EXPECT_THROW(crop_foreground(GrayImage(3, 3, 5.0), 5.0), std::invalid_argument);
}

TEST(Crop, KeepsBackgroundInsideBoxAndIsIdempotent) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    GrayImage img(4 + rng() % 20, 4 + rng() % 20, 0.0);
    for (auto& p : img.pixels) p = rng() % 5 == 0 ? double(rng() % 256) : 0.0;
    img.pixels[rng() % img.pixels.size()] = 255;
    const double t = double(rng() % 200);
    const GrayImage once = crop_foreground(img, t);
    EXPECT_EQ(crop_foreground(once, t), once);
  }
  const GrayImage ring = from_rows({{0, 0, 0, 0}, {0, 9, 9, 0}, {0, 9, 0, 0}, {0, 0, 0, 0}});
  const GrayImage c = crop_foreground(ring, 5);
  EXPECT_EQ(c, from_rows({{9, 9}, {9, 0}}));
}

TEST(Resize, IdentityAndConstant) {
  const GrayImage two = from_rows({{1, 2}, {3, 4}});
  EXPECT_EQ(resize_bilinear(two, 2, 2), two);
  const GrayImage flat(5, 3, 42.0);
  for (auto [w, h] : {std::pair{1, 1}, {7, 2}, {16, 16}, {2, 9}}) {
    const GrayImage r = resize_bilinear(flat, w, h);
    EXPECT_EQ(r.width, std::size_t(w));
    for (double v : r.pixels) EXPECT_DOUBLE_EQ(v, 42.0);
  }
}

TEST(Resize, HandComputedTable) {
  const GrayImage src = from_rows({{0, 10, 20, 30}, {40, 60, 80, 100}, {50, 50, 50, 50}, {255, 0, 255, 0}});
  const GrayImage out = resize_bilinear(src, 5, 3);
  const std::vector<std::vector<double>> expected{
      {0.0, 7.5, 15.0, 22.5, 30.0}, {45.0, 52.5, 60.0, 67.5, 75.0}, {255.0, 63.75, 127.5, 191.25, 0.0}};
  for (std::size_t y = 0; y < 3; ++y)
    for (std::size_t x = 0; x < 5; ++x) EXPECT_NEAR(out.at(x, y), expected[y][x], 1e-12) << x << "," << y;
}

TEST(Resize, OutputWithinInputRange) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    GrayImage img(2 + rng() % 10, 2 + rng() % 10);
    for (auto& p : img.pixels) p = double(rng() % 256);
    const auto [lo, hi] = std::minmax_element(img.pixels.begin(), img.pixels.end());
    const GrayImage r = resize_bilinear(img, 1 + rng() % 30, 1 + rng() % 30);
    for (double v : r.pixels) {
      EXPECT_GE(v, *lo);
      EXPECT_LE(v, *hi);
    }
  }
}

TEST(Augment, NoneIsIdentity) {
  GrayImage img(16, 16);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = double(i % 251);
  Rng rng(1);
  EXPECT_EQ(augment(img, AugmentConfig::none(), rng), img);
}

TEST(Augment, FlipIsInvolution) {
  GrayImage img(5, 3);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = double(i);
  EXPECT_EQ(flip_horizontal(img).at(0, 0), 4.0);
  EXPECT_EQ(flip_horizontal(flip_horizontal(img)), img);
  AugmentConfig always = AugmentConfig::none();
  always.flip_prob = 1.0;
  Rng a(3), b(4);
  EXPECT_EQ(augment(augment(img, always, a), always, b), img);
}

TEST(Augment, ShiftAndRotateZeroFill) {
  GrayImage img(4, 4, 10.0);
  const GrayImage s = shift(img, 1, -2);
  EXPECT_EQ(s.at(0, 0), 0.0);
  EXPECT_EQ(s.at(1, 0), 10.0);
  EXPECT_EQ(s.at(1, 2), 0.0);
  EXPECT_EQ(rotate(img, 0.0), img);
  GrayImage ramp(5, 5);
  for (std::size_t y = 0; y < 5; ++y)
    for (std::size_t x = 0; x < 5; ++x) ramp.at(x, y) = double(10 * x + y);
  const GrayImage r = rotate(rotate(ramp, 90.0), -90.0);
  for (std::size_t i = 0; i < r.pixels.size(); ++i) EXPECT_NEAR(r.pixels[i], ramp.pixels[i], 1e-9);
}

TEST(Augment, DeterministicShapeAndRange) {
  GrayImage img(32, 32);
  std::mt19937_64 fill(2);
  for (auto& p : img.pixels) p = double(fill() % 256);
  const AugmentConfig cfg;
  Rng a(42), b(42);
  const GrayImage x = augment(img, cfg, a), y = augment(img, cfg, b);
  EXPECT_EQ(x, y);
  for (int seed = 0; seed < 100; ++seed) {
    Rng r(seed);
    const GrayImage out = augment(img, cfg, r);
    ASSERT_EQ(out.width, img.width);
    ASSERT_EQ(out.height, img.height);
    for (double v : out.pixels) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 255.0);
    }
  }
}

TEST(Augment, CutoutZeroesASquare) {
  AugmentConfig cfg = AugmentConfig::none();
  cfg.cutout_frac = 0.25;
  GrayImage img(16, 16, 100.0);
  Rng rng(5);
  const GrayImage out = augment(img, cfg, rng);
  std::size_t zeros = 0;
  for (double v : out.pixels) zeros += v == 0.0;
  EXPECT_EQ(zeros, 16u);  // round(0.25 * 16) = 4, a 4x4 square
}

TEST(Augment, ConfigValidation) {
  AugmentConfig c;
  EXPECT_NO_THROW(c.validate());
  c.shift_frac = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = AugmentConfig{};
  c.rotate_deg_max = 181;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = AugmentConfig{};
  c.flip_prob = -0.1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Prepare, CropsResizesAndMapsMass) {
  GrayImage raw(40, 30, 0.0);
  for (std::size_t y = 5; y < 25; ++y)
    for (std::size_t x = 10; x < 30; ++x) raw.at(x, y) = 120;
  for (std::size_t y = 10; y < 14; ++y)
    for (std::size_t x = 15; x < 19; ++x) raw.at(x, y) = 240;
  const PreparedImage p = prepare(raw, Box{15, 10, 4, 4}, 20);
  EXPECT_EQ(p.image.width, 20u);
  EXPECT_EQ(p.image.height, 20u);
  ASSERT_TRUE(p.mass.has_value());
  // The foreground box is 20x20 at (10, 5), so the 20-pixel resize is 1:1.
  EXPECT_EQ(*p.mass, (Box{5, 5, 4, 4}));
  EXPECT_EQ(p.image.at(5, 5), 240.0);
  EXPECT_EQ(p.image.at(4, 5), 120.0);

  const PreparedImage flat = prepare(GrayImage(8, 8, 3.0), std::nullopt, 4);
  EXPECT_EQ(flat.image, GrayImage(4, 4, 3.0));
  EXPECT_FALSE(flat.mass.has_value());
}
