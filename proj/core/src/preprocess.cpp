#include "milnet/preprocess.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace milnet {

OtsuResult otsu_threshold(const GrayImage& image) {
  if (image.pixels.empty()) throw std::invalid_argument("otsu_threshold: empty image");
  std::array<std::int64_t, 256> hist{};
  for (double v : image.pixels) ++hist[to_byte(v)];

  int occupied = 0, only = 0;
  for (int i = 0; i < 256; ++i) {
    if (hist[i]) {
      ++occupied;
      only = i;
    }
  }
  if (occupied == 1) return {only, true};

  const auto total = static_cast<std::int64_t>(image.pixels.size());
  std::int64_t total_sum = 0;
  for (int i = 0; i < 256; ++i) total_sum += i * hist[i];

  // omega0*omega1*(mu0-mu1)^2 = (n1*s0 - n0*s1)^2 / (N^2 * n0 * n1); N^2 is constant.
  std::int64_t n0 = 0, s0 = 0;
  long double best = -1.0L;
  int best_t = 0;
  for (int t = 0; t < 255; ++t) {
    n0 += hist[t];
    s0 += t * hist[t];
    const std::int64_t n1 = total - n0, s1 = total_sum - s0;
    long double score = 0.0L;
    if (n0 > 0 && n1 > 0) {
      const long double diff = static_cast<long double>(n1 * s0 - n0 * s1);
      score = diff * diff / (static_cast<long double>(n0) * static_cast<long double>(n1));
    }
    if (score > best) {
      best = score;
      best_t = t;
    }
  }
  return {best_t, false};
}

Box foreground_box(const GrayImage& image, double threshold) {
  std::size_t x0 = image.width, y0 = image.height, x1 = 0, y1 = 0;
  bool any = false;
  for (std::size_t y = 0; y < image.height; ++y)
    for (std::size_t x = 0; x < image.width; ++x) {
      if (image.at(x, y) > threshold) {
        any = true;
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
    }
  if (!any) throw std::invalid_argument("no foreground pixel above threshold " + std::to_string(threshold));
  return {x0, y0, x1 - x0 + 1, y1 - y0 + 1};
}

GrayImage crop(const GrayImage& image, const Box& box) {
  if (box.w == 0 || box.h == 0 || box.x + box.w > image.width || box.y + box.h > image.height) {
    throw std::invalid_argument("crop box outside image");
  }
  GrayImage out(box.w, box.h);
  for (std::size_t y = 0; y < box.h; ++y)
    for (std::size_t x = 0; x < box.w; ++x) out.at(x, y) = image.at(box.x + x, box.y + y);
  return out;
}

GrayImage crop_foreground(const GrayImage& image, double threshold) {
  return crop(image, foreground_box(image, threshold));
}

namespace {

double sample_bilinear(const GrayImage& img, double sx, double sy) {
  const auto x0 = static_cast<std::size_t>(std::floor(sx));
  const auto y0 = static_cast<std::size_t>(std::floor(sy));
  const std::size_t x1 = std::min(x0 + 1, img.width - 1);
  const std::size_t y1 = std::min(y0 + 1, img.height - 1);
  const double fx = sx - double(x0), fy = sy - double(y0);
  const double top = (1.0 - fx) * img.at(x0, y0) + fx * img.at(x1, y0);
  const double bottom = (1.0 - fx) * img.at(x0, y1) + fx * img.at(x1, y1);
  return (1.0 - fy) * top + fy * bottom;
}

double corner_ratio(std::size_t in, std::size_t out) {
  return out > 1 ? double(in - 1) / double(out - 1) : 0.0;
}

}  // namespace

GrayImage resize_bilinear(const GrayImage& image, std::size_t out_w, std::size_t out_h) {
  if (out_w == 0 || out_h == 0) throw std::invalid_argument("resize_bilinear: output size must be positive");
  if (image.pixels.empty()) throw std::invalid_argument("resize_bilinear: empty image");
  const double rx = corner_ratio(image.width, out_w), ry = corner_ratio(image.height, out_h);
  GrayImage out(out_w, out_h);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double sy = std::min(double(y) * ry, double(image.height - 1));
    for (std::size_t x = 0; x < out_w; ++x) {
      const double sx = std::min(double(x) * rx, double(image.width - 1));
      out.at(x, y) = sample_bilinear(image, sx, sy);
    }
  }
  return out;
}

void AugmentConfig::validate() const {
  if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) throw std::invalid_argument("flip_prob must lie in [0, 1]");
  if (!(shift_frac >= 0.0 && shift_frac < 1.0)) throw std::invalid_argument("shift_frac must lie in [0, 1)");
  if (!(rotate_deg_max >= 0.0 && rotate_deg_max <= 180.0)) {
    throw std::invalid_argument("rotate_deg_max must lie in [0, 180]");
  }
  if (!(cutout_frac >= 0.0 && cutout_frac < 1.0)) throw std::invalid_argument("cutout_frac must lie in [0, 1)");
}

GrayImage flip_horizontal(const GrayImage& image) {
  GrayImage out(image.width, image.height);
  for (std::size_t y = 0; y < image.height; ++y)
    for (std::size_t x = 0; x < image.width; ++x) out.at(x, y) = image.at(image.width - 1 - x, y);
  return out;
}

GrayImage shift(const GrayImage& image, long dx, long dy) {
  GrayImage out(image.width, image.height, 0.0);
  const long w = long(image.width), h = long(image.height);
  for (long y = 0; y < h; ++y) {
    const long sy = y - dy;
    if (sy < 0 || sy >= h) continue;
    for (long x = 0; x < w; ++x) {
      const long sx = x - dx;
      if (sx < 0 || sx >= w) continue;
      out.at(std::size_t(x), std::size_t(y)) = image.at(std::size_t(sx), std::size_t(sy));
    }
  }
  return out;
}

GrayImage rotate(const GrayImage& image, double degrees) {
  const double rad = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(rad), s = std::sin(rad);
  const double cx = (double(image.width) - 1.0) / 2.0, cy = (double(image.height) - 1.0) / 2.0;
  const double max_x = double(image.width - 1), max_y = double(image.height - 1);
  GrayImage out(image.width, image.height, 0.0);
  for (std::size_t y = 0; y < image.height; ++y)
    for (std::size_t x = 0; x < image.width; ++x) {
      // Inverse map: rotate the destination coordinate back into the source.
      const double dx = double(x) - cx, dy = double(y) - cy;
      const double sx = c * dx + s * dy + cx;
      const double sy = -s * dx + c * dy + cy;
      if (sx < 0.0 || sy < 0.0 || sx > max_x || sy > max_y) continue;
      out.at(x, y) = sample_bilinear(image, sx, sy);
    }
  return out;
}

GrayImage augment(const GrayImage& image, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const bool do_flip = unit(rng) < cfg.flip_prob;
  const long max_dx = std::lround(cfg.shift_frac * double(image.width));
  const long max_dy = std::lround(cfg.shift_frac * double(image.height));
  const long dx = std::uniform_int_distribution<long>(-max_dx, max_dx)(rng);
  const long dy = std::uniform_int_distribution<long>(-max_dy, max_dy)(rng);
  const double angle = std::uniform_real_distribution<double>(-cfg.rotate_deg_max, cfg.rotate_deg_max)(rng);
  const auto side = static_cast<std::size_t>(
      std::lround(cfg.cutout_frac * double(std::min(image.width, image.height))));
  const auto cut_x = std::uniform_int_distribution<std::size_t>(0, image.width - side)(rng);
  const auto cut_y = std::uniform_int_distribution<std::size_t>(0, image.height - side)(rng);

  GrayImage out = do_flip ? flip_horizontal(image) : image;
  if (dx != 0 || dy != 0) out = shift(out, dx, dy);
  if (angle != 0.0) out = rotate(out, angle);
  for (std::size_t y = cut_y; y < cut_y + side; ++y)
    for (std::size_t x = cut_x; x < cut_x + side; ++x) out.at(x, y) = 0.0;
  return out;
}

namespace {

// Maps the pixel interval [lo, lo+len) of a source axis of size `in` onto an
// axis of size `out` under corner-aligned resampling.
std::pair<std::size_t, std::size_t> map_interval(std::size_t lo, std::size_t len, std::size_t in, std::size_t out) {
  if (in <= 1 || out <= 1) return {0, out};
  const double r = double(out - 1) / double(in - 1);
  auto a = static_cast<long>(std::ceil((double(lo) - 0.5) * r));
  auto b = static_cast<long>(std::floor((double(lo + len) - 0.5) * r));
  a = std::clamp(a, 0L, long(out - 1));
  b = std::clamp(b, a, long(out - 1));
  return {std::size_t(a), std::size_t(b - a + 1)};
}

}  // namespace

PreparedImage prepare(const GrayImage& raw, std::optional<Box> mass, std::size_t size) {
  const OtsuResult otsu = otsu_threshold(raw);
  Box region{0, 0, raw.width, raw.height};
  if (!otsu.degenerate) region = foreground_box(raw, otsu.threshold);
  PreparedImage out;
  out.image = resize_bilinear(crop(raw, region), size, size);
  if (mass) {
    const std::size_t x0 = std::max(mass->x, region.x), y0 = std::max(mass->y, region.y);
    const std::size_t x1 = std::min(mass->x + mass->w, region.x + region.w);
    const std::size_t y1 = std::min(mass->y + mass->h, region.y + region.h);
    if (x1 > x0 && y1 > y0) {
      const auto [bx, bw] = map_interval(x0 - region.x, x1 - x0, region.w, size);
      const auto [by, bh] = map_interval(y0 - region.y, y1 - y0, region.h, size);
      out.mass = Box{bx, by, bw, bh};
    }
  }
  return out;
}

}  // namespace milnet
