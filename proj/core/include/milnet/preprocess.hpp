#pragma once

#include <cstdint>
#include <optional>

#include "milnet/image.hpp"
#include "milnet/rng.hpp"

namespace milnet {

struct OtsuResult {
  int threshold = 0;
  /// Set when the histogram has a single occupied bin; threshold is then that value.
  bool degenerate = false;
};

/// Otsu's threshold over the 256-bin histogram of rounded intensities.
/// Class 0 is pixels <= t; ties in between-class variance pick the smallest t.
OtsuResult otsu_threshold(const GrayImage& image);

/// Tight bounding box of pixels strictly above `threshold`. Throws if there are none.
Box foreground_box(const GrayImage& image, double threshold);

GrayImage crop(const GrayImage& image, const Box& box);
GrayImage crop_foreground(const GrayImage& image, double threshold);

/// Bilinear resize with corner-aligned sampling (output corners hit input corners).
GrayImage resize_bilinear(const GrayImage& image, std::size_t out_w, std::size_t out_h);

struct AugmentConfig {
  double flip_prob = 0.5;
  double shift_frac = 0.1;
  double rotate_deg_max = 45.0;
  double cutout_frac = 50.0 / 224.0;

  void validate() const;
  static AugmentConfig none() { return {0.0, 0.0, 0.0, 0.0}; }
};

/// Flip, shift, rotate, cutout, in that order. Vacated pixels are zero.
/// Draws are taken from `rng` in a fixed order so the result is a function of its state.
GrayImage augment(const GrayImage& image, const AugmentConfig& cfg, Rng& rng);

GrayImage flip_horizontal(const GrayImage& image);
GrayImage shift(const GrayImage& image, long dx, long dy);
GrayImage rotate(const GrayImage& image, double degrees);

/// Network-ready sample: cropped to the foreground and resized to size x size,
/// with the optional mass box mapped into the resized frame.
struct PreparedImage {
  GrayImage image;
  std::optional<Box> mass;
};

PreparedImage prepare(const GrayImage& raw, std::optional<Box> mass, std::size_t size);

}  // namespace milnet
