#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace milnet {

/// Axis-aligned pixel box, half-open: columns [x, x+w), rows [y, y+h).
struct Box {
  std::size_t x = 0;
  std::size_t y = 0;
  std::size_t w = 0;
  std::size_t h = 0;

  bool operator==(const Box&) const = default;
  bool intersects(const Box& other) const;
};

/// Single-channel image, row-major. Raw images hold intensities in [0, 255].
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> pixels;

  GrayImage() = default;
  GrayImage(std::size_t w, std::size_t h, double fill = 0.0);

  double& at(std::size_t x, std::size_t y) { return pixels[y * width + x]; }
  double at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }

  bool operator==(const GrayImage&) const = default;
};

/// Rounds to the nearest integer and clamps to [0, 255].
std::uint8_t to_byte(double v);

GrayImage read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const GrayImage& image);

/// Raw row-major bytes; dimensions come from the sidecar `<path>.hdr` holding "W H".
GrayImage read_raw(const std::filesystem::path& path);

/// Dispatches on extension: `.pgm` is parsed as P5, anything else as raw + sidecar.
GrayImage read_image(const std::filesystem::path& path);

/// Reads only width and height.
void read_image_size(const std::filesystem::path& path, std::size_t& width, std::size_t& height);

}  // namespace milnet
