#include "milnet/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>

namespace milnet {

bool Box::intersects(const Box& o) const {
  return x < o.x + o.w && o.x < x + w && y < o.y + o.h && o.y < y + h;
}

GrayImage::GrayImage(std::size_t w, std::size_t h, double fill) : width(w), height(h), pixels(w * h, fill) {}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

namespace {

std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct PgmHeader {
  std::size_t width = 0;
  std::size_t height = 0;
  unsigned maxval = 0;
  std::size_t data_offset = 0;
};

PgmHeader parse_pgm_header(const std::string& bytes, const std::filesystem::path& path) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') {
    throw std::runtime_error(path.string() + ": not a binary PGM (P5) file");
  }
  std::size_t pos = 2;
  auto next_number = [&]() -> unsigned long {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    if (pos >= bytes.size() || !std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      throw std::runtime_error(path.string() + ": malformed PGM header");
    }
    unsigned long v = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + static_cast<unsigned long>(bytes[pos] - '0');
      ++pos;
    }
    return v;
  };
  PgmHeader h;
  h.width = next_number();
  h.height = next_number();
  h.maxval = static_cast<unsigned>(next_number());
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw std::runtime_error(path.string() + ": malformed PGM header");
  }
  h.data_offset = pos + 1;
  if (h.width == 0 || h.height == 0) throw std::runtime_error(path.string() + ": PGM has zero size");
  if (h.maxval == 0 || h.maxval > 255) {
    throw std::runtime_error(path.string() + ": only 8-bit PGM is supported (maxval " + std::to_string(h.maxval) + ")");
  }
  return h;
}

}  // namespace

GrayImage read_pgm(const std::filesystem::path& path) {
  const std::string bytes = read_all(path);
  const PgmHeader h = parse_pgm_header(bytes, path);
  if (bytes.size() < h.data_offset + h.width * h.height) {
    throw std::runtime_error(path.string() + ": truncated PGM payload");
  }
  GrayImage img(h.width, h.height);
  const double scale = 255.0 / h.maxval;
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const auto b = static_cast<unsigned char>(bytes[h.data_offset + i]);
    img.pixels[i] = h.maxval == 255 ? double(b) : std::round(b * scale);
  }
  return img;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << image.width << " " << image.height << "\n255\n";
  std::string payload(image.pixels.size(), '\0');
  for (std::size_t i = 0; i < payload.size(); ++i) payload[i] = static_cast<char>(to_byte(image.pixels[i]));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

namespace {
void read_sidecar(const std::filesystem::path& path, std::size_t& width, std::size_t& height) {
  auto hdr = path;
  hdr += ".hdr";
  std::ifstream in(hdr);
  if (!in) throw std::runtime_error("missing dimensions sidecar " + hdr.string());
  if (!(in >> width >> height) || width == 0 || height == 0) {
    throw std::runtime_error(hdr.string() + ": expected a line \"W H\" with positive sizes");
  }
}
}  // namespace

GrayImage read_raw(const std::filesystem::path& path) {
  std::size_t w = 0, h = 0;
  read_sidecar(path, w, h);
  const std::string bytes = read_all(path);
  if (bytes.size() != w * h) {
    throw std::runtime_error(path.string() + ": expected " + std::to_string(w * h) + " bytes, found " +
                             std::to_string(bytes.size()));
  }
  GrayImage img(w, h);
  for (std::size_t i = 0; i < bytes.size(); ++i) img.pixels[i] = static_cast<unsigned char>(bytes[i]);
  return img;
}

namespace {
bool is_pgm(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".pgm";
}
}  // namespace

GrayImage read_image(const std::filesystem::path& path) { return is_pgm(path) ? read_pgm(path) : read_raw(path); }

void read_image_size(const std::filesystem::path& path, std::size_t& width, std::size_t& height) {
  if (!is_pgm(path)) {
    read_sidecar(path, width, height);
    return;
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image " + path.string());
  std::string head(512, '\0');
  in.read(head.data(), static_cast<std::streamsize>(head.size()));
  head.resize(static_cast<std::size_t>(in.gcount()));
  const PgmHeader h = parse_pgm_header(head, path);
  width = h.width;
  height = h.height;
}

}  // namespace milnet
