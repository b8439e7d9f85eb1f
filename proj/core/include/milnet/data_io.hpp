#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "milnet/image.hpp"

namespace milnet {

struct ManifestRecord {
  std::filesystem::path path;  // resolved against the manifest's directory
  int label = 0;
  std::optional<Box> mass;
};

struct Manifest {
  std::vector<ManifestRecord> records;

  std::size_t positives() const;
};

/// CSV with header `path,label` or `path,label,x,y,w,h`. Box fields may be
/// left empty on rows without a mass. Errors name the offending line.
Manifest load_manifest(const std::filesystem::path& path);

/// Writes the manifest with paths relative to the manifest's directory when possible.
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);

/// Planted-mass generator settings. Defaults: 200 images, 20% positive, mass
/// side 0.14 of the image (about 2% of its area).
struct SynthSpec {
  std::size_t image_size = 64;
  std::size_t n_pos = 40;
  std::size_t n_neg = 160;
  double mass_fraction = 0.14;
  double lift = 60.0;         // minimum mean contrast of the mass box over the rest of the image
  double noise = 6.0;         // per-pixel Gaussian noise sigma
  double texture = 20.0;      // amplitude of the low-frequency background
  double background = 90.0;   // mean background intensity
  std::uint64_t seed = 1;

  std::size_t mass_side() const;
  void validate() const;
};

/// Parses flat `key = value` text with the SynthSpec field names.
SynthSpec parse_synth_spec(const std::string& text);

struct SyntheticImage {
  GrayImage image;
  int label = 0;
  std::optional<Box> mass;
};

/// Renders image `index` of the set; a pure function of (spec, index, label).
SyntheticImage render_synthetic(const SynthSpec& spec, std::size_t index, bool positive);

/// Writes `img_NNNN.pgm` files plus `manifest.csv` into `out_dir`.
Manifest generate_synthetic(const SynthSpec& spec, const std::filesystem::path& out_dir);

}  // namespace milnet
