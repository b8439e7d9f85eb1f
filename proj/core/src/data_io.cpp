#include "milnet/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "milnet/key_values.hpp"
#include "milnet/rng.hpp"

namespace milnet {

std::size_t Manifest::positives() const {
  return static_cast<std::size_t>(
      std::count_if(records.begin(), records.end(), [](const ManifestRecord& r) { return r.label == 1; }));
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) {
    while (!field.empty() && std::isspace(static_cast<unsigned char>(field.back()))) field.pop_back();
    while (!field.empty() && std::isspace(static_cast<unsigned char>(field.front()))) field.erase(field.begin());
    out.push_back(field);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::size_t parse_field(const std::string& text, const std::string& name, const std::string& where) {
  std::size_t used = 0;
  unsigned long v = 0;
  try {
    if (!text.empty() && text[0] != '-') v = std::stoul(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size()) throw std::runtime_error(where + ": bad " + name + " '" + text + "'");
  return v;
}

}  // namespace

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  const auto base = path.parent_path();
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": empty manifest");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv(line);
  const bool with_boxes = header == std::vector<std::string>{"path", "label", "x", "y", "w", "h"};
  if (!with_boxes && header != std::vector<std::string>{"path", "label"}) {
    throw std::runtime_error(path.string() + ":1: header must be `path,label` or `path,label,x,y,w,h`");
  }
  Manifest manifest;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    const auto fields = split_csv(line);
    if (fields.size() != header.size()) {
      throw std::runtime_error(where + ": expected " + std::to_string(header.size()) + " fields, found " +
                               std::to_string(fields.size()));
    }
    ManifestRecord rec;
    rec.path = std::filesystem::path(fields[0]);
    if (rec.path.is_relative()) rec.path = base / rec.path;
    if (fields[1] != "0" && fields[1] != "1") throw std::runtime_error(where + ": label must be 0 or 1, got '" + fields[1] + "'");
    rec.label = fields[1] == "1" ? 1 : 0;
    if (!std::filesystem::exists(rec.path)) throw std::runtime_error(where + ": missing image " + rec.path.string());
    if (with_boxes) {
      const bool any = std::any_of(fields.begin() + 2, fields.end(), [](const std::string& f) { return !f.empty(); });
      if (any) {
        Box b{parse_field(fields[2], "x", where), parse_field(fields[3], "y", where), parse_field(fields[4], "w", where),
              parse_field(fields[5], "h", where)};
        std::size_t w = 0, h = 0;
        read_image_size(rec.path, w, h);
        if (b.w == 0 || b.h == 0 || b.x + b.w > w || b.y + b.h > h) {
          throw std::runtime_error(where + ": box (" + fields[2] + "," + fields[3] + "," + fields[4] + "," + fields[5] +
                                   ") exceeds the " + std::to_string(w) + "x" + std::to_string(h) + " image");
        }
        rec.mass = b;
      }
    }
    manifest.records.push_back(std::move(rec));
  }
  return manifest;
}

void save_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const auto base = path.parent_path();
  out << "path,label,x,y,w,h\n";
  for (const auto& r : manifest.records) {
    std::filesystem::path p = r.path;
    if (!base.empty() && p.parent_path() == base) p = p.filename();
    out << p.string() << ',' << r.label;
    if (r.mass) {
      out << ',' << r.mass->x << ',' << r.mass->y << ',' << r.mass->w << ',' << r.mass->h << '\n';
    } else {
      out << ",,,,\n";
    }
  }
}

std::size_t SynthSpec::mass_side() const {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(mass_fraction * double(image_size))));
}

void SynthSpec::validate() const {
  if (image_size < 8) throw std::invalid_argument("synth: image_size must be at least 8");
  if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("synth: n_pos and n_neg must be positive");
  if (!(mass_fraction > 0.0 && mass_fraction < 1.0)) throw std::invalid_argument("synth: mass_fraction must lie in (0, 1)");
  if (mass_side() > image_size) throw std::invalid_argument("synth: mass does not fit in the image");
  if (!(lift >= 0.0) || !(noise >= 0.0) || !(texture >= 0.0)) {
    throw std::invalid_argument("synth: lift, noise and texture must be nonnegative");
  }
  if (!(background >= 0.0 && background <= 255.0)) throw std::invalid_argument("synth: background must lie in [0, 255]");
}

SynthSpec parse_synth_spec(const std::string& text) {
  const KeyValues kv = KeyValues::parse(text);
  kv.require_known({"image_size", "n_pos", "n_neg", "mass_fraction", "lift", "noise", "texture", "background", "seed"});
  SynthSpec s;
  if (kv.has("image_size")) s.image_size = kv.get_uint("image_size");
  if (kv.has("n_pos")) s.n_pos = kv.get_uint("n_pos");
  if (kv.has("n_neg")) s.n_neg = kv.get_uint("n_neg");
  if (kv.has("mass_fraction")) s.mass_fraction = kv.get_double("mass_fraction");
  if (kv.has("lift")) s.lift = kv.get_double("lift");
  if (kv.has("noise")) s.noise = kv.get_double("noise");
  if (kv.has("texture")) s.texture = kv.get_double("texture");
  if (kv.has("background")) s.background = kv.get_double("background");
  if (kv.has("seed")) s.seed = kv.get_uint("seed");
  s.validate();
  return s;
}

SyntheticImage render_synthetic(const SynthSpec& spec, std::size_t index, bool positive) {
  spec.validate();
  Rng rng = make_stream(spec.seed, {tag(StreamPurpose::kSynth), index});
  const std::size_t size = spec.image_size;
  std::uniform_real_distribution<double> freq(-2.0, 2.0), phase(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> gauss(0.0, 1.0);

  constexpr int kWaves = 4;
  double fx[kWaves], fy[kWaves], ph[kWaves];
  for (int i = 0; i < kWaves; ++i) {
    fx[i] = freq(rng);
    fy[i] = freq(rng);
    ph[i] = phase(rng);
  }
  std::vector<double> base(size * size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      double t = 0.0;
      for (int i = 0; i < kWaves; ++i) {
        t += std::sin(2.0 * std::numbers::pi * (fx[i] * double(x) + fy[i] * double(y)) / double(size) + ph[i]);
      }
      base[y * size + x] = spec.background + spec.texture * t / kWaves + spec.noise * gauss(rng);
    }

  SyntheticImage out;
  out.label = positive ? 1 : 0;
  if (positive) {
    const std::size_t side = spec.mass_side();
    std::uniform_int_distribution<std::size_t> pos(0, size - side);
    const Box box{pos(rng), pos(rng), side, side};
    // Soft edge: ramp falls linearly to zero over 2 pixels outside the box.
    auto ramp = [&box](std::size_t x, std::size_t y) {
      const long dx = std::max({long(box.x) - long(x), long(x) - long(box.x + box.w - 1), 0L});
      const long dy = std::max({long(box.y) - long(y), long(y) - long(box.y + box.h - 1), 0L});
      const long d = std::max(dx, dy);
      return d >= 3 ? 0.0 : 1.0 - double(d) / 3.0;
    };
    double in_sum = 0.0, out_sum = 0.0, ramp_out = 0.0;
    std::size_t n_in = 0;
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        const bool inside = x >= box.x && x < box.x + box.w && y >= box.y && y < box.y + box.h;
        if (inside) {
          in_sum += base[y * size + x];
          ++n_in;
        } else {
          out_sum += base[y * size + x];
          ramp_out += ramp(x, y);
        }
      }
    const double n_out = double(size * size - n_in);
    const double gap = std::max(0.0, out_sum / n_out - in_sum / double(n_in));
    // Contrast after rendering is delta * (1 - ramp_out / n_out) - gap; one extra level absorbs rounding.
    const double delta = (spec.lift + gap + 1.0) / (1.0 - ramp_out / n_out);
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) base[y * size + x] += delta * ramp(x, y);
    out.mass = box;
  }
  out.image = GrayImage(size, size);
  for (std::size_t i = 0; i < base.size(); ++i) out.image.pixels[i] = double(to_byte(base[i]));
  return out;
}

Manifest generate_synthetic(const SynthSpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  std::filesystem::create_directories(out_dir);
  const std::size_t total = spec.n_pos + spec.n_neg;
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_stream(spec.seed, {tag(StreamPurpose::kSynth), ~std::uint64_t{0}});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> positive(total, false);
  for (std::size_t i = 0; i < spec.n_pos; ++i) positive[order[i]] = true;

  Manifest manifest;
  for (std::size_t i = 0; i < total; ++i) {
    const SyntheticImage img = render_synthetic(spec, i, positive[i]);
    char name[32];
    std::snprintf(name, sizeof(name), "img_%04zu.pgm", i);
    const auto path = out_dir / name;
    write_pgm(path, img.image);
    manifest.records.push_back({path, img.label, img.mass});
  }
  save_manifest(manifest, out_dir / "manifest.csv");
  return manifest;
}

}  // namespace milnet
