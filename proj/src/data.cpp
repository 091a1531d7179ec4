#include "dyngate/data.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dyngate/error.hpp"
#include "dyngate/rng.hpp"

namespace dyngate {
namespace {

constexpr int kArchetypes = 10;
constexpr char kMagic[8] = {'D', 'Y', 'N', 'G', 'D', 'A', 'T', 'A'};
constexpr uint64_t kVersion = 1;

// --- geometry -------------------------------------------------------------

struct Geometry {
  int archetype = 0;
  double cx = 16, cy = 16;  // center, pixels
  double radius = 9;        // unit-shape scale, pixels
  double rot = 0;           // radians
};

Geometry sample_geometry(uint64_t seed, int64_t index, int classes) {
  Geometry g;
  g.archetype = static_cast<int>(index % classes);
  RngStream rng = named_stream(seed, "geometry", static_cast<uint64_t>(index));
  g.cx = 16.0 + rng.uniform(-3.0, 3.0);
  g.cy = 16.0 + rng.uniform(-3.0, 3.0);
  g.radius = rng.uniform(7.0, 11.0);
  g.rot = rng.uniform(-0.3, 0.3);
  return g;
}

bool half_plane(double ax, double ay, double bx, double by, double px,
                double py) {
  return (bx - ax) * (py - ay) - (by - ay) * (px - ax) >= 0.0;
}

// Point-in-shape tests in unit coordinates (shape fits roughly |u|,|v|<=1.2).
// The ten archetypes stay distinct under the +-0.3 rad rotation jitter.
bool inside_shape(int archetype, double u, double v) {
  switch (archetype) {
    case 0:  // disk
      return u * u + v * v <= 1.0;
    case 1:  // square
      return std::max(std::fabs(u), std::fabs(v)) <= 0.82;
    case 2: {  // triangle, apex up
      const double ax = 0.0, ay = -1.05;
      const double bx = 0.95, by = 0.65;
      const double cx = -0.95, cy = 0.65;
      return half_plane(ax, ay, bx, by, u, v) &&
             half_plane(bx, by, cx, cy, u, v) &&
             half_plane(cx, cy, ax, ay, u, v);
    }
    case 3:  // cross
      return (std::fabs(u) <= 0.32 && std::fabs(v) <= 1.0) ||
             (std::fabs(v) <= 0.32 && std::fabs(u) <= 1.0);
    case 4: {  // ring
      double r2 = u * u + v * v;
      return r2 >= 0.3025 && r2 <= 1.0;
    }
    case 5:  // diamond
      return std::fabs(u) + std::fabs(v) <= 1.15;
    case 6: {  // saltire: cross rotated 45 degrees
      const double s = 0.7071067811865476;
      double ru = (u + v) * s, rv = (v - u) * s;
      return (std::fabs(ru) <= 0.30 && std::fabs(rv) <= 1.0) ||
             (std::fabs(rv) <= 0.30 && std::fabs(ru) <= 1.0);
    }
    case 7:  // three horizontal bars
      return std::fabs(u) <= 1.0 &&
             (std::fabs(v + 0.66) <= 0.18 || std::fabs(v) <= 0.18 ||
              std::fabs(v - 0.66) <= 0.18);
    case 8:  // L-shape: left vertical and bottom horizontal bar
      return (u >= -1.0 && u <= -0.35 && std::fabs(v) <= 1.0) ||
             (v >= 0.35 && v <= 1.0 && std::fabs(u) <= 1.0);
    default: {  // crescent: disk minus offset disk
      double du = u - 0.45;
      return u * u + v * v <= 1.0 && du * du + v * v > 0.5625;
    }
  }
}

// 2x2 supersampled coverage in [0,1] for every pixel.
void render_mask(const Geometry& g, int h, int w, double* out) {
  const double cr = std::cos(g.rot), sr = std::sin(g.rot);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int hits = 0;
      for (double dy : {0.25, 0.75}) {
        for (double dx : {0.25, 0.75}) {
          double px = (x + dx - g.cx) / g.radius;
          double py = (y + dy - g.cy) / g.radius;
          double u = cr * px + sr * py;
          double v = -sr * px + cr * py;
          if (inside_shape(g.archetype, u, v)) ++hits;
        }
      }
      out[y * w + x] = hits * 0.25;
    }
  }
}

// --- style ----------------------------------------------------------------

struct StylePreset {
  std::array<double, 3> fg{}, bg{};
  double fg_jitter = 0, bg_jitter = 0;
  double grad_amp = 0;                 // linear background gradient
  double hatch_amp = 0, hatch_freq = 0;  // oriented sinusoid texture
  double outline = 0;                  // darkening along mask edges
  double noise = 0;                    // gaussian pixel noise sigma
  double contrast = 1;                 // applied around 0.5
  int blur_passes = 0;                 // 3x3 box blur
  bool grayscale = false;
};

StylePreset preset_params(const std::string& name) {
  StylePreset p;
  if (name == "photo") {
    p.fg = {0.55, 0.35, 0.25};
    p.bg = {0.45, 0.55, 0.65};
    p.fg_jitter = 0.25;
    p.bg_jitter = 0.20;
    p.grad_amp = 0.15;
    p.noise = 0.02;
    p.blur_passes = 1;
  } else if (name == "cartoon") {
    p.fg = {0.80, 0.20, 0.20};
    p.bg = {0.95, 0.85, 0.60};
    p.fg_jitter = 0.30;
    p.bg_jitter = 0.10;
    p.outline = 0.80;
    p.contrast = 1.10;
  } else if (name == "sketch") {
    p.fg = {0.25, 0.25, 0.25};
    p.bg = {0.92, 0.92, 0.92};
    p.fg_jitter = 0.10;
    p.bg_jitter = 0.04;
    p.hatch_amp = 0.12;
    p.hatch_freq = 9.0;
    p.outline = 0.50;
    p.noise = 0.03;
    p.grayscale = true;
  } else if (name == "night") {
    p.fg = {0.25, 0.28, 0.38};
    p.bg = {0.05, 0.06, 0.12};
    p.fg_jitter = 0.10;
    p.bg_jitter = 0.04;
    p.grad_amp = 0.05;
    p.noise = 0.06;
    p.contrast = 0.80;
    p.blur_passes = 1;
  } else if (name == "painting") {
    p.fg = {0.60, 0.45, 0.20};
    p.bg = {0.75, 0.70, 0.55};
    p.fg_jitter = 0.30;
    p.bg_jitter = 0.15;
    p.grad_amp = 0.20;
    p.hatch_amp = 0.08;
    p.hatch_freq = 4.0;
    p.outline = 0.20;
    p.noise = 0.01;
    p.contrast = 1.05;
    p.blur_passes = 1;
  } else {
    std::string known;
    for (const auto& s : style_presets()) {
      if (!known.empty()) known += ", ";
      known += s;
    }
    throw ValidationError("unknown style preset '" + name + "' (known: " +
                          known + ")");
  }
  return p;
}

void box_blur(std::vector<double>& img, int channels, int h, int w) {
  std::vector<double> src = img;
  for (int c = 0; c < channels; ++c) {
    const double* in = src.data() + static_cast<size_t>(c) * h * w;
    double* out = img.data() + static_cast<size_t>(c) * h * w;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double sum = 0;
        int cnt = 0;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            int yy = y + dy, xx = x + dx;
            if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
            sum += in[yy * w + xx];
            ++cnt;
          }
        }
        out[y * w + x] = sum / cnt;
      }
    }
  }
}

// Renders one styled sample into img (channels*h*w).
void render_sample(const std::string& domain, const StylePreset& p,
                   uint64_t seed, int64_t index, int classes, int channels,
                   int h, int w, double* img) {
  Geometry g = sample_geometry(seed, index, classes);
  std::vector<double> mask(static_cast<size_t>(h) * w);
  render_mask(g, h, w, mask.data());

  RngStream rng =
      named_stream(seed, "style:" + domain, static_cast<uint64_t>(index));
  std::array<double, 3> fg{}, bg{};
  for (int c = 0; c < 3; ++c)
    fg[c] = std::clamp(p.fg[c] + p.fg_jitter * rng.uniform(-1.0, 1.0), 0.0, 1.0);
  for (int c = 0; c < 3; ++c)
    bg[c] = std::clamp(p.bg[c] + p.bg_jitter * rng.uniform(-1.0, 1.0), 0.0, 1.0);
  if (p.grayscale) {
    double f = (fg[0] + fg[1] + fg[2]) / 3.0;
    double b = (bg[0] + bg[1] + bg[2]) / 3.0;
    fg = {f, f, f};
    bg = {b, b, b};
  }
  double gx = rng.uniform(-1.0, 1.0), gy = rng.uniform(-1.0, 1.0);
  double hatch_theta = rng.uniform(0.0, 3.141592653589793);
  double hatch_phase = rng.uniform(0.0, 6.283185307179586);
  const double hc = std::cos(hatch_theta), hs = std::sin(hatch_theta);

  std::vector<double> field(static_cast<size_t>(channels) * h * w);
  for (int c = 0; c < channels; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double m = mask[y * w + x];
        double grad = p.grad_amp *
                      (gx * (x / double(w) - 0.5) + gy * (y / double(h) - 0.5));
        double hatch =
            p.hatch_amp *
            std::sin(p.hatch_freq * 6.283185307179586 * (hc * x + hs * y) / w +
                     hatch_phase);
        double b = bg[c] + grad + hatch;
        field[(static_cast<size_t>(c) * h + y) * w + x] =
            b * (1.0 - m) + fg[c] * m;
      }
    }
  }

  if (p.outline > 0) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double m = mask[y * w + x];
        double e = 0;
        if (x > 0) e = std::max(e, std::fabs(m - mask[y * w + x - 1]));
        if (x + 1 < w) e = std::max(e, std::fabs(m - mask[y * w + x + 1]));
        if (y > 0) e = std::max(e, std::fabs(m - mask[(y - 1) * w + x]));
        if (y + 1 < h) e = std::max(e, std::fabs(m - mask[(y + 1) * w + x]));
        if (e <= 0) continue;
        for (int c = 0; c < channels; ++c) {
          double& px = field[(static_cast<size_t>(c) * h + y) * w + x];
          px *= 1.0 - p.outline * e;
        }
      }
    }
  }

  for (int pass = 0; pass < p.blur_passes; ++pass)
    box_blur(field, channels, h, w);

  for (double& px : field) px = (px - 0.5) * p.contrast + 0.5;
  if (p.noise > 0)
    for (double& px : field) px += p.noise * rng.normal();
  for (double& px : field) px = std::clamp(px, 0.0, 1.0);

  std::copy(field.begin(), field.end(), img);
}

// --- binary io ------------------------------------------------------------

uint64_t read_u64_at(std::istream& is, const char* what) {
  auto off = is.tellg();
  uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is)
    throw FormatError(std::string("dataset truncated at byte ") +
                      std::to_string(static_cast<long long>(off)) +
                      " reading " + what);
  return v;
}

std::string read_str_at(std::istream& is, const char* what) {
  uint64_t len = read_u64_at(is, what);
  if (len > 4096)
    throw FormatError(std::string("dataset string too long for ") + what);
  auto off = is.tellg();
  std::string s(len, '\0');
  is.read(s.data(), static_cast<std::streamsize>(len));
  if (!is)
    throw FormatError(std::string("dataset truncated at byte ") +
                      std::to_string(static_cast<long long>(off)) +
                      " reading " + what);
  return s;
}

void write_u64(std::ostream& os, uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void write_str(std::ostream& os, const std::string& s) {
  write_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

}  // namespace

const double* DomainDataset::image(int64_t i) const {
  if (i < 0 || i >= size())
    throw ValidationError("image index " + std::to_string(i) +
                          " out of range for dataset of " +
                          std::to_string(size()));
  return pixels.data() + static_cast<size_t>(i) * channels * h * w;
}

Tensor DomainDataset::batch(const std::vector<int64_t>& ids) const {
  if (ids.empty()) throw ValidationError("empty batch");
  Tensor out({static_cast<int64_t>(ids.size()), channels, h, w});
  const int64_t stride = static_cast<int64_t>(channels) * h * w;
  double* dst = out.data();
  for (size_t k = 0; k < ids.size(); ++k)
    std::memcpy(dst + k * stride, image(ids[k]),
                static_cast<size_t>(stride) * sizeof(double));
  return out;
}

const std::vector<std::string>& style_presets() {
  static const std::vector<std::string> kPresets = {
      "cartoon", "night", "painting", "photo", "sketch"};
  return kPresets;
}

Tensor shape_mask(uint64_t seed, int64_t index, int classes, int h, int w) {
  if (classes < 2 || classes > kArchetypes)
    throw ValidationError("classes must be in [2," +
                          std::to_string(kArchetypes) + "], got " +
                          std::to_string(classes));
  if (index < 0) throw ValidationError("negative sample index");
  if (h < 1 || w < 1) throw ValidationError("nonpositive mask extent");
  Tensor m({h, w});
  render_mask(sample_geometry(seed, index, classes), h, w, m.data());
  return m;
}

DomainDataset generate_domain(const std::string& preset, int classes,
                              int64_t n, uint64_t seed,
                              const std::string& split, int64_t index_offset) {
  if (classes < 2 || classes > kArchetypes)
    throw ValidationError("classes must be in [2," +
                          std::to_string(kArchetypes) + "], got " +
                          std::to_string(classes));
  if (n < 1) throw ValidationError("dataset size must be positive");
  if (index_offset < 0) throw ValidationError("negative index offset");
  if (split.empty()) throw ValidationError("empty split name");
  StylePreset p = preset_params(preset);

  DomainDataset d;
  d.domain = preset;
  d.split = split;
  d.classes = classes;
  d.seed = seed;
  d.index_offset = index_offset;
  d.labels.resize(static_cast<size_t>(n));
  d.pixels.resize(static_cast<size_t>(n) * d.channels * d.h * d.w);
  const int64_t stride = static_cast<int64_t>(d.channels) * d.h * d.w;
  for (int64_t i = 0; i < n; ++i) {
    int64_t index = index_offset + i;
    d.labels[static_cast<size_t>(i)] = static_cast<int>(index % classes);
    render_sample(preset, p, seed, index, classes, d.channels, d.h, d.w,
                  d.pixels.data() + i * stride);
  }
  return d;
}

void save_dataset(const std::string& path, const DomainDataset& d) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open dataset for writing: " + path);
  os.write(kMagic, sizeof kMagic);
  write_u64(os, kVersion);
  write_u64(os, static_cast<uint64_t>(d.classes));
  write_u64(os, static_cast<uint64_t>(d.size()));
  write_u64(os, static_cast<uint64_t>(d.channels));
  write_u64(os, static_cast<uint64_t>(d.h));
  write_u64(os, static_cast<uint64_t>(d.w));
  write_u64(os, d.seed);
  write_u64(os, static_cast<uint64_t>(d.index_offset));
  write_str(os, d.domain);
  write_str(os, d.split);
  for (int label : d.labels) write_u64(os, static_cast<uint64_t>(label));
  os.write(reinterpret_cast<const char*>(d.pixels.data()),
           static_cast<std::streamsize>(d.pixels.size() * sizeof(double)));
  if (!os) throw FormatError("dataset write failed: " + path);
}

DomainDataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open dataset: " + path);
  char magic[8] = {};
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw FormatError("not a dataset file: " + path);
  uint64_t version = read_u64_at(is, "version");
  if (version != kVersion)
    throw FormatError("dataset version " + std::to_string(version) +
                      " unsupported (expected " + std::to_string(kVersion) +
                      ")");
  DomainDataset d;
  uint64_t classes = read_u64_at(is, "classes");
  uint64_t n = read_u64_at(is, "sample count");
  uint64_t channels = read_u64_at(is, "channels");
  uint64_t h = read_u64_at(is, "height");
  uint64_t w = read_u64_at(is, "width");
  d.seed = read_u64_at(is, "seed");
  d.index_offset = static_cast<int64_t>(read_u64_at(is, "index offset"));
  if (classes < 2 || classes > kArchetypes)
    throw FormatError("dataset classes field out of range");
  if (n < 1 || n > (1ULL << 32) || channels < 1 || channels > 16 || h < 1 ||
      h > 4096 || w < 1 || w > 4096)
    throw FormatError("dataset header field out of range");
  d.classes = static_cast<int>(classes);
  d.channels = static_cast<int>(channels);
  d.h = static_cast<int>(h);
  d.w = static_cast<int>(w);
  d.domain = read_str_at(is, "domain");
  d.split = read_str_at(is, "split");
  d.labels.resize(n);
  for (uint64_t i = 0; i < n; ++i) {
    uint64_t label = read_u64_at(is, "label");
    if (label >= classes)
      throw FormatError("dataset label " + std::to_string(label) +
                        " out of range for " + std::to_string(classes) +
                        " classes");
    d.labels[i] = static_cast<int>(label);
  }
  d.pixels.resize(n * channels * h * w);
  auto off = is.tellg();
  is.read(reinterpret_cast<char*>(d.pixels.data()),
          static_cast<std::streamsize>(d.pixels.size() * sizeof(double)));
  if (!is)
    throw FormatError("dataset truncated at byte " +
                      std::to_string(static_cast<long long>(off)) +
                      " reading pixels");
  return d;
}

bool operator==(const ManifestEntry& a, const ManifestEntry& b) {
  return a.domain == b.domain && a.split == b.split && a.path == b.path;
}

void write_manifest(const std::string& path,
                    const std::vector<ManifestEntry>& entries) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open manifest for writing: " + path);
  os << "# domain\tsplit\tpath\n";
  for (const auto& e : entries) {
    if (e.domain.empty() || e.split.empty() || e.path.empty())
      throw ValidationError("manifest entry with empty field");
    os << e.domain << '\t' << e.split << '\t' << e.path << '\n';
  }
  if (!os) throw FormatError("manifest write failed: " + path);
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open manifest: " + path);
  std::vector<ManifestEntry> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    ManifestEntry e;
    if (!std::getline(ls, e.domain, '\t') || !std::getline(ls, e.split, '\t') ||
        !std::getline(ls, e.path, '\t') || e.domain.empty() ||
        e.split.empty() || e.path.empty())
      throw ParseError("manifest line " + std::to_string(line_no) +
                       ": expected domain<TAB>split<TAB>path");
    std::string extra;
    if (std::getline(ls, extra, '\t'))
      throw ParseError("manifest line " + std::to_string(line_no) +
                       ": trailing fields");
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace dyngate
