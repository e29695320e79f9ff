#include "hssdct/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>

#include <nlohmann/json.hpp>

#include "hssdct/error.hpp"
#include "hssdct/ops.hpp"
#include "hssdct/rng.hpp"

namespace hssdct {

namespace {

void require_cube(const Tensor& cube, const char* op) {
  if (cube.ndim() != 3) {
    throw DimensionError(std::string(op) + ": expected [C,H,W], got " + shape_str(cube.shape()));
  }
}

/// Separable blur of `planes` planes of h x w, in place.
void blur_planes(std::vector<double>& data, std::size_t planes, std::size_t h, std::size_t w,
                 const std::vector<double>& taps) {
  const long radius = static_cast<long>(taps.size() / 2);
  std::vector<double> tmp(h * w);
  for (std::size_t p = 0; p < planes; ++p) {
    double* plane = data.data() + p * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (long t = -radius; t <= radius; ++t) {
          acc += taps[t + radius] *
                 plane[y * w + reflect_index(static_cast<long>(x) + t, static_cast<long>(w))];
        }
        tmp[y * w + x] = acc;
      }
    }
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (long t = -radius; t <= radius; ++t) {
          acc += taps[t + radius] *
                 tmp[reflect_index(static_cast<long>(y) + t, static_cast<long>(h)) * w + x];
        }
        plane[y * w + x] = acc;
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// synthesis

SynthScene synth_scene_detailed(const SynthParams& p) {
  if (p.n_endmembers < 2) throw ConfigError("synth: n_endmembers must be >= 2");
  if (p.bands < p.n_endmembers) throw ConfigError("synth: bands must be >= n_endmembers");
  if (p.height == 0 || p.width == 0) throw ConfigError("synth: empty spatial extent");
  if (p.noise_sigma < 0.0) throw ConfigError("synth: noise_sigma must be >= 0");

  Rng rng(p.seed);
  const std::size_t k = p.n_endmembers, c = p.bands, h = p.height, w = p.width;

  std::vector<double> spectra(k * c, 0.0);
  for (std::size_t e = 0; e < k; ++e) {
    double* s = spectra.data() + e * c;
    for (int g = 0; g < 3; ++g) {
      const double center = rng.uniform(0.0, static_cast<double>(c - 1));
      const double width = rng.uniform(0.08, 0.35) * static_cast<double>(c);
      const double amplitude = rng.uniform(0.3, 1.0);
      for (std::size_t b = 0; b < c; ++b) {
        const double z = (static_cast<double>(b) - center) / width;
        s[b] += amplitude * std::exp(-0.5 * z * z);
      }
    }
    const auto [lo, hi] = std::minmax_element(s, s + c);
    const double lo_v = *lo, range = *hi - *lo;
    for (std::size_t b = 0; b < c; ++b) {
      s[b] = range > 1e-12 ? 0.05 + 0.95 * (s[b] - lo_v) / range : 0.5;
    }
  }

  std::vector<double> fields(k * h * w);
  for (auto& v : fields) v = rng.normal();
  const double smooth = std::max(1.0, static_cast<double>(std::min(h, w)) / 8.0);
  blur_planes(fields, k, h, w, gaussian_kernel(smooth));
  constexpr double kSharpness = 3.0;
  for (std::size_t e = 0; e < k; ++e) {
    double* f = fields.data() + e * h * w;
    double mean = 0.0;
    for (std::size_t i = 0; i < h * w; ++i) mean += f[i];
    mean /= static_cast<double>(h * w);
    double var = 0.0;
    for (std::size_t i = 0; i < h * w; ++i) var += (f[i] - mean) * (f[i] - mean);
    const double sd = std::sqrt(var / static_cast<double>(h * w));
    for (std::size_t i = 0; i < h * w; ++i) {
      f[i] = sd > 1e-12 ? kSharpness * (f[i] - mean) / sd : 0.0;
    }
  }
  std::vector<double> abundance(k * h * w);
  for (std::size_t i = 0; i < h * w; ++i) {
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t e = 0; e < k; ++e) peak = std::max(peak, fields[e * h * w + i]);
    double total = 0.0;
    for (std::size_t e = 0; e < k; ++e) {
      const double v = std::exp(fields[e * h * w + i] - peak);
      abundance[e * h * w + i] = v;
      total += v;
    }
    for (std::size_t e = 0; e < k; ++e) abundance[e * h * w + i] /= total;
  }

  std::vector<double> cube(c * h * w, 0.0);
  for (std::size_t b = 0; b < c; ++b) {
    for (std::size_t e = 0; e < k; ++e) {
      const double s = spectra[e * c + b];
      const double* a = abundance.data() + e * h * w;
      double* dst = cube.data() + b * h * w;
      for (std::size_t i = 0; i < h * w; ++i) dst[i] += s * a[i];
    }
  }
  if (p.noise_sigma > 0.0) {
    for (auto& v : cube) v += p.noise_sigma * rng.normal();
  }
  for (auto& v : cube) v = std::clamp(v, 0.0, 1.0);

  return SynthScene{Tensor({c, h, w}, std::move(cube)), Tensor({k, c}, std::move(spectra)),
                    Tensor({k, h, w}, std::move(abundance))};
}

Tensor synth_scene(std::uint64_t seed, std::size_t height, std::size_t width, std::size_t bands,
                   std::size_t n_endmembers, double noise_sigma) {
  return synth_scene_detailed(SynthParams{seed, height, width, bands, n_endmembers, noise_sigma})
      .hr_hsi;
}

// ---------------------------------------------------------------------------
// degradation

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) throw ConfigError("gaussian blur sigma must be > 0");
  const long radius = static_cast<long>(std::ceil(3.0 * sigma));
  std::vector<double> taps(2 * radius + 1);
  double total = 0.0;
  for (long i = -radius; i <= radius; ++i) {
    const double z = static_cast<double>(i) / sigma;
    taps[i + radius] = std::exp(-0.5 * z * z);
    total += taps[i + radius];
  }
  for (auto& t : taps) t /= total;
  return taps;
}

Tensor gaussian_blur(const Tensor& cube, double sigma) {
  require_cube(cube, "gaussian_blur");
  std::vector<double> data(cube.values().begin(), cube.values().end());
  blur_planes(data, cube.extent(0), cube.extent(1), cube.extent(2), gaussian_kernel(sigma));
  return Tensor(cube.shape(), std::move(data));
}

Tensor degrade_spatial(const Tensor& hr_hsi, std::size_t ratio, double sigma) {
  require_cube(hr_hsi, "degrade_spatial");
  if (ratio == 0) throw ConfigError("degrade_spatial: ratio must be >= 1");
  const std::size_t c = hr_hsi.extent(0), h = hr_hsi.extent(1), w = hr_hsi.extent(2);
  if (h % ratio != 0 || w % ratio != 0) {
    throw DimensionError("degrade_spatial: " + shape_str(hr_hsi.shape()) +
                         " not divisible by ratio " + std::to_string(ratio));
  }
  const Tensor blurred = gaussian_blur(hr_hsi, sigma);
  const auto bv = blurred.values();
  const std::size_t lh = h / ratio, lw = w / ratio, off = ratio / 2;
  std::vector<double> out(c * lh * lw);
  for (std::size_t b = 0; b < c; ++b) {
    for (std::size_t i = 0; i < lh; ++i) {
      for (std::size_t j = 0; j < lw; ++j) {
        out[(b * lh + i) * lw + j] = bv[(b * h + ratio * i + off) * w + ratio * j + off];
      }
    }
  }
  return Tensor({c, lh, lw}, std::move(out));
}

Tensor default_srf(std::size_t msi_bands, std::size_t hsi_bands) {
  if (msi_bands == 0 || msi_bands > hsi_bands) {
    throw ConfigError("default_srf: need 1 <= msi_bands <= hsi_bands");
  }
  std::vector<double> srf(msi_bands * hsi_bands, 0.0);
  for (std::size_t m = 0; m < msi_bands; ++m) {
    const std::size_t begin = m * hsi_bands / msi_bands;
    const std::size_t end = (m + 1) * hsi_bands / msi_bands;
    for (std::size_t b = begin; b < end; ++b) {
      srf[m * hsi_bands + b] = 1.0 / static_cast<double>(end - begin);
    }
  }
  return Tensor({msi_bands, hsi_bands}, std::move(srf));
}

Tensor degrade_spectral(const Tensor& hr_hsi, const Tensor& srf) {
  require_cube(hr_hsi, "degrade_spectral");
  const std::size_t c = hr_hsi.extent(0);
  if (srf.ndim() != 2 || srf.extent(1) != c) {
    throw DimensionError("degrade_spectral: srf " + shape_str(srf.shape()) + " does not match " +
                         std::to_string(c) + " bands");
  }
  const std::size_t m = srf.extent(0);
  const auto sv = srf.values();
  for (std::size_t r = 0; r < m; ++r) {
    double total = 0.0;
    for (std::size_t b = 0; b < c; ++b) {
      if (sv[r * c + b] < 0.0) {
        throw ConfigError("degrade_spectral: srf row " + std::to_string(r) + " has a negative weight");
      }
      total += sv[r * c + b];
    }
    if (std::abs(total - 1.0) > 1e-9) {
      throw ConfigError("degrade_spectral: srf row " + std::to_string(r) + " sums to " +
                        std::to_string(total));
    }
  }
  const std::size_t p = hr_hsi.extent(1) * hr_hsi.extent(2);
  std::vector<double> out(m * p, 0.0);
  ConstMatrixMap cube(hr_hsi.values().data(), Eigen::Index(c), Eigen::Index(p));
  MatrixMap(out.data(), Eigen::Index(m), Eigen::Index(p)).noalias() = srf.matrix() * cube;
  return Tensor({m, hr_hsi.extent(1), hr_hsi.extent(2)}, std::move(out));
}

namespace {

double keys_cubic(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x < 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

struct Taps {
  std::size_t index[4];
  double weight[4];
};

std::vector<Taps> bicubic_taps(std::size_t lr_extent, std::size_t ratio) {
  const std::size_t hr_extent = lr_extent * ratio;
  const double off = static_cast<double>(ratio / 2);
  std::vector<Taps> taps(hr_extent);
  for (std::size_t x = 0; x < hr_extent; ++x) {
    const double u = (static_cast<double>(x) - off) / static_cast<double>(ratio);
    const double base = std::floor(u);
    const double t = u - base;
    for (int k = 0; k < 4; ++k) {
      const long src = static_cast<long>(base) + k - 1;
      taps[x].index[k] =
          static_cast<std::size_t>(std::clamp<long>(src, 0, static_cast<long>(lr_extent) - 1));
      taps[x].weight[k] = keys_cubic(t - static_cast<double>(k - 1));
    }
  }
  return taps;
}

}  // namespace

Tensor bicubic_upsample(const Tensor& lr, std::size_t ratio) {
  require_cube(lr, "bicubic_upsample");
  if (ratio == 0) throw ConfigError("bicubic_upsample: ratio must be >= 1");
  const std::size_t c = lr.extent(0), h = lr.extent(1), w = lr.extent(2);
  const std::size_t hh = h * ratio, ww = w * ratio;
  const auto tx = bicubic_taps(w, ratio);
  const auto ty = bicubic_taps(h, ratio);
  const auto lv = lr.values();
  std::vector<double> rows(c * h * ww);
  for (std::size_t b = 0; b < c; ++b) {
    for (std::size_t y = 0; y < h; ++y) {
      const double* src = lv.data() + (b * h + y) * w;
      double* dst = rows.data() + (b * h + y) * ww;
      for (std::size_t x = 0; x < ww; ++x) {
        double acc = 0.0;
        for (int k = 0; k < 4; ++k) acc += tx[x].weight[k] * src[tx[x].index[k]];
        dst[x] = acc;
      }
    }
  }
  std::vector<double> out(c * hh * ww);
  for (std::size_t b = 0; b < c; ++b) {
    for (std::size_t y = 0; y < hh; ++y) {
      double* dst = out.data() + (b * hh + y) * ww;
      for (std::size_t x = 0; x < ww; ++x) {
        double acc = 0.0;
        for (int k = 0; k < 4; ++k) acc += ty[y].weight[k] * rows[(b * h + ty[y].index[k]) * ww + x];
        dst[x] = acc;
      }
    }
  }
  return Tensor({c, hh, ww}, std::move(out));
}

// ---------------------------------------------------------------------------
// scene triples

double default_blur_sigma(std::size_t ratio) { return static_cast<double>(ratio) / 2.0; }

SceneTriple make_scene_triple(const SceneSpec& spec) {
  SceneTriple t;
  t.seed = spec.seed;
  t.ratio = spec.ratio;
  t.blur_sigma = spec.blur_sigma > 0.0 ? spec.blur_sigma : default_blur_sigma(spec.ratio);
  t.hr_hsi = synth_scene(spec.seed, spec.height, spec.width, spec.bands, spec.n_endmembers,
                         spec.noise_sigma);
  t.lr_hsi = degrade_spatial(t.hr_hsi, spec.ratio, t.blur_sigma);
  t.srf = default_srf(spec.msi_bands, spec.bands);
  t.hr_msi = degrade_spectral(t.hr_hsi, t.srf);
  return t;
}

// ---------------------------------------------------------------------------
// cube files

namespace {

constexpr std::uint8_t kCubeMagic[4] = {'H', 'S', 'C', '1'};
constexpr std::size_t kCubeHeader = 16;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[offset + i]) << (8 * i);
  return v;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

}  // namespace

std::vector<std::uint8_t> encode_cube(const Tensor& cube) {
  require_cube(cube, "write_cube");
  constexpr auto kMax = std::numeric_limits<std::uint32_t>::max();
  for (auto e : cube.shape()) {
    if (e > kMax) throw FormatError("cube extent " + std::to_string(e) + " exceeds 32 bits");
  }
  std::vector<std::uint8_t> out(std::begin(kCubeMagic), std::end(kCubeMagic));
  out.reserve(kCubeHeader + 8 * cube.numel());
  put_u32(out, static_cast<std::uint32_t>(cube.extent(1)));
  put_u32(out, static_cast<std::uint32_t>(cube.extent(2)));
  put_u32(out, static_cast<std::uint32_t>(cube.extent(0)));
  for (double v : cube.values()) {
    if (!std::isfinite(v)) throw FormatError("cube contains a non-finite value");
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  return out;
}

Tensor decode_cube(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw FormatError("truncated header at byte " + std::to_string(bytes.size()));
  if (!std::equal(std::begin(kCubeMagic), std::end(kCubeMagic), bytes.begin())) {
    throw FormatError("bad magic at byte 0 (expected \"HSC1\")");
  }
  if (bytes.size() < kCubeHeader) {
    throw FormatError("truncated header at byte " + std::to_string(bytes.size()));
  }
  const std::uint64_t h = get_u32(bytes, 4), w = get_u32(bytes, 8), c = get_u32(bytes, 12);
  if (h == 0 || w == 0 || c == 0) throw FormatError("zero extent in header at byte 4");
  const std::uint64_t count = h * w * c;  // < 2^96 cannot overflow after the 8x below is checked
  if (count > (std::numeric_limits<std::uint64_t>::max() - kCubeHeader) / 8 ||
      count > std::numeric_limits<std::size_t>::max() / 8) {
    throw FormatError("extent overflow in header at byte 4");
  }
  const std::uint64_t expected = kCubeHeader + 8 * count;
  if (bytes.size() < expected) {
    throw FormatError("truncated payload at byte " + std::to_string(bytes.size()) + " (expected " +
                      std::to_string(expected) + " bytes)");
  }
  if (bytes.size() > expected) {
    throw FormatError("trailing data at byte " + std::to_string(expected));
  }
  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t bits = 0;
    const std::size_t off = kCubeHeader + 8 * i;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[off + b]) << (8 * b);
    values[i] = std::bit_cast<double>(bits);
  }
  return Tensor({c, h, w}, std::move(values));
}

void write_cube(const std::filesystem::path& path, const Tensor& cube) {
  write_file(path, encode_cube(cube));
}

Tensor read_cube(const std::filesystem::path& path) { return decode_cube(read_file(path)); }

// ---------------------------------------------------------------------------
// manifest

namespace {

constexpr const char* kManifestFormat = "hssdct-manifest-1";

}  // namespace

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  nlohmann::ordered_json doc;
  doc["format"] = kManifestFormat;
  doc["scenes"] = nlohmann::ordered_json::array();
  for (const auto& e : manifest.scenes) {
    nlohmann::ordered_json s;
    s["name"] = e.name;
    s["hr_hsi"] = e.hr_hsi.generic_string();
    s["lr_hsi"] = e.lr_hsi.generic_string();
    s["hr_msi"] = e.hr_msi.generic_string();
    s["seed"] = e.seed;
    s["ratio"] = e.ratio;
    s["blur_sigma"] = e.blur_sigma;
    s["noise_sigma"] = e.noise_sigma;
    s["n_endmembers"] = e.n_endmembers;
    s["srf"] = e.srf;
    doc["scenes"].push_back(std::move(s));
  }
  const std::string text = doc.dump(2) + "\n";
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

Manifest read_manifest(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("manifest '" + path.string() + "': " + e.what());
  }
  if (doc.value("format", "") != kManifestFormat) {
    throw FormatError("manifest '" + path.string() + "': missing or unknown format tag");
  }
  Manifest m;
  try {
    for (const auto& s : doc.at("scenes")) {
      ManifestEntry e;
      e.name = s.at("name").get<std::string>();
      e.hr_hsi = s.at("hr_hsi").get<std::string>();
      e.lr_hsi = s.at("lr_hsi").get<std::string>();
      e.hr_msi = s.at("hr_msi").get<std::string>();
      e.seed = s.at("seed").get<std::uint64_t>();
      e.ratio = s.at("ratio").get<std::size_t>();
      e.blur_sigma = s.at("blur_sigma").get<double>();
      e.noise_sigma = s.value("noise_sigma", 0.0);
      e.n_endmembers = s.value("n_endmembers", std::size_t{0});
      e.srf = s.at("srf").get<std::vector<std::vector<double>>>();
      m.scenes.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest '" + path.string() + "': " + e.what());
  }
  return m;
}

std::vector<SceneTriple> load_dataset(const std::filesystem::path& manifest_path) {
  const auto manifest = read_manifest(manifest_path);
  const auto dir = manifest_path.parent_path();
  std::vector<SceneTriple> out;
  for (const auto& e : manifest.scenes) {
    SceneTriple t;
    t.hr_hsi = read_cube(dir / e.hr_hsi);
    t.lr_hsi = read_cube(dir / e.lr_hsi);
    t.hr_msi = read_cube(dir / e.hr_msi);
    std::vector<double> srf;
    const std::size_t rows = e.srf.size();
    const std::size_t cols = rows ? e.srf[0].size() : 0;
    for (const auto& r : e.srf) {
      if (r.size() != cols) throw FormatError("manifest: ragged srf for scene " + e.name);
      srf.insert(srf.end(), r.begin(), r.end());
    }
    t.srf = Tensor({rows, cols}, std::move(srf));
    t.ratio = e.ratio;
    t.blur_sigma = e.blur_sigma;
    t.seed = e.seed;
    out.push_back(std::move(t));
  }
  if (out.empty()) throw FormatError("manifest '" + manifest_path.string() + "' lists no scenes");
  return out;
}

}  // namespace hssdct
