#include "miq3d/synthdata.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>

#include "miq3d/errors.hpp"
#include "miq3d/rng.hpp"

namespace miq3d {

static_assert(std::endian::native == std::endian::little, "the .vol writer assumes a little-endian host");

void SynthConfig::validate() const {
  for (auto e : shape)
    if (e == 0) throw ConfigError("synthetic volume extents must be positive");
  if (max_instances == 0) throw ConfigError("max_instances must be at least 1");
  if (!(radius_min > 0) || radius_max < radius_min)
    throw ConfigError("radius range must satisfy 0 < r_min <= r_max");
  const double limit = static_cast<double>(std::min({shape[0], shape[1], shape[2]})) / 3.0;
  if (!(radius_max < limit)) throw ConfigError("r_max must be below min(D,H,W)/3");
  if (noise_sigma < 0 || blur_sigma < 0) throw ConfigError("noise and blur sigmas must be nonnegative");
}

namespace {

struct Blob {
  double center[3];
  double radius[3];
  // Integer bounding box, inclusive.
  std::ptrdiff_t lo[3];
  std::ptrdiff_t hi[3];
};

bool inside_blob(const Blob& b, std::size_t d, std::size_t h, std::size_t w) {
  const double p[3] = {static_cast<double>(d), static_cast<double>(h), static_cast<double>(w)};
  double q = 0;
  for (int a = 0; a < 3; ++a) {
    const double t = (p[a] - b.center[a]) / b.radius[a];
    q += t * t;
  }
  return q <= 1.0;
}

BinaryMask rasterize(const Blob& b, const Extent3& shape) {
  BinaryMask m(shape);
  for (std::ptrdiff_t d = b.lo[0]; d <= b.hi[0]; ++d)
    for (std::ptrdiff_t h = b.lo[1]; h <= b.hi[1]; ++h)
      for (std::ptrdiff_t w = b.lo[2]; w <= b.hi[2]; ++w) {
        const auto ud = static_cast<std::size_t>(d), uh = static_cast<std::size_t>(h),
                   uw = static_cast<std::size_t>(w);
        if (inside_blob(b, ud, uh, uw)) m.voxels[m.index(ud, uh, uw)] = 1;
      }
  return m;
}

// Chebyshev distance between masks is at least `margin`+1 when every voxel of
// `m` is more than `margin` voxels away (per axis max) from the occupied set.
bool clear_of(const BinaryMask& m, const BinaryMask& occupied, std::size_t margin) {
  const auto [nd, nh, nw] = m.shape;
  const auto sm = static_cast<std::ptrdiff_t>(margin);
  for (std::size_t d = 0; d < nd; ++d)
    for (std::size_t h = 0; h < nh; ++h)
      for (std::size_t w = 0; w < nw; ++w) {
        if (!m.at(d, h, w)) continue;
        for (std::ptrdiff_t a = -sm; a <= sm; ++a)
          for (std::ptrdiff_t b = -sm; b <= sm; ++b)
            for (std::ptrdiff_t c = -sm; c <= sm; ++c) {
              const auto x = static_cast<std::ptrdiff_t>(d) + a;
              const auto y = static_cast<std::ptrdiff_t>(h) + b;
              const auto z = static_cast<std::ptrdiff_t>(w) + c;
              if (x < 0 || y < 0 || z < 0 || x >= static_cast<std::ptrdiff_t>(nd) ||
                  y >= static_cast<std::ptrdiff_t>(nh) || z >= static_cast<std::ptrdiff_t>(nw))
                continue;
              if (occupied.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y),
                              static_cast<std::size_t>(z)))
                return false;
            }
      }
  return true;
}

std::vector<double> gaussian_kernel(double sigma) {
  if (sigma <= 0) return {1.0};
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0;
  for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    total += v;
  }
  for (auto& v : k) v /= total;
  return k;
}

// Separable blur with edge replication.
void blur(std::vector<double>& vol, const Extent3& shape, double sigma) {
  const auto kernel = gaussian_kernel(sigma);
  if (kernel.size() == 1) return;
  const auto radius = static_cast<std::ptrdiff_t>(kernel.size() / 2);
  const std::size_t strides[3] = {shape[1] * shape[2], shape[2], 1};
  std::vector<double> line, out;
  for (int axis = 0; axis < 3; ++axis) {
    const std::size_t len = shape[static_cast<std::size_t>(axis)];
    const std::size_t stride = strides[axis];
    line.resize(len);
    out.resize(len);
    for (std::size_t base = 0; base < vol.size(); ++base) {
      // `base` is a line start iff its coordinate along `axis` is zero.
      if ((base / stride) % len != 0) continue;
      for (std::size_t i = 0; i < len; ++i) line[i] = vol[base + i * stride];
      for (std::size_t i = 0; i < len; ++i) {
        double acc = 0;
        for (std::ptrdiff_t t = -radius; t <= radius; ++t) {
          auto j = static_cast<std::ptrdiff_t>(i) + t;
          j = std::clamp<std::ptrdiff_t>(j, 0, static_cast<std::ptrdiff_t>(len) - 1);
          acc += kernel[static_cast<std::size_t>(t + radius)] * line[static_cast<std::size_t>(j)];
        }
        out[i] = acc;
      }
      for (std::size_t i = 0; i < len; ++i) vol[base + i * stride] = out[i];
    }
  }
}

bool interior(const BinaryMask& m, std::size_t d, std::size_t h, std::size_t w) {
  const auto [nd, nh, nw] = m.shape;
  if (d == 0 || h == 0 || w == 0 || d + 1 >= nd || h + 1 >= nh || w + 1 >= nw) return false;
  return m.at(d - 1, h, w) && m.at(d + 1, h, w) && m.at(d, h - 1, w) && m.at(d, h + 1, w) &&
         m.at(d, h, w - 1) && m.at(d, h, w + 1);
}

}  // namespace

VolumeSample generate(std::uint64_t seed, const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(seed);
  VolumeSample s;
  s.shape = cfg.shape;
  s.rng_seed = seed;
  const std::size_t k = 1 + static_cast<std::size_t>(rng.below(cfg.max_instances));
  constexpr std::size_t kMargin = 2;
  constexpr int kMaxAttempts = 1000;
  BinaryMask occupied(cfg.shape);
  for (std::size_t inst = 0; inst < k; ++inst) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxAttempts && !placed; ++attempt) {
      Blob b{};
      const double r = rng.uniform(cfg.radius_min, cfg.radius_max);
      for (int a = 0; a < 3; ++a) {
        // Axis ratios in [0.7, 1.4], capped so the blob still fits the volume.
        const double extent = static_cast<double>(cfg.shape[static_cast<std::size_t>(a)]);
        b.radius[a] = std::min(r * rng.uniform(0.7, 1.4), extent / 2.0 - 1.0);
      }
      for (int a = 0; a < 3; ++a) {
        const double extent = static_cast<double>(cfg.shape[static_cast<std::size_t>(a)]);
        b.center[a] = rng.uniform(b.radius[a], extent - 1.0 - b.radius[a]);
        b.lo[a] = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(std::floor(b.center[a] - b.radius[a])));
        b.hi[a] = std::min(static_cast<std::ptrdiff_t>(extent) - 1,
                           static_cast<std::ptrdiff_t>(std::ceil(b.center[a] + b.radius[a])));
      }
      BinaryMask m = rasterize(b, cfg.shape);
      if (m.empty() || !clear_of(m, occupied, kMargin)) continue;
      for (std::size_t i = 0; i < m.size(); ++i) occupied.voxels[i] |= m.voxels[i];
      s.masks.push_back(std::move(m));
      placed = true;
    }
    if (!placed)
      throw GenerationError("could not place instance " + std::to_string(inst + 1) + " of " +
                            std::to_string(k) + " after 1000 attempts (config too crowded)");
  }
  const std::size_t n = cfg.shape[0] * cfg.shape[1] * cfg.shape[2];
  std::vector<double> vol(n);
  for (std::size_t i = 0; i < n; ++i)
    vol[i] = cfg.noise_sigma * rng.normal() + (occupied.voxels[i] ? cfg.intensity_offset : 0.0);
  blur(vol, cfg.shape, cfg.blur_sigma);
  s.intensities.resize(n);
  for (std::size_t i = 0; i < n; ++i) s.intensities[i] = static_cast<float>(std::clamp(vol[i], 0.0, 1.0));
  return s;
}

PointPrompt sample_prompt_in(const VolumeSample& s, std::size_t instance, std::uint64_t seed) {
  if (instance >= s.masks.size()) throw UsageError("instance index out of range");
  const BinaryMask& m = s.masks[instance];
  std::vector<std::size_t> inner, any;
  const auto [nd, nh, nw] = m.shape;
  for (std::size_t d = 0; d < nd; ++d)
    for (std::size_t h = 0; h < nh; ++h)
      for (std::size_t w = 0; w < nw; ++w) {
        if (!m.at(d, h, w)) continue;
        const std::size_t idx = m.index(d, h, w);
        any.push_back(idx);
        if (interior(m, d, h, w)) inner.push_back(idx);
      }
  if (any.empty()) throw UsageError("instance mask is empty");
  const auto& pool = inner.empty() ? any : inner;
  Rng rng(seed);
  const std::size_t idx = pool[rng.below(pool.size())];
  const std::size_t d = idx / (nh * nw);
  const std::size_t h = (idx / nw) % nh;
  const std::size_t w = idx % nw;
  return PointPrompt{Point3{static_cast<double>(d), static_cast<double>(h), static_cast<double>(w)}};
}

SampledPrompt sample_prompt(const VolumeSample& s, std::uint64_t seed) {
  if (s.masks.empty()) throw UsageError("sample has no instances to prompt");
  Rng rng(seed);
  const std::size_t instance = rng.below(s.masks.size());
  return SampledPrompt{sample_prompt_in(s, instance, mix_seed(seed, 0x5eed)), instance};
}

std::size_t instance_at(const VolumeSample& s, const Point3& p) {
  const auto rd = std::llround(p.d), rh = std::llround(p.h), rw = std::llround(p.w);
  if (rd < 0 || rh < 0 || rw < 0 || static_cast<std::size_t>(rd) >= s.shape[0] ||
      static_cast<std::size_t>(rh) >= s.shape[1] || static_cast<std::size_t>(rw) >= s.shape[2])
    return s.masks.size();
  for (std::size_t i = 0; i < s.masks.size(); ++i)
    if (s.masks[i].at(static_cast<std::size_t>(rd), static_cast<std::size_t>(rh), static_cast<std::size_t>(rw)))
      return i;
  return s.masks.size();
}

// ---- .vol container ----

namespace {

constexpr char kMagic[8] = {'M', 'I', 'Q', '3', 'D', 'V', 'O', 'L'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 8 + 4 * 5;

std::size_t bitmap_bytes(std::size_t voxels) { return (voxels + 7) / 8; }

template <typename U>
void put(std::string& buf, U v) {
  char raw[sizeof(U)];
  std::memcpy(raw, &v, sizeof(U));
  buf.append(raw, sizeof(U));
}

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}
  template <typename U>
  U get() {
    U v;
    std::memcpy(&v, take(sizeof(U)), sizeof(U));
    return v;
  }
  const char* take(std::size_t n) {
    if (data_.size() - pos_ < n) throw FormatError("truncated .vol file");
    const char* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::string data_;
  std::size_t pos_ = 0;
};

}  // namespace

std::size_t vol_file_size(const Extent3& shape, std::size_t n_instances) {
  const std::size_t n = shape[0] * shape[1] * shape[2];
  return kHeaderBytes + 4 * n + n_instances * bitmap_bytes(n) + 8;
}

void write_vol(const std::filesystem::path& path, const VolumeSample& s) {
  const std::size_t n = s.shape[0] * s.shape[1] * s.shape[2];
  if (s.intensities.size() != n) throw DimensionError("intensity buffer does not match shape");
  std::string buf;
  buf.reserve(vol_file_size(s.shape, s.masks.size()));
  buf.append(kMagic, 8);
  put<std::uint32_t>(buf, kVersion);
  for (auto e : s.shape) put<std::uint32_t>(buf, static_cast<std::uint32_t>(e));
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(s.masks.size()));
  for (float v : s.intensities) put<float>(buf, v);
  for (const auto& m : s.masks) {
    if (m.shape != s.shape) throw DimensionError("mask shape does not match volume");
    std::string bits(bitmap_bytes(n), '\0');
    for (std::size_t i = 0; i < n; ++i)
      if (m.voxels[i]) bits[i / 8] = static_cast<char>(bits[i / 8] | (1u << (i % 8)));
    buf += bits;
  }
  put<std::uint64_t>(buf, s.rng_seed);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw FormatError("failed writing " + path.string());
}

VolumeSample read_vol(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(std::move(data));
  if (std::memcmp(r.take(8), kMagic, 8) != 0) throw FormatError("bad .vol magic in " + path.string());
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) throw FormatError("unsupported .vol version " + std::to_string(version));
  VolumeSample s;
  for (auto& e : s.shape) {
    e = r.get<std::uint32_t>();
    if (e == 0) throw FormatError("zero extent in .vol header");
  }
  const std::size_t k = r.get<std::uint32_t>();
  const std::size_t n = s.shape[0] * s.shape[1] * s.shape[2];
  if (r.remaining() != vol_file_size(s.shape, k) - kHeaderBytes)
    throw FormatError(".vol payload size does not match header (truncated or trailing bytes)");
  s.intensities.resize(n);
  std::memcpy(s.intensities.data(), r.take(4 * n), 4 * n);
  for (std::size_t i = 0; i < k; ++i) {
    const char* bits = r.take(bitmap_bytes(n));
    BinaryMask m(s.shape);
    for (std::size_t v = 0; v < n; ++v)
      m.voxels[v] = static_cast<std::uint8_t>((static_cast<unsigned char>(bits[v / 8]) >> (v % 8)) & 1u);
    s.masks.push_back(std::move(m));
  }
  s.rng_seed = r.get<std::uint64_t>();
  return s;
}

void write_vol_with_sidecar(const std::filesystem::path& path, const VolumeSample& s,
                            const SynthConfig& cfg) {
  write_vol(path, s);
  nlohmann::json j = {
      {"rng_seed", s.rng_seed},
      {"n_instances", s.masks.size()},
      {"shape", {s.shape[0], s.shape[1], s.shape[2]}},
      {"spacing", {1, 1, 1}},
      {"config",
       {{"shape", {cfg.shape[0], cfg.shape[1], cfg.shape[2]}},
        {"max_instances", cfg.max_instances},
        {"radius_range", {cfg.radius_min, cfg.radius_max}},
        {"noise_sigma", cfg.noise_sigma},
        {"blur_sigma", cfg.blur_sigma},
        {"intensity_offset", cfg.intensity_offset}}}};
  auto sidecar = path;
  sidecar.replace_extension(".json");
  std::ofstream out(sidecar);
  if (!out) throw FormatError("cannot open " + sidecar.string() + " for writing");
  out << j.dump(2) << '\n';
}

}  // namespace miq3d
