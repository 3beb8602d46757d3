#include "s2c/raster.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "s2c/error.hpp"

namespace s2c {

namespace {

constexpr std::array<char, 4> kMagic = {'S', '2', 'C', '1'};

std::size_t checked_plane(int width, int height, int channels) {
  require(width > 0 && height > 0, "raster dimensions must be positive");
  require(channels >= 1, "raster needs at least one channel");
  return static_cast<std::size_t>(width) * height * channels;
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

double get_f64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(v);
}

void write_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot open for writing: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::io, "write failed: " + path.string());
}

std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open for reading: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

std::string header(RasterKind kind, std::uint32_t channels, int width, int height, double mpp) {
  std::string out(kMagic.begin(), kMagic.end());
  out.push_back(static_cast<char>(kind));
  put_u32(out, channels);
  put_u32(out, static_cast<std::uint32_t>(width));
  put_u32(out, static_cast<std::uint32_t>(height));
  put_f64(out, mpp);
  return out;
}

std::uint8_t pgm_byte(double p) {
  // round half up
  return static_cast<std::uint8_t>(std::floor(std::clamp(p, 0.0, 1.0) * 255.0 + 0.5));
}

}  // namespace

MultispectralTile::MultispectralTile(int width, int height, int channels, std::vector<double> data, TileMeta meta)
    : width_(width), height_(height), channels_(channels), data_(std::move(data)), meta_(std::move(meta)) {
  require(data_.size() == checked_plane(width, height, channels), "tile data length != width*height*channels");
  require(meta_.meters_per_pixel > 0.0, "meters_per_pixel must be positive");
  for (double v : data_) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) fail(ErrorKind::format, "tile value outside [0,1] or non-finite");
  }
}

BinaryMask::BinaryMask(int width, int height)
    : width_(width), height_(height), data_(checked_plane(width, height, 1), 0) {}

BinaryMask::BinaryMask(int width, int height, std::vector<std::uint8_t> data)
    : width_(width), height_(height), data_(std::move(data)) {
  require(data_.size() == checked_plane(width, height, 1), "mask data length != width*height");
  for (auto v : data_) {
    if (v > 1) fail(ErrorKind::format, "mask value outside {0,1}");
  }
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), std::uint8_t{1}));
}

double BinaryMask::water_fraction() const {
  return data_.empty() ? 0.0 : static_cast<double>(count()) / static_cast<double>(data_.size());
}

ProbabilityMask::ProbabilityMask(int width, int height, std::vector<double> data)
    : width_(width), height_(height), data_(std::move(data)) {
  require(data_.size() == checked_plane(width, height, 1), "probability data length != width*height");
  for (double v : data_) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) fail(ErrorKind::format, "probability outside [0,1] or non-finite");
  }
}

BinaryMask ProbabilityMask::threshold(double threshold) const {
  std::vector<std::uint8_t> out(data_.size());
  std::transform(data_.begin(), data_.end(), out.begin(), [&](double p) { return p >= threshold ? 1 : 0; });
  return BinaryMask(width_, height_, std::move(out));
}

const char* to_string(Scenario s) { return s == Scenario::tdc ? "tdc" : "sm"; }

Scenario parse_scenario(const std::string& s) {
  if (s == "tdc") return Scenario::tdc;
  if (s == "sm") return Scenario::sm;
  fail(ErrorKind::usage, "unknown scenario '" + s + "' (expected tdc or sm)");
}

void write_tile(const Raster& raster, const std::filesystem::path& path, double meters_per_pixel) {
  std::string bytes;
  std::visit(
      [&](const auto& r) {
        using T = std::decay_t<decltype(r)>;
        if (r.width() <= 0 || r.height() <= 0) fail(ErrorKind::usage, "cannot write an empty raster");
        if constexpr (std::is_same_v<T, MultispectralTile>) {
          bytes = header(RasterKind::multispectral, static_cast<std::uint32_t>(r.channels()), r.width(), r.height(),
                         r.meta().meters_per_pixel);
          for (double v : r.data()) put_f64(bytes, v);
        } else if constexpr (std::is_same_v<T, BinaryMask>) {
          bytes = header(RasterKind::binary_mask, 1, r.width(), r.height(), meters_per_pixel);
          bytes.append(reinterpret_cast<const char*>(r.data().data()), r.data().size());
        } else {
          bytes = header(RasterKind::probability_mask, 1, r.width(), r.height(), meters_per_pixel);
          for (double v : r.data()) put_f64(bytes, v);
        }
      },
      raster);
  write_bytes(path, bytes);
}

Raster read_tile(const std::filesystem::path& path, double* meters_per_pixel) {
  const std::string bytes = read_bytes(path);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::string where = " in " + path.string();
  if (bytes.size() < 4 || std::memcmp(p, kMagic.data(), 4) != 0) fail(ErrorKind::format, "bad magic" + where);
  if (bytes.size() < kS2cHeaderBytes) fail(ErrorKind::format, "truncated header" + where);

  const std::uint8_t kind = p[4];
  const std::uint32_t channels = get_u32(p + 5);
  const std::uint32_t width = get_u32(p + 9);
  const std::uint32_t height = get_u32(p + 13);
  const double mpp = get_f64(p + 17);
  constexpr std::uint32_t kMaxSide = std::numeric_limits<std::int32_t>::max();
  if (width == 0 || height == 0 || channels == 0 || width > kMaxSide || height > kMaxSide)
    fail(ErrorKind::format, "invalid dimensions" + where);
  if (!(mpp > 0.0) || !std::isfinite(mpp)) fail(ErrorKind::format, "invalid meters_per_pixel" + where);
  if (kind > 2) fail(ErrorKind::format, "unknown raster kind" + where);
  if (kind != 0 && channels != 1) fail(ErrorKind::format, "mask must have one channel" + where);

  const std::size_t count = static_cast<std::size_t>(width) * height * channels;
  const std::size_t elem = kind == 1 ? 1 : 8;
  if (bytes.size() - kS2cHeaderBytes < count * elem) fail(ErrorKind::format, "truncated payload" + where);
  if (bytes.size() - kS2cHeaderBytes > count * elem) fail(ErrorKind::format, "trailing bytes" + where);
  if (meters_per_pixel) *meters_per_pixel = mpp;

  const unsigned char* payload = p + kS2cHeaderBytes;
  const int w = static_cast<int>(width);
  const int h = static_cast<int>(height);
  try {
    if (kind == 1) return BinaryMask(w, h, std::vector<std::uint8_t>(payload, payload + count));
    std::vector<double> data(count);
    for (std::size_t i = 0; i < count; ++i) data[i] = get_f64(payload + 8 * i);
    if (kind == 2) return ProbabilityMask(w, h, std::move(data));
    TileMeta meta;
    meta.meters_per_pixel = mpp;
    meta.tile_id = path.stem().string();
    return MultispectralTile(w, h, static_cast<int>(channels), std::move(data), meta);
  } catch (const Error& e) {
    fail(ErrorKind::format, e.what() + where);
  }
}

MultispectralTile read_multispectral(const std::filesystem::path& path) {
  auto r = read_tile(path);
  if (auto* t = std::get_if<MultispectralTile>(&r)) return std::move(*t);
  fail(ErrorKind::format, "expected a multispectral tile: " + path.string());
}

BinaryMask read_mask(const std::filesystem::path& path) {
  auto r = read_tile(path);
  if (auto* m = std::get_if<BinaryMask>(&r)) return std::move(*m);
  fail(ErrorKind::format, "expected a binary mask: " + path.string());
}

std::string encode_pgm(const ProbabilityMask& mask) {
  std::string out = "P5 " + std::to_string(mask.width()) + " " + std::to_string(mask.height()) + " 255\n";
  for (double v : mask.data()) out.push_back(static_cast<char>(pgm_byte(v)));
  return out;
}

std::string encode_pgm(const BinaryMask& mask) {
  std::string out = "P5 " + std::to_string(mask.width()) + " " + std::to_string(mask.height()) + " 255\n";
  for (auto v : mask.data()) out.push_back(static_cast<char>(v ? 255 : 0));
  return out;
}

void export_image(const BinaryMask& mask, const std::filesystem::path& path) { write_bytes(path, encode_pgm(mask)); }

void export_image(const ProbabilityMask& mask, const std::filesystem::path& path) {
  write_bytes(path, encode_pgm(mask));
}

MultispectralTile normalize_bands(int width, int height, int channels, std::span<const double> raw, double lo,
                                  double hi, TileMeta meta) {
  require(hi > lo, "normalize_bands requires hi > lo");
  std::vector<double> out(raw.size());
  const double span = hi - lo;
  std::transform(raw.begin(), raw.end(), out.begin(), [&](double v) {
    if (std::isnan(v)) fail(ErrorKind::numeric, "NaN reflectance");
    return (std::clamp(v, lo, hi) - lo) / span;
  });
  return MultispectralTile(width, height, channels, std::move(out), std::move(meta));
}

}  // namespace s2c
