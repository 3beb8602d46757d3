#pragma once

// Raster and point types shared by every stage of the pipeline, plus the S2C
// container format and PGM export.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace s2c {

enum class TileSource { synthetic, ingested };

struct TileMeta {
  std::string tile_id;
  double meters_per_pixel = 10.0;  // Sentinel-2 ground sampling
  std::optional<std::uint64_t> seed;
  TileSource source = TileSource::synthetic;
};

/// H x W x C reflectance raster, channel-major (all of channel 0, then 1, ...).
/// Values are finite and normalized to [0, 1].
class MultispectralTile {
 public:
  MultispectralTile() = default;
  MultispectralTile(int width, int height, int channels, std::vector<double> data, TileMeta meta = {});

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  const TileMeta& meta() const { return meta_; }
  TileMeta& meta() { return meta_; }

  double at(int c, int y, int x) const {
    return data_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x];
  }
  std::span<const double> data() const { return data_; }
  std::span<const double> channel(int c) const {
    const std::size_t plane = static_cast<std::size_t>(width_) * height_;
    return std::span<const double>(data_).subspan(c * plane, plane);
  }

  // Compares pixels, dimensions and meters_per_pixel; the rest of the meta
  // block is not stored in the container.
  friend bool operator==(const MultispectralTile& a, const MultispectralTile& b) {
    return a.width_ == b.width_ && a.height_ == b.height_ && a.channels_ == b.channels_ &&
           a.meta_.meters_per_pixel == b.meta_.meters_per_pixel && a.data_ == b.data_;
  }

 private:
  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
  TileMeta meta_;
};

/// Per-pixel water labels, 0 = non-water, 1 = water.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int width, int height);  // all zero
  BinaryMask(int width, int height, std::vector<std::uint8_t> data);

  int width() const { return width_; }
  int height() const { return height_; }
  std::uint8_t at(int y, int x) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  void set(int y, int x, std::uint8_t v) { data_[static_cast<std::size_t>(y) * width_ + x] = v ? 1 : 0; }
  std::span<const std::uint8_t> data() const { return data_; }
  std::size_t count() const;  // number of water pixels
  double water_fraction() const;

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> data_;
};

/// Per-pixel water probability in [0, 1].
class ProbabilityMask {
 public:
  ProbabilityMask() = default;
  ProbabilityMask(int width, int height, std::vector<double> data);

  int width() const { return width_; }
  int height() const { return height_; }
  double at(int y, int x) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  std::span<const double> data() const { return data_; }

  /// p >= threshold is water.
  BinaryMask threshold(double threshold = 0.5) const;

  friend bool operator==(const ProbabilityMask&, const ProbabilityMask&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<double> data_;
};

/// Fractional pixel position; pixel (col, row) covers [col, col+1) x [row, row+1).
struct GeoPoint {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const GeoPoint&, const GeoPoint&) = default;
};

enum class Scenario { tdc, sm };

struct PointSet {
  std::vector<GeoPoint> points;
  Scenario scenario = Scenario::tdc;
  double noise_radius_m = 0.0;
  std::uint64_t seed = 0;
  friend bool operator==(const PointSet&, const PointSet&) = default;
};

const char* to_string(Scenario s);
Scenario parse_scenario(const std::string& s);

using Raster = std::variant<MultispectralTile, BinaryMask, ProbabilityMask>;

enum class RasterKind : std::uint8_t { multispectral = 0, binary_mask = 1, probability_mask = 2 };

inline constexpr std::size_t kS2cHeaderBytes = 25;

/// Writes a raster in the S2C container format. Masks carry meters_per_pixel
/// from `meters_per_pixel`; tiles use their own meta.
void write_tile(const Raster& raster, const std::filesystem::path& path, double meters_per_pixel = 10.0);

/// Reads and validates an S2C file. `meters_per_pixel` receives the header
/// value when non-null.
Raster read_tile(const std::filesystem::path& path, double* meters_per_pixel = nullptr);

MultispectralTile read_multispectral(const std::filesystem::path& path);
BinaryMask read_mask(const std::filesystem::path& path);

/// Binary PGM (P5, maxval 255), byte = round-half-up(255 * p).
void export_image(const BinaryMask& mask, const std::filesystem::path& path);
void export_image(const ProbabilityMask& mask, const std::filesystem::path& path);
std::string encode_pgm(const ProbabilityMask& mask);
std::string encode_pgm(const BinaryMask& mask);

/// Clamps each raw value to [lo, hi] and maps it affinely to [0, 1].
MultispectralTile normalize_bands(int width, int height, int channels, std::span<const double> raw, double lo,
                                  double hi, TileMeta meta = {});

}  // namespace s2c
