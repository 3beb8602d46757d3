#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "s2c/error.hpp"
#include "s2c/rng.hpp"
#include "s2c/synth.hpp"

namespace s2c::synth {

namespace {

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

// Lattice value noise in [0,1] with smoothstep-bilinear interpolation.
std::vector<double> value_noise(int w, int h, double cell, Rng& rng) {
  const int gx = static_cast<int>(std::ceil(w / cell)) + 2;
  const int gy = static_cast<int>(std::ceil(h / cell)) + 2;
  std::vector<double> lattice(static_cast<std::size_t>(gx) * gy);
  for (double& v : lattice) v = uniform01(rng);
  const double ox = uniform01(rng) * cell;
  const double oy = uniform01(rng) * cell;
  std::vector<double> out(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y) {
    const double fy = (y + oy) / cell;
    const int iy = static_cast<int>(fy);
    const double ty = smoothstep(fy - iy);
    for (int x = 0; x < w; ++x) {
      const double fx = (x + ox) / cell;
      const int ix = static_cast<int>(fx);
      const double tx = smoothstep(fx - ix);
      auto L = [&](int i, int j) { return lattice[static_cast<std::size_t>(j) * gx + i]; };
      const double top = L(ix, iy) + tx * (L(ix + 1, iy) - L(ix, iy));
      const double bot = L(ix, iy + 1) + tx * (L(ix + 1, iy + 1) - L(ix, iy + 1));
      out[static_cast<std::size_t>(y) * w + x] = top + ty * (bot - top);
    }
  }
  return out;
}

BinaryMask water_mask(const SceneParams& p, Rng& rng) {
  const int w = p.width;
  const int h = p.height;
  const std::size_t n = static_cast<std::size_t>(w) * h;
  std::vector<double> field(n, 0.0);

  // Large smooth water bodies.
  const double base_r = std::sqrt(p.water_coverage_target * w * h / (p.blob_count * std::numbers::pi));
  for (int b = 0; b < p.blob_count; ++b) {
    const double cx = (uniform01(rng) * 1.2 - 0.1) * w;
    const double cy = (uniform01(rng) * 1.2 - 0.1) * h;
    const double r = base_r * (0.6 + 0.7 * uniform01(rng));
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double d2 = (x + 0.5 - cx) * (x + 0.5 - cx) + (y + 0.5 - cy) * (y + 0.5 - cy);
        field[static_cast<std::size_t>(y) * w + x] += std::exp(-0.5 * d2 / (r * r));
      }
  }
  const auto coarse_noise = value_noise(w, h, 16.0, rng);
  const auto fine_noise = value_noise(w, h, 6.0, rng);
  for (std::size_t i = 0; i < n; ++i) field[i] += 0.45 * (coarse_noise[i] - 0.5) + 0.2 * (fine_noise[i] - 0.5);

  // Threshold at the quantile that yields the coverage target.
  std::vector<double> sorted = field;
  const auto k = static_cast<std::size_t>(std::clamp((1.0 - p.water_coverage_target) * n, 0.0, n - 1.0));
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k), sorted.end());
  const double level = sorted[k];
  std::vector<std::uint8_t> data(n);
  for (std::size_t i = 0; i < n; ++i) data[i] = field[i] >= level ? 1 : 0;
  BinaryMask mask(w, h, std::move(data));

  // Small ponds and an occasional narrow channel: detail that coarse labels lose.
  const int ponds = static_cast<int>(uniform01(rng) * (p.blob_count + 2));
  for (int i = 0; i < ponds; ++i) {
    const double cx = uniform01(rng) * w;
    const double cy = uniform01(rng) * h;
    const double r = 1.0 + 1.5 * uniform01(rng);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (std::hypot(x + 0.5 - cx, y + 0.5 - cy) <= r) mask.set(y, x, 1);
  }
  if (uniform01(rng) < 0.5) {
    const bool vertical = uniform01(rng) < 0.5;
    const double pos = (0.2 + 0.6 * uniform01(rng)) * (vertical ? w : h);
    const double amp = 3.0 + 5.0 * uniform01(rng);
    const double period = 10.0 + 15.0 * uniform01(rng);
    const double phase = uniform01(rng) * 2.0 * std::numbers::pi;
    const double half_width = 0.7 + 0.5 * uniform01(rng);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double along = vertical ? y + 0.5 : x + 0.5;
        const double across = vertical ? x + 0.5 : y + 0.5;
        if (std::abs(across - (pos + amp * std::sin(along / period + phase))) <= half_width) mask.set(y, x, 1);
      }
  }
  return mask;
}

}  // namespace

void SceneParams::validate() const {
  require(width > 0 && height > 0 && channels >= 1, "scene dimensions must be positive");
  require(water_coverage_target > 0.0 && water_coverage_target < 1.0, "water_coverage_target must be in (0,1)");
  require(blob_count >= 1, "blob_count must be >= 1");
  require(spectral_contrast > 0.0 && spectral_contrast <= 1.0, "spectral_contrast must be in (0,1]");
  require(noise_sigma >= 0.0, "noise_sigma must be >= 0");
  require(texture_amplitude >= 0.0 && texture_amplitude <= 1.0, "texture_amplitude must be in [0,1]");
  require(confuser_count >= 0 && confuser_radius > 0.0, "confuser patches need count >= 0 and radius > 0");
}

std::pair<double, double> channel_means(int c) {
  // blue, green, red, near-infrared: water is dark in red and NIR
  static constexpr std::array<std::pair<double, double>, 4> kMeans = {
      {{0.30, 0.36}, {0.34, 0.30}, {0.36, 0.22}, {0.56, 0.14}}};
  const auto [land, water] = kMeans[static_cast<std::size_t>(c % 4)];
  const double shift = 0.02 * (c / 4);
  return {land + shift, water + shift};
}

Scene gen_scene(const SceneParams& p) {
  p.validate();
  const int w = p.width;
  const int h = p.height;
  const std::size_t n = static_cast<std::size_t>(w) * h;

  BinaryMask mask;
  bool ok = false;
  for (int attempt = 0; attempt < 20 && !ok; ++attempt) {
    auto rng = make_rng(p.seed, Stream::scene_mask, static_cast<std::uint64_t>(attempt));
    mask = water_mask(p, rng);
    const double frac = mask.water_fraction();
    ok = std::abs(frac - p.water_coverage_target) <= 0.15 && frac > 0.0 && frac < 1.0;
  }
  if (!ok) fail(ErrorKind::usage, "gen_scene: coverage target unreachable after 20 attempts");

  auto rng = make_rng(p.seed, Stream::scene_imagery);
  // Wet-soil patches: compact land areas drawn toward the water signature.
  std::vector<double> wet(n, 0.0);
  const int patches = p.confuser_count;
  const auto wobble = value_noise(w, h, 8.0, rng);
  for (int b = 0; b < patches; ++b) {
    const double cx = uniform01(rng) * w;
    const double cy = uniform01(rng) * h;
    const double r = p.confuser_radius * (0.6 + 0.8 * uniform01(rng));
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        const double d = std::hypot(x + 0.5 - cx, y + 0.5 - cy) / r + 0.6 * (wobble[i] - 0.5);
        if (d < 1.0) wet[i] = 1.0;
      }
  }
  // Centre the wet term over land so a full patch sits exactly on the water
  // signature; plain land moves the other way by the same total.
  double wet_sum = 0.0;
  std::size_t land_px = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (!mask.data()[i]) {
      wet_sum += wet[i];
      ++land_px;
    }
  const double wet_mean = land_px ? wet_sum / static_cast<double>(land_px) : 0.0;
  const double wet_scale = wet_mean < 1.0 ? 1.0 / (1.0 - wet_mean) : 0.0;

  std::vector<double> data(n * static_cast<std::size_t>(p.channels));
  std::normal_distribution<double> pixel_noise(0.0, 1.0);
  std::vector<double> texture(n);
  for (int c = 0; c < p.channels; ++c) {
    const auto [land, water] = channel_means(c);
    const double offset = (water - land) * p.spectral_contrast;
    const auto grain = value_noise(w, h, 5.0, rng);
    for (std::size_t i = 0; i < n; ++i) {
      const bool is_water = mask.data()[i] != 0;
      texture[i] = 0.04 * (grain[i] - 0.5) +
                   (is_water ? 0.0 : p.texture_amplitude * offset * (wet[i] - wet_mean) * wet_scale);
    }
    // Texture is mean-neutral within each class so class means stay exact.
    double sum[2] = {0.0, 0.0};
    std::size_t cnt[2] = {0, 0};
    for (std::size_t i = 0; i < n; ++i) {
      sum[mask.data()[i]] += texture[i];
      ++cnt[mask.data()[i]];
    }
    const double mean[2] = {cnt[0] ? sum[0] / cnt[0] : 0.0, cnt[1] ? sum[1] / cnt[1] : 0.0};
    double* plane = data.data() + static_cast<std::size_t>(c) * n;
    for (std::size_t i = 0; i < n; ++i) {
      const int cls = mask.data()[i];
      const double noise = p.noise_sigma > 0.0 ? p.noise_sigma * pixel_noise(rng) : 0.0;
      plane[i] = std::clamp(land + (cls ? offset : 0.0) + texture[i] - mean[cls] + noise, 0.0, 1.0);
    }
  }
  TileMeta meta;
  meta.seed = p.seed;
  meta.source = TileSource::synthetic;
  return {MultispectralTile(w, h, p.channels, std::move(data), std::move(meta)), std::move(mask)};
}

}  // namespace s2c::synth
