#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "s2c/error.hpp"
#include "s2c/rng.hpp"
#include "s2c/synth.hpp"

namespace s2c::synth {

const char* to_string(NoiseLevel n) {
  switch (n) {
    case NoiseLevel::none: return "none";
    case NoiseLevel::low: return "low";
    case NoiseLevel::high: return "high";
  }
  return "?";
}

NoiseLevel parse_noise_level(const std::string& s) {
  if (s == "none") return NoiseLevel::none;
  if (s == "low") return NoiseLevel::low;
  if (s == "high") return NoiseLevel::high;
  fail(ErrorKind::usage, "unknown noise level '" + s + "' (expected none, low or high)");
}

double default_noise_radius_m(NoiseLevel n) {
  switch (n) {
    case NoiseLevel::none: return 0.0;
    case NoiseLevel::low: return 50.0;
    case NoiseLevel::high: return 100.0;
  }
  return 0.0;
}

ScenarioConfig ScenarioConfig::make(Scenario s, NoiseLevel n, std::uint64_t seed) {
  ScenarioConfig cfg;
  cfg.scenario = s;
  cfg.noise_level = n;
  cfg.noise_radius_m = default_noise_radius_m(n);
  cfg.seed = seed;
  return cfg;
}

std::string ScenarioConfig::tag() const { return std::string(to_string(scenario)) + "-" + to_string(noise_level); }

void ScenarioConfig::validate() const {
  require(n_points >= 20 && n_points <= 50, "n_points must be in [20, 50]");
  require(noise_radius_m >= 0.0 && std::isfinite(noise_radius_m), "noise_radius_m must be >= 0");
  if (scenario == Scenario::sm) {
    require(clusters >= 1, "sm scenario requires clusters >= 1");
    require(cluster_sigma_px > 0.0, "sm scenario requires cluster_sigma_px > 0");
  }
}

std::vector<int> allocate_proportional(const std::vector<double>& weights, int n) {
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<int> out(weights.size(), 0);
  if (total <= 0.0 || n <= 0) return out;
  std::vector<double> frac(weights.size());
  int given = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double quota = n * weights[i] / total;
    out[i] = static_cast<int>(std::floor(quota));
    frac[i] = quota - out[i];
    given += out[i];
  }
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (frac[a] != frac[b]) return frac[a] > frac[b];
    return weights[a] > weights[b];
  });
  for (int k = 0; k < n - given; ++k) out[order[static_cast<std::size_t>(k) % order.size()]] += 1;
  return out;
}

namespace {

std::vector<ContourPath> paths_of(const std::vector<Contour>& contours) {
  require(!contours.empty(), "point sampling needs at least one contour");
  std::vector<ContourPath> paths;
  double total = 0.0;
  for (const auto& c : contours) {
    paths.emplace_back(c);
    total += paths.back().length();
  }
  require(total > 0.0, "contours have zero sampleable arc length");
  return paths;
}

}  // namespace

PointSet sample_points_tdc(const std::vector<Contour>& contours, const ScenarioConfig& cfg) {
  require(cfg.scenario == Scenario::tdc, "sample_points_tdc called with a non-tdc scenario");
  require(cfg.n_points > 0, "n_points must be positive");
  const auto paths = paths_of(contours);
  std::vector<double> lengths;
  for (const auto& p : paths) lengths.push_back(p.length());
  const auto counts = allocate_proportional(lengths, cfg.n_points);

  PointSet ps{{}, Scenario::tdc, 0.0, cfg.seed};
  for (std::size_t l = 0; l < paths.size(); ++l) {
    if (counts[l] == 0) continue;
    auto rng = make_rng(cfg.seed, Stream::tdc_offset, l);
    const double spacing = paths[l].length() / counts[l];
    const double offset = uniform01(rng) * spacing;
    for (int j = 0; j < counts[l]; ++j) ps.points.push_back(paths[l].at(offset + j * spacing));
  }
  return ps;
}

PointSet sample_points_sm(const std::vector<Contour>& contours, const ScenarioConfig& cfg) {
  require(cfg.scenario == Scenario::sm, "sample_points_sm called with a non-sm scenario");
  require(cfg.clusters >= 1 && cfg.cluster_sigma_px > 0.0, "sm scenario requires clusters >= 1 and sigma > 0");
  const auto paths = paths_of(contours);

  struct Anchor {
    std::size_t loop;
    double s;
  };
  std::vector<Anchor> candidates;
  for (std::size_t l = 0; l < paths.size(); ++l)
    for (double s : paths[l].knots()) candidates.push_back({l, s});

  auto anchor_rng = make_rng(cfg.seed, Stream::sm_anchor);
  std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
  std::vector<Anchor> anchors;
  for (int c = 0; c < cfg.clusters; ++c) anchors.push_back(candidates[pick(anchor_rng)]);

  auto jitter_rng = make_rng(cfg.seed, Stream::sm_jitter);
  std::normal_distribution<double> jitter(0.0, cfg.cluster_sigma_px);
  PointSet ps{{}, Scenario::sm, 0.0, cfg.seed};
  for (int k = 0; k < cfg.n_points; ++k) {
    const auto& a = anchors[static_cast<std::size_t>(k % cfg.clusters)];
    ps.points.push_back(paths[a.loop].at(a.s + jitter(jitter_rng)));
  }
  return ps;
}

PointSet sample_points(const std::vector<Contour>& contours, const ScenarioConfig& cfg) {
  return cfg.scenario == Scenario::tdc ? sample_points_tdc(contours, cfg) : sample_points_sm(contours, cfg);
}

PointSet apply_gps_noise(const PointSet& ps, const ScenarioConfig& cfg, double meters_per_pixel) {
  require(meters_per_pixel > 0.0, "meters_per_pixel must be positive");
  PointSet out = ps;
  const double radius_m = cfg.noise_level == NoiseLevel::none ? 0.0 : cfg.noise_radius_m;
  out.noise_radius_m = radius_m;
  if (radius_m <= 0.0) return out;

  const double r_max = radius_m / meters_per_pixel;
  auto rng = make_rng(cfg.seed, Stream::gps_noise);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> normal(0.0, r_max / 2.0);
  for (auto& p : out.points) {
    double dx = 0.0;
    double dy = 0.0;
    if (cfg.noise_shape == NoiseShape::uniform) {
      const double theta = angle(rng);
      const double r = uniform01(rng) * r_max;
      dx = r * std::cos(theta);
      dy = r * std::sin(theta);
    } else {
      do {
        dx = normal(rng);
        dy = normal(rng);
      } while (std::hypot(dx, dy) > r_max);
    }
    p.x += dx;
    p.y += dy;
  }
  return out;
}

PointRaster rasterize_points(const PointSet& ps, int width, int height, int stamp) {
  require(stamp == 1 || stamp == 3, "point stamp must be 1 or 3");
  PointRaster out{BinaryMask(width, height), 0};
  const int r = stamp / 2;
  for (const auto& p : ps.points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || p.x < 0.0 || p.y < 0.0 || p.x >= width || p.y >= height) {
      ++out.dropped;
      continue;
    }
    const int col = static_cast<int>(std::floor(p.x));
    const int row = static_cast<int>(std::floor(p.y));
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx) {
        const int y = row + dy;
        const int x = col + dx;
        if (x >= 0 && y >= 0 && x < width && y < height) out.mask.set(y, x, 1);
      }
  }
  return out;
}

}  // namespace s2c::synth
