#pragma once

// Synthetic training data: coarse labels, crowdsourced boundary points and
// procedural flood scenes.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "s2c/raster.hpp"

namespace s2c::synth {

/// Separable Gaussian blur, kernel radius ceil(3 sigma), reflect padding.
ProbabilityMask gaussian_blur(const BinaryMask& mask, double sigma);

/// Normalized 1-D kernel of length 2*ceil(3 sigma)+1.
std::vector<double> gaussian_kernel(double sigma);

/// Blur then threshold (p >= threshold is water).
BinaryMask coarsen_mask(const BinaryMask& fine, double sigma, double threshold = 0.5);

/// One closed iso-0.5 boundary loop. Edge i runs from vertices[i] to
/// vertices[(i+1) % n]. Edges touching the virtual non-water ring outside the
/// tile close the loop but are not real flood edges; they are excluded from
/// point sampling.
struct Contour {
  std::vector<GeoPoint> vertices;
  std::vector<std::uint8_t> sampleable;  // per edge
  double length = 0.0;                   // full closed arc length
  double sampleable_length = 0.0;

  /// Closed polygon with every edge sampleable.
  static Contour from_polygon(std::vector<GeoPoint> vertices);
};

/// Marching squares at iso-level 0.5. Diagonal (saddle) water pixels are not
/// connected. Loops are returned longest first.
std::vector<Contour> extract_contours(const BinaryMask& fine);

/// Arc-length parameterization over the sampleable edges of one loop.
class ContourPath {
 public:
  explicit ContourPath(const Contour& contour);
  double length() const { return total_; }
  GeoPoint at(double s) const;  // s wraps modulo length()
  /// Arc position of each sampleable edge's start vertex.
  const std::vector<double>& knots() const { return starts_; }

 private:
  std::vector<GeoPoint> a_, b_;
  std::vector<double> starts_;
  double total_ = 0.0;
};

enum class NoiseLevel { none, low, high };
enum class NoiseShape { uniform, gaussian };

const char* to_string(NoiseLevel n);
NoiseLevel parse_noise_level(const std::string& s);
double default_noise_radius_m(NoiseLevel n);

struct ScenarioConfig {
  Scenario scenario = Scenario::tdc;
  int n_points = 35;
  NoiseLevel noise_level = NoiseLevel::low;
  double noise_radius_m = 50.0;
  NoiseShape noise_shape = NoiseShape::uniform;
  int clusters = 3;               // sm only
  double cluster_sigma_px = 5.0;  // sm only
  std::uint64_t seed = 0;

  static ScenarioConfig make(Scenario s, NoiseLevel n, std::uint64_t seed = 0);
  /// "<scenario>-<noise>", e.g. tdc-low.
  std::string tag() const;
  void validate() const;
};

/// Largest-remainder split of n over weights; ties go to the larger weight.
std::vector<int> allocate_proportional(const std::vector<double>& weights, int n);

/// Trained-collector points: equal arc-length spacing per loop.
PointSet sample_points_tdc(const std::vector<Contour>& contours, const ScenarioConfig& cfg);

/// Social-media points: clustered around random anchors, on the contour.
PointSet sample_points_sm(const std::vector<Contour>& contours, const ScenarioConfig& cfg);

PointSet sample_points(const std::vector<Contour>& contours, const ScenarioConfig& cfg);

/// Uniform angle, radius uniform in [0, noise_radius_m / meters_per_pixel].
/// The gaussian shape uses sigma = r_max / 2 truncated at r_max.
PointSet apply_gps_noise(const PointSet& ps, const ScenarioConfig& cfg, double meters_per_pixel);

struct PointRaster {
  BinaryMask mask;
  std::size_t dropped = 0;  // points outside the tile
};

/// Stamps floor(x), floor(y) for every in-bounds point. stamp = 3 dilates
/// each point to a 3x3 block.
PointRaster rasterize_points(const PointSet& ps, int width, int height, int stamp = 1);

struct SceneParams {
  int width = 64;
  int height = 64;
  int channels = 4;
  double water_coverage_target = 0.3;
  int blob_count = 3;
  double spectral_contrast = 0.5;
  double noise_sigma = 0.08;
  double texture_amplitude = 1.0;  // land confuser strength, fraction of the water offset
  int confuser_count = 3;
  double confuser_radius = 8.0;  // px
  std::uint64_t seed = 0;

  void validate() const;
};

struct Scene {
  MultispectralTile imagery;
  BinaryMask fine;
};

/// Land and water mean reflectance for channel c before contrast scaling.
std::pair<double, double> channel_means(int c);

Scene gen_scene(const SceneParams& params);

struct DatasetOptions {
  int n_tiles = 10;
  int test_tiles = 0;  // the last test_tiles tiles form the test split
  SceneParams scene;   // scene.seed is the base seed
  std::vector<ScenarioConfig> scenarios;
  double sigma = 8.0;
  double threshold = 0.5;
  int stamp = 1;
  int min_points = 20;
  int max_points = 50;
  int jobs = 1;
};

/// Default four-cell scenario grid {sm, tdc} x {low, high}.
std::vector<ScenarioConfig> default_scenarios();

}  // namespace s2c::synth
