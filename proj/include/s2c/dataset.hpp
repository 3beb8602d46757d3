#pragma once

// Dataset manifests: one tab-separated record per tile, paths relative to the
// manifest's directory, '#' lines carry dataset-level parameters.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "s2c/synth.hpp"

namespace s2c {

struct TileRecord {
  std::string tile_id;
  std::string imagery;
  std::string fine;
  std::string coarse;
  std::vector<std::pair<std::string, std::string>> point_rasters;  // tag -> path
  std::uint64_t seed = 0;
  int n_points = 0;

  std::optional<std::string> points_for(const std::string& tag) const;
};

struct ScenarioInfo {
  std::string tag;
  synth::ScenarioConfig config;
};

struct DatasetManifest {
  std::filesystem::path root;  // directory the relative paths resolve against
  std::vector<TileRecord> tiles;
  int test_tiles = 0;
  std::vector<ScenarioInfo> scenarios;
  std::vector<std::string> comments;  // extra header lines, written verbatim

  std::vector<const TileRecord*> split(const std::string& name) const;  // train | test | all
  std::filesystem::path resolve(const std::string& rel) const { return root / rel; }
  /// Resolves a tag or unique tag prefix ("tdc" -> "tdc-low" when unambiguous).
  std::string resolve_tag(const std::string& tag_or_prefix) const;

  void write(const std::filesystem::path& path) const;
  static DatasetManifest read(const std::filesystem::path& path);
};

/// Generates imagery, fine and coarse masks and one point raster per scenario
/// for every tile, and writes out_dir/manifest.tsv.
DatasetManifest gen_dataset(const synth::DatasetOptions& options, const std::filesystem::path& out_dir);

}  // namespace s2c
