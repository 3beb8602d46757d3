#pragma once

// Dataset-level evaluation against fine truth, the five-row benchmark and
// the dispersion x noise ablation, and text/panel reports.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "s2c/dataset.hpp"
#include "s2c/metrics.hpp"
#include "s2c/model.hpp"

namespace s2c::eval {

struct EvalReport {
  double accuracy = 0.0;  // percent
  double miou = 0.0;      // percent
  ClassIou iou;
  Confusion confusion;
  std::string model;      // unet | refiner
  std::string labels;     // coarse | fine
  std::string scenario;   // point tag or "none"
  int tiles = 0;
};

/// Infers every tile of `split` and accumulates one global confusion against
/// the fine masks. points_tag empty: no point raster is passed.
EvalReport evaluate(const model::Model& m, const DatasetManifest& manifest, const std::string& split,
                    const std::string& points_tag, double threshold = 0.5, int jobs = 1);

/// Key=value block, one metric per line.
std::string format_report(const EvalReport& r);

struct PublishedRow {
  const char* label;
  double accuracy;
  double miou;
};

// Values as printed in the original publication.
inline constexpr PublishedRow kPublishedBenchmark[5] = {
    {"UNet / Coarse", 95.2, 53.8},          {"Refiner / Coarse", 95.6, 56.5},
    {"Refiner / Coarse+Points", 97.2, 61.8}, {"UNet / Fine", 97.0, 62.4},
    {"Refiner / Fine", 98.1, 64.9}};
inline constexpr PublishedRow kPublishedAblation[5] = {
    {"No Points", 95.6, 56.5}, {"Low / Low", 95.9, 59.6},  {"Low / High", 96.9, 61.0},
    {"High / Low", 97.2, 61.8}, {"High / High", 97.0, 60.9}};

/// One trainable configuration of the grid.
struct Cell {
  std::string label;
  model::ModelKind kind = model::ModelKind::refiner;
  model::LabelKind labels = model::LabelKind::coarse;
  std::string points_tag;  // empty: no points
};

std::vector<Cell> benchmark_cells(const DatasetManifest& manifest);
/// Rows: No Points, Low/Low (sm, low noise), Low/High, High/Low (tdc, low), High/High.
std::vector<Cell> ablation_cells(const DatasetManifest& manifest);

struct Table {
  std::string name;  // benchmark | ablation
  std::vector<std::string> rows;
  std::vector<std::uint64_t> seeds;
  std::map<std::pair<std::string, std::uint64_t>, EvalReport> cells;

  const EvalReport& at(const std::string& row, std::uint64_t seed) const;
  /// Median over seeds (mean of the middle two for an even count).
  double median_miou(const std::string& row) const;
  double median_accuracy(const std::string& row) const;
};

double median(std::vector<double> v);

/// Trains and evaluates grid cells; identical (cell, seed) pairs and shared
/// stage-1 networks are computed once.
class ExperimentRunner {
 public:
  ExperimentRunner(DatasetManifest manifest, model::TrainConfig base, int jobs = 1);

  const EvalReport& run(const Cell& cell, std::uint64_t seed);
  Table run_table(const std::string& name, const std::vector<Cell>& cells, const std::vector<std::uint64_t>& seeds);

  /// When set, every trained model is saved as <dir>/<slug>_seed<k>.ckpt.
  std::optional<std::filesystem::path> checkpoint_dir;
  std::function<void(const std::string&)> log;

  const DatasetManifest& manifest() const { return manifest_; }

 private:
  DatasetManifest manifest_;
  model::TrainConfig base_;
  int jobs_;
  model::StageCache cache_;
  std::mutex mu_;
  std::map<std::pair<std::string, std::uint64_t>, EvalReport> done_;
};

Table run_benchmark(ExperimentRunner& runner, const std::vector<std::uint64_t>& seeds);
Table run_ablation(ExperimentRunner& runner, const std::vector<std::uint64_t>& seeds);

/// File-name-safe form of a row label ("Refiner / Coarse+Points" -> "refiner_coarse_points").
std::string slug(const std::string& label);

/// Per-seed rows: table, row, seed, accuracy, miou, iou_water, iou_nonwater, tp, fp, tn, fn, tiles.
std::string table_tsv(const Table& t);
Table parse_table_tsv(const std::string& text, const std::string& where);
/// Median row per line: row, accuracy, miou.
std::string median_tsv(const Table& t);
/// One key=value block per cell and seed.
std::string table_summary(const Table& t);

/// Aligned text table, desk-scale medians next to the published values.
std::string format_comparison(const Table& t, const PublishedRow (&published)[5]);

inline constexpr const char* kReportBanner =
    "NOTE: different data - directional comparison only. Published values come from real imagery; "
    "desk-scale values from synthetic tiles.";

/// Five PGM panels for one tile: imagery composite, truth, UNet, Refiner, Refiner+Points.
inline constexpr int kPanelsPerTile = 5;
std::vector<std::filesystem::path> export_panels(const TileRecord& tile, const DatasetManifest& manifest,
                                                 const model::Model& unet, const model::Model& refiner,
                                                 const model::Model& refiner_points, const std::string& points_tag,
                                                 const std::filesystem::path& out_dir);

/// Imagery as an 8-bit grey composite: mean of the first three bands, stretched to [0,1].
ProbabilityMask imagery_composite(const MultispectralTile& tile);

}  // namespace s2c::eval
