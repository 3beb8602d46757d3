#include "s2c/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "s2c/error.hpp"
#include "s2c/util.hpp"

namespace s2c::eval {

EvalReport evaluate(const model::Model& m, const DatasetManifest& manifest, const std::string& split,
                    const std::string& points_tag, double threshold, int jobs) {
  const auto recs = manifest.split(split);
  require(!recs.empty(), "split '" + split + "' has no tiles");
  const std::string tag = points_tag.empty() ? "" : manifest.resolve_tag(points_tag);
  std::vector<Confusion> per(recs.size());
  parallel_for(static_cast<int>(recs.size()), jobs, [&](int i) {
    const auto* r = recs[static_cast<std::size_t>(i)];
    const auto tile = read_multispectral(manifest.resolve(r->imagery));
    const auto fine = read_mask(manifest.resolve(r->fine));
    std::optional<BinaryMask> pts;
    if (!tag.empty()) {
      const auto path = r->points_for(tag);
      if (!path) fail(ErrorKind::usage, "tile " + r->tile_id + " has no point raster for scenario " + tag);
      pts = read_mask(manifest.resolve(*path));
    }
    const auto pred = m.infer(tile, pts ? &*pts : nullptr, threshold);
    per[static_cast<std::size_t>(i)] = confusion(pred.mask, fine);
  });
  EvalReport r;
  for (const auto& c : per) r.confusion += c;
  r.accuracy = pixel_accuracy(r.confusion);
  r.miou = mean_iou(r.confusion);
  r.iou = class_iou(r.confusion);
  r.model = model::to_string(m.kind());
  r.labels = model::to_string(m.config.labels);
  r.scenario = tag.empty() ? "none" : tag;
  r.tiles = static_cast<int>(recs.size());
  return r;
}

std::string format_report(const EvalReport& r) {
  std::ostringstream s;
  s << "model=" << r.model << "\n"
    << "labels=" << r.labels << "\n"
    << "points=" << r.scenario << "\n"
    << "tiles=" << r.tiles << "\n"
    << "aggregation=global\n"
    << "truth=fine\n"
    << "acc=" << format_double(r.accuracy) << "\n"
    << "miou=" << format_double(r.miou) << "\n"
    << "iou_water=" << (r.iou.water_present ? format_double(r.iou.water) : "excluded") << "\n"
    << "iou_nonwater=" << (r.iou.nonwater_present ? format_double(r.iou.nonwater) : "excluded") << "\n"
    << "tp=" << r.confusion.tp << "\nfp=" << r.confusion.fp << "\ntn=" << r.confusion.tn << "\nfn=" << r.confusion.fn
    << "\n";
  return s.str();
}

// --- grids ---------------------------------------------------------------------

std::vector<Cell> benchmark_cells(const DatasetManifest& manifest) {
  using model::LabelKind;
  using model::ModelKind;
  return {{kPublishedBenchmark[0].label, ModelKind::unet, LabelKind::coarse, ""},
          {kPublishedBenchmark[1].label, ModelKind::refiner, LabelKind::coarse, ""},
          {kPublishedBenchmark[2].label, ModelKind::refiner, LabelKind::coarse, manifest.resolve_tag("tdc-low")},
          {kPublishedBenchmark[3].label, ModelKind::unet, LabelKind::fine, ""},
          {kPublishedBenchmark[4].label, ModelKind::refiner, LabelKind::fine, ""}};
}

std::vector<Cell> ablation_cells(const DatasetManifest& manifest) {
  using model::LabelKind;
  using model::ModelKind;
  // dispersion: sm = low, tdc = high
  return {{kPublishedAblation[0].label, ModelKind::refiner, LabelKind::coarse, ""},
          {kPublishedAblation[1].label, ModelKind::refiner, LabelKind::coarse, manifest.resolve_tag("sm-low")},
          {kPublishedAblation[2].label, ModelKind::refiner, LabelKind::coarse, manifest.resolve_tag("sm-high")},
          {kPublishedAblation[3].label, ModelKind::refiner, LabelKind::coarse, manifest.resolve_tag("tdc-low")},
          {kPublishedAblation[4].label, ModelKind::refiner, LabelKind::coarse, manifest.resolve_tag("tdc-high")}};
}

double median(std::vector<double> v) {
  require(!v.empty(), "median of nothing");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

const EvalReport& Table::at(const std::string& row, std::uint64_t seed) const {
  auto it = cells.find({row, seed});
  if (it == cells.end()) fail(ErrorKind::usage, "table " + name + " has no cell " + row + " seed " + std::to_string(seed));
  return it->second;
}

double Table::median_miou(const std::string& row) const {
  std::vector<double> v;
  for (auto s : seeds) v.push_back(at(row, s).miou);
  return median(v);
}

double Table::median_accuracy(const std::string& row) const {
  std::vector<double> v;
  for (auto s : seeds) v.push_back(at(row, s).accuracy);
  return median(v);
}

std::string slug(const std::string& label) {
  std::string out;
  for (char c : label) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else if (!out.empty() && out.back() != '_') {
      out.push_back('_');
    }
  }
  while (!out.empty() && out.back() == '_') out.pop_back();
  return out;
}

// --- runner --------------------------------------------------------------------

ExperimentRunner::ExperimentRunner(DatasetManifest manifest, model::TrainConfig base, int jobs)
    : manifest_(std::move(manifest)), base_(std::move(base)), jobs_(std::max(1, jobs)) {}

namespace {

std::string cell_key(const Cell& c) {
  return std::string(model::to_string(c.kind)) + "|" + model::to_string(c.labels) + "|" + c.points_tag;
}

}  // namespace

const EvalReport& ExperimentRunner::run(const Cell& cell, std::uint64_t seed) {
  const auto key = std::pair{cell_key(cell), seed};
  {
    std::lock_guard lock(mu_);
    if (auto it = done_.find(key); it != done_.end()) return it->second;
  }
  auto cfg = base_;
  cfg.seed = seed;
  cfg.labels = cell.labels;
  cfg.use_points = !cell.points_tag.empty();
  cfg.points_tag = cell.points_tag;
  model::TrainHooks hooks;
  hooks.cache = &cache_;
  if (log) log("train " + cell.label + " seed=" + std::to_string(seed));
  const auto m = model::train(manifest_, cell.kind, cfg, hooks);
  if (checkpoint_dir) m.save(*checkpoint_dir / (slug(cell.label) + "_seed" + std::to_string(seed) + ".ckpt"));
  auto report = evaluate(m, manifest_, "test", cell.points_tag, 0.5, 1);
  if (log) log("  " + cell.label + " seed=" + std::to_string(seed) + " acc=" + format_double(report.accuracy) +
               " miou=" + format_double(report.miou));
  std::lock_guard lock(mu_);
  return done_.emplace(key, std::move(report)).first->second;
}

Table ExperimentRunner::run_table(const std::string& name, const std::vector<Cell>& cells,
                                  const std::vector<std::uint64_t>& seeds) {
  require(!seeds.empty(), "at least one seed is required");
  Table t;
  t.name = name;
  t.seeds = seeds;
  for (const auto& c : cells) t.rows.push_back(c.label);
  std::vector<std::pair<const Cell*, std::uint64_t>> work;
  for (auto s : seeds)
    for (const auto& c : cells) work.emplace_back(&c, s);
  // Stage-1 networks first so parallel cells find them cached.
  std::vector<std::pair<const Cell*, std::uint64_t>> first, rest;
  for (const auto& w : work) (w.first->kind == model::ModelKind::unet ? first : rest).push_back(w);
  for (auto* batch : {&first, &rest})
    parallel_for(static_cast<int>(batch->size()), jobs_, [&](int i) {
      const auto [c, s] = (*batch)[static_cast<std::size_t>(i)];
      run(*c, s);
    });
  for (const auto& [c, s] : work) t.cells.emplace(std::pair{c->label, s}, run(*c, s));
  return t;
}

Table run_benchmark(ExperimentRunner& runner, const std::vector<std::uint64_t>& seeds) {
  return runner.run_table("benchmark", benchmark_cells(runner.manifest()), seeds);
}

Table run_ablation(ExperimentRunner& runner, const std::vector<std::uint64_t>& seeds) {
  return runner.run_table("ablation", ablation_cells(runner.manifest()), seeds);
}

// --- tables ----------------------------------------------------------------------

namespace {

constexpr const char* kTsvHeader =
    "table\trow\tseed\taccuracy\tmiou\tiou_water\tiou_nonwater\ttp\tfp\ttn\tfn\ttiles\tmodel\tlabels\tpoints";

}  // namespace

std::string table_tsv(const Table& t) {
  std::ostringstream s;
  s << kTsvHeader << "\n";
  for (const auto& row : t.rows)
    for (auto seed : t.seeds) {
      const auto& r = t.at(row, seed);
      s << t.name << "\t" << row << "\t" << seed << "\t" << format_double(r.accuracy) << "\t" << format_double(r.miou)
        << "\t" << (r.iou.water_present ? format_double(r.iou.water) : "-") << "\t"
        << (r.iou.nonwater_present ? format_double(r.iou.nonwater) : "-") << "\t" << r.confusion.tp << "\t"
        << r.confusion.fp << "\t" << r.confusion.tn << "\t" << r.confusion.fn << "\t" << r.tiles << "\t" << r.model
        << "\t" << r.labels << "\t" << r.scenario << "\n";
    }
  return s.str();
}

Table parse_table_tsv(const std::string& text, const std::string& where) {
  Table t;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kTsvHeader) fail(ErrorKind::format, where + ": not a results table");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = s2c::split(line, '\t');
    if (f.size() != 15) fail(ErrorKind::format, where + ": expected 15 columns");
    if (t.name.empty()) t.name = f[0];
    if (f[0] != t.name) fail(ErrorKind::format, where + ": mixed tables");
    const auto seed = static_cast<std::uint64_t>(parse_uint(f[2], where));
    if (std::find(t.rows.begin(), t.rows.end(), f[1]) == t.rows.end()) t.rows.push_back(f[1]);
    if (std::find(t.seeds.begin(), t.seeds.end(), seed) == t.seeds.end()) t.seeds.push_back(seed);
    EvalReport r;
    r.accuracy = parse_double(f[3], where);
    r.miou = parse_double(f[4], where);
    r.iou.water_present = f[5] != "-";
    r.iou.nonwater_present = f[6] != "-";
    if (r.iou.water_present) r.iou.water = parse_double(f[5], where);
    if (r.iou.nonwater_present) r.iou.nonwater = parse_double(f[6], where);
    r.confusion = {parse_uint(f[7], where), parse_uint(f[8], where), parse_uint(f[9], where), parse_uint(f[10], where)};
    r.tiles = parse_int(f[11], where);
    r.model = f[12];
    r.labels = f[13];
    r.scenario = f[14];
    t.cells[{f[1], seed}] = r;
  }
  if (t.rows.empty()) fail(ErrorKind::format, where + ": empty results table");
  for (const auto& row : t.rows)
    for (auto s : t.seeds)
      if (!t.cells.count({row, s})) fail(ErrorKind::format, where + ": missing cell " + row + " seed " + std::to_string(s));
  return t;
}

std::string median_tsv(const Table& t) {
  std::ostringstream s;
  s << "row\taccuracy\tmiou\n";
  for (const auto& row : t.rows)
    s << row << "\t" << format_double(t.median_accuracy(row)) << "\t" << format_double(t.median_miou(row)) << "\n";
  return s.str();
}

std::string table_summary(const Table& t) {
  std::ostringstream s;
  for (const auto& row : t.rows)
    for (auto seed : t.seeds) {
      const auto& r = t.at(row, seed);
      s << "[" << t.name << " " << slug(row) << " seed=" << seed << "]\n" << format_report(r) << "\n";
    }
  return s.str();
}

std::string format_comparison(const Table& t, const PublishedRow (&published)[5]) {
  std::ostringstream s;
  char buf[160];
  std::string seeds;
  for (auto v : t.seeds) seeds += (seeds.empty() ? "" : ",") + std::to_string(v);
  s << kReportBanner << "\n";
  s << "Metrics: global confusion over the test split against fine masks; median over seeds " << seeds << ".\n\n";
  const bool ablation = t.name == "ablation";
  std::snprintf(buf, sizeof buf, "%-26s %10s %10s %14s %14s\n", ablation ? "dispersion / noise" : "model / labels",
                "acc", "mIoU", "published acc", "published mIoU");
  s << buf;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    const PublishedRow* ref = nullptr;
    for (const auto& p : published)
      if (row == p.label) ref = &p;
    if (ref) {
      std::snprintf(buf, sizeof buf, "%-26s %10.2f %10.2f %14.1f %14.1f\n", row.c_str(), t.median_accuracy(row),
                    t.median_miou(row), ref->accuracy, ref->miou);
    } else {
      std::snprintf(buf, sizeof buf, "%-26s %10.2f %10.2f %14s %14s\n", row.c_str(), t.median_accuracy(row),
                    t.median_miou(row), "-", "-");
    }
    s << buf;
  }
  return s.str();
}

// --- panels ----------------------------------------------------------------------

ProbabilityMask imagery_composite(const MultispectralTile& tile) {
  const int w = tile.width();
  const int h = tile.height();
  const int bands = std::min(3, tile.channels());
  std::vector<double> v(static_cast<std::size_t>(w) * h, 0.0);
  for (int c = 0; c < bands; ++c) {
    const auto plane = tile.channel(c);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += plane[i] / bands;
  }
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double a = *lo;
  const double span = *hi - *lo;
  for (double& x : v) x = span > 0.0 ? (x - a) / span : 0.0;
  return ProbabilityMask(w, h, std::move(v));
}

std::vector<std::filesystem::path> export_panels(const TileRecord& tile, const DatasetManifest& manifest,
                                                 const model::Model& unet, const model::Model& refiner,
                                                 const model::Model& refiner_points, const std::string& points_tag,
                                                 const std::filesystem::path& out_dir) {
  const auto img = read_multispectral(manifest.resolve(tile.imagery));
  const auto fine = read_mask(manifest.resolve(tile.fine));
  const auto pts_path = tile.points_for(manifest.resolve_tag(points_tag));
  if (!pts_path) fail(ErrorKind::usage, "tile " + tile.tile_id + " has no point raster for " + points_tag);
  const auto pts = read_mask(manifest.resolve(*pts_path));
  std::vector<std::filesystem::path> out;
  auto emit = [&](const std::string& what, const auto& raster) {
    out.push_back(out_dir / (tile.tile_id + "_" + std::to_string(out.size() + 1) + "_" + what + ".pgm"));
    export_image(raster, out.back());
  };
  emit("imagery", imagery_composite(img));
  emit("truth", fine);
  emit("unet", unet.infer(img, nullptr).probability);
  emit("refiner", refiner.infer(img, nullptr).probability);
  emit("refiner_points", refiner_points.infer(img, &pts).probability);
  return out;
}

}  // namespace s2c::eval
