#include "s2c/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include "s2c/error.hpp"
#include "s2c/rng.hpp"
#include "s2c/util.hpp"

namespace s2c {

std::optional<std::string> TileRecord::points_for(const std::string& tag) const {
  for (const auto& [t, path] : point_rasters)
    if (t == tag) return path;
  return std::nullopt;
}

std::vector<const TileRecord*> DatasetManifest::split(const std::string& name) const {
  const std::size_t n_test = static_cast<std::size_t>(std::clamp(test_tiles, 0, static_cast<int>(tiles.size())));
  const std::size_t n_train = tiles.size() - n_test;
  std::vector<const TileRecord*> out;
  if (name == "train") {
    for (std::size_t i = 0; i < n_train; ++i) out.push_back(&tiles[i]);
  } else if (name == "test") {
    for (std::size_t i = n_train; i < tiles.size(); ++i) out.push_back(&tiles[i]);
  } else if (name == "all") {
    for (const auto& t : tiles) out.push_back(&t);
  } else {
    fail(ErrorKind::usage, "unknown split '" + name + "' (expected train, test or all)");
  }
  return out;
}

std::string DatasetManifest::resolve_tag(const std::string& tag_or_prefix) const {
  std::vector<std::string> known;
  for (const auto& s : scenarios) known.push_back(s.tag);
  if (known.empty() && !tiles.empty())
    for (const auto& [t, _] : tiles.front().point_rasters) known.push_back(t);
  if (std::find(known.begin(), known.end(), tag_or_prefix) != known.end()) return tag_or_prefix;
  std::vector<std::string> matches;
  for (const auto& t : known)
    if (t.rfind(tag_or_prefix + "-", 0) == 0) matches.push_back(t);
  if (matches.size() == 1) return matches.front();
  std::string all;
  for (const auto& t : known) all += (all.empty() ? "" : ", ") + t;
  if (matches.empty()) fail(ErrorKind::usage, "no point rasters tagged '" + tag_or_prefix + "' (have: " + all + ")");
  fail(ErrorKind::usage, "point tag '" + tag_or_prefix + "' is ambiguous (have: " + all + ")");
}

void DatasetManifest::write(const std::filesystem::path& path) const {
  std::ostringstream out;
  out << "# s2c-manifest v1\n";
  out << "# split train=" << tiles.size() - static_cast<std::size_t>(test_tiles) << " test=" << test_tiles << "\n";
  for (const auto& s : scenarios) {
    const auto& c = s.config;
    out << "# scenario " << s.tag << " scenario=" << to_string(c.scenario) << " noise=" << synth::to_string(c.noise_level)
        << " noise_radius_m=" << format_double(c.noise_radius_m)
        << " noise_shape=" << (c.noise_shape == synth::NoiseShape::uniform ? "uniform" : "gaussian")
        << " clusters=" << c.clusters << " cluster_sigma_px=" << format_double(c.cluster_sigma_px) << "\n";
  }
  for (const auto& c : comments) out << "# " << c << "\n";
  for (const auto& t : tiles) {
    out << t.tile_id << '\t' << t.imagery << '\t' << t.fine << '\t' << t.coarse << '\t';
    for (std::size_t i = 0; i < t.point_rasters.size(); ++i)
      out << (i ? "," : "") << t.point_rasters[i].first << ':' << t.point_rasters[i].second;
    out << '\t' << t.seed << '\t' << t.n_points << '\n';
  }
  write_text_file(path, out.str());
}

DatasetManifest DatasetManifest::read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open manifest: " + path.string());
  DatasetManifest m;
  m.root = path.parent_path();
  std::string line;
  int line_no = 0;
  bool have_split = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (line[0] == '#') {
      auto words = split_ws(line.substr(1));
      if (words.empty()) continue;
      if (words[0] == "split") {
        for (std::size_t i = 1; i < words.size(); ++i) {
          auto [k, v] = split_kv(words[i], where);
          if (k == "test") m.test_tiles = parse_int(v, where);
        }
        have_split = true;
      } else if (words[0] == "scenario" && words.size() >= 2) {
        ScenarioInfo info;
        info.tag = words[1];
        for (std::size_t i = 2; i < words.size(); ++i) {
          auto [k, v] = split_kv(words[i], where);
          auto& c = info.config;
          if (k == "scenario") c.scenario = parse_scenario(v);
          else if (k == "noise") c.noise_level = synth::parse_noise_level(v);
          else if (k == "noise_radius_m") c.noise_radius_m = parse_double(v, where);
          else if (k == "noise_shape") c.noise_shape = v == "gaussian" ? synth::NoiseShape::gaussian : synth::NoiseShape::uniform;
          else if (k == "clusters") c.clusters = parse_int(v, where);
          else if (k == "cluster_sigma_px") c.cluster_sigma_px = parse_double(v, where);
        }
        m.scenarios.push_back(std::move(info));
      } else if (words[0] != "s2c-manifest") {
        m.comments.push_back(trim(line.substr(1)));
      }
      continue;
    }
    auto cols = s2c::split(line, '\t');
    if (cols.size() != 7) fail(ErrorKind::format, where + ": expected 7 tab-separated columns");
    TileRecord r;
    r.tile_id = cols[0];
    r.imagery = cols[1];
    r.fine = cols[2];
    r.coarse = cols[3];
    if (!cols[4].empty()) {
      for (const auto& item : s2c::split(cols[4], ',')) {
        const auto colon = item.find(':');
        if (colon == std::string::npos) fail(ErrorKind::format, where + ": point raster entry needs tag:path");
        r.point_rasters.emplace_back(item.substr(0, colon), item.substr(colon + 1));
      }
    }
    r.seed = static_cast<std::uint64_t>(parse_uint(cols[5], where));
    r.n_points = parse_int(cols[6], where);
    m.tiles.push_back(std::move(r));
  }
  if (!have_split) m.test_tiles = 0;
  if (m.test_tiles < 0 || m.test_tiles > static_cast<int>(m.tiles.size()))
    fail(ErrorKind::format, path.string() + ": test split larger than the tile count");
  return m;
}

namespace {

std::string tile_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "tile_%05d", i);
  return buf;
}

}  // namespace

std::vector<synth::ScenarioConfig> synth::default_scenarios() {
  std::vector<ScenarioConfig> out;
  for (auto s : {Scenario::sm, Scenario::tdc})
    for (auto n : {NoiseLevel::low, NoiseLevel::high}) out.push_back(ScenarioConfig::make(s, n));
  return out;
}

DatasetManifest gen_dataset(const synth::DatasetOptions& opt, const std::filesystem::path& out_dir) {
  require(opt.n_tiles >= 1, "gen_dataset needs at least one tile");
  require(opt.test_tiles >= 0 && opt.test_tiles < opt.n_tiles, "test split must leave at least one training tile");
  require(opt.min_points >= 20 && opt.max_points <= 50 && opt.min_points <= opt.max_points,
          "point counts must lie in [20, 50]");
  opt.scene.validate();
  require(opt.sigma > 0.0, "coarsening sigma must be positive");
  require(opt.threshold > 0.0 && opt.threshold < 1.0, "coarsening threshold must be in (0,1)");
  std::vector<std::string> tags;
  for (const auto& s : opt.scenarios) {
    auto probe = s;
    probe.n_points = opt.min_points;
    probe.validate();
    require(std::find(tags.begin(), tags.end(), s.tag()) == tags.end(), "duplicate scenario " + s.tag());
    tags.push_back(s.tag());
  }

  std::error_code ec;
  for (const char* sub : {"imagery", "fine", "coarse"}) std::filesystem::create_directories(out_dir / sub, ec);
  for (const auto& t : tags) std::filesystem::create_directories(out_dir / "points" / t, ec);
  if (ec) fail(ErrorKind::io, "cannot create dataset directories under " + out_dir.string());

  DatasetManifest m;
  m.root = out_dir;
  m.test_tiles = opt.test_tiles;
  for (std::size_t k = 0; k < opt.scenarios.size(); ++k) m.scenarios.push_back({tags[k], opt.scenarios[k]});
  m.tiles.resize(static_cast<std::size_t>(opt.n_tiles));

  auto make_tile = [&](int i) {
    const std::uint64_t seed = opt.scene.seed + static_cast<std::uint64_t>(i);
    auto params = opt.scene;
    params.seed = seed;
    auto scene = synth::gen_scene(params);
    const auto coarse = synth::coarsen_mask(scene.fine, opt.sigma, opt.threshold);
    const auto contours = synth::extract_contours(scene.fine);
    auto count_rng = make_rng(seed, Stream::point_count);
    const int n_points = std::uniform_int_distribution<int>(opt.min_points, opt.max_points)(count_rng);

    TileRecord r;
    r.tile_id = tile_name(i);
    r.seed = seed;
    r.n_points = n_points;
    r.imagery = "imagery/" + r.tile_id + ".s2c";
    r.fine = "fine/" + r.tile_id + ".s2c";
    r.coarse = "coarse/" + r.tile_id + ".s2c";
    const double mpp = scene.imagery.meta().meters_per_pixel;
    write_tile(scene.imagery, out_dir / r.imagery);
    write_tile(scene.fine, out_dir / r.fine, mpp);
    write_tile(coarse, out_dir / r.coarse, mpp);
    for (std::size_t k = 0; k < opt.scenarios.size(); ++k) {
      auto cfg = opt.scenarios[k];
      cfg.n_points = n_points;
      cfg.seed = derive_seed(seed, k);
      const auto clean = synth::sample_points(contours, cfg);
      const auto noisy = synth::apply_gps_noise(clean, cfg, mpp);
      const auto raster = synth::rasterize_points(noisy, params.width, params.height, opt.stamp);
      const std::string rel = "points/" + tags[k] + "/" + r.tile_id + ".s2c";
      write_tile(raster.mask, out_dir / rel, mpp);
      r.point_rasters.emplace_back(tags[k], rel);
    }
    m.tiles[static_cast<std::size_t>(i)] = std::move(r);
  };
  parallel_for(opt.n_tiles, opt.jobs, make_tile);

  double lo = 1.0, hi = 0.0, sum = 0.0;
  const double px = static_cast<double>(opt.scene.width) * opt.scene.height;
  for (const auto& t : m.tiles) {
    const double ratio = t.n_points / px;
    lo = std::min(lo, ratio);
    hi = std::max(hi, ratio);
    sum += ratio;
  }
  const double mean = sum / static_cast<double>(m.tiles.size());
  m.comments.push_back("blur sigma=" + format_double(opt.sigma) + " threshold=" + format_double(opt.threshold) +
                       " stamp=" + std::to_string(opt.stamp));
  m.comments.push_back("scene width=" + std::to_string(opt.scene.width) + " height=" + std::to_string(opt.scene.height) +
                       " channels=" + std::to_string(opt.scene.channels) + " base_seed=" + std::to_string(opt.scene.seed));
  m.comments.push_back("density points_per_pixel min=" + format_double(lo) + " mean=" + format_double(mean) +
                       " max=" + format_double(hi) + " at_512x512_mean=" + format_double(mean * px / (512.0 * 512.0)));
  m.write(out_dir / "manifest.tsv");
  return m;
}

}  // namespace s2c
