#include "s2c/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "s2c/dataset.hpp"
#include "s2c/error.hpp"
#include "s2c/eval.hpp"
#include "s2c/gradcheck.hpp"
#include "s2c/model.hpp"
#include "s2c/util.hpp"

namespace s2c {

namespace fs = std::filesystem;

namespace {

std::string num(double v) { return format_double(v); }

// Defaults come from the library structs so the CLI cannot drift from them.
std::vector<ConfigKey> train_keys() {
  const model::TrainConfig d;
  return {{"epochs", num(d.epochs), false, "epochs per stage"},
          {"stage2_epochs", "-1", false, "stage-2 epochs (-1: same as epochs)"},
          {"batch", num(d.batch_size), false, "batch size"},
          {"lr", num(d.learning_rate), false, "learning rate"},
          {"lr_schedule", model::to_string(d.lr_schedule), false, "constant | cosine"},
          {"optimizer", "adam", false, "adam | sgd"},
          {"weight_pos", num(d.weight_pos), false, "BCE weight of the water class"},
          {"schedule", "sequential", false, "sequential | joint"},
          {"levels", num(d.levels), false, "UNet levels"},
          {"base", num(d.base_channels), false, "UNet base channels"},
          {"point_sigma", num(d.point_sigma), false, "point heat-map sigma in px (0: raw raster)"}};
}

std::vector<ConfigKey> with(std::vector<ConfigKey> a, const std::vector<ConfigKey>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

const std::map<std::string, std::vector<ConfigKey>>& key_table() {
  static const std::map<std::string, std::vector<ConfigKey>> table = [] {
    std::map<std::string, std::vector<ConfigKey>> t;
    const synth::SceneParams sp;
    const synth::DatasetOptions dop;
    const synth::ScenarioConfig sc;
    t["gen"] = {{"out", "", true, "output directory"},
                {"tiles", "250", false, "number of tiles"},
                {"test_tiles", "50", false, "tiles in the test split (the last ones)"},
                {"size", num(sp.width), false, "tile width and height"},
                {"channels", num(sp.channels), false, "spectral bands"},
                {"seed", "42", false, "base seed"},
                {"scenario", "all", false, "all | tdc | sm"},
                {"noise", "all", false, "all | none | low | high"},
                {"noise_shape", "uniform", false, "uniform | gaussian"},
                {"clusters", num(sc.clusters), false, "social-media cluster count"},
                {"cluster_sigma_px", num(sc.cluster_sigma_px), false, "social-media cluster spread"},
                {"sigma", num(dop.sigma), false, "coarsening blur sigma (px)"},
                {"threshold", num(dop.threshold), false, "coarsening threshold"},
                {"stamp", "1", false, "point stamp size: 1 or 3"},
                {"min_points", num(dop.min_points), false, "fewest points per tile"},
                {"max_points", num(dop.max_points), false, "most points per tile"},
                {"coverage", num(sp.water_coverage_target), false, "water coverage target"},
                {"blob_count", num(sp.blob_count), false, "water bodies per tile"},
                {"contrast", num(sp.spectral_contrast), false, "water/land spectral contrast"},
                {"noise_sigma", num(sp.noise_sigma), false, "pixel noise"},
                {"texture_amplitude", num(sp.texture_amplitude), false, "wet-soil patch strength"},
                {"confuser_count", num(sp.confuser_count), false, "wet-soil patches per tile"},
                {"confuser_radius", num(sp.confuser_radius), false, "wet-soil patch radius (px)"},
                {"jobs", "1", false, "worker threads"}};
    t["train"] = with({{"manifest", "", true, "dataset manifest"},
                       {"out", "", true, "output directory"},
                       {"model", "refiner", false, "unet | refiner"},
                       {"labels", "coarse", false, "coarse | fine"},
                       {"points", "none", false, "point scenario tag or prefix, or none"},
                       {"seed", "42", false, "training seed"}},
                      train_keys());
    t["infer"] = {{"ckpt", "", true, "checkpoint"},
                  {"tile", "", true, "multispectral S2C tile"},
                  {"points", "", false, "point raster S2C (points-trained models)"},
                  {"threshold", "0.5", false, "water threshold"},
                  {"out", "", true, "output directory"}};
    t["eval"] = {{"ckpt", "", true, "checkpoint"},
                 {"manifest", "", true, "dataset manifest"},
                 {"split", "test", false, "train | test | all"},
                 {"points", "auto", false, "point tag, none, or auto (from the checkpoint)"},
                 {"threshold", "0.5", false, "water threshold"},
                 {"out", "", false, "optional output directory"},
                 {"jobs", "1", false, "worker threads"}};
    const std::vector<ConfigKey> grid = {{"manifest", "", true, "dataset manifest"},
                                         {"out", "", true, "output directory"},
                                         {"seeds", "1,2,3,4,5", false, "training seeds, e.g. 1,2,3 or 1-5"},
                                         {"jobs", "1", false, "worker threads"}};
    t["benchmark"] = with(grid, train_keys());
    t["ablate"] = with(grid, train_keys());
    t["report"] = {{"results", "", true, "directory holding benchmark.tsv and/or ablation.tsv"},
                   {"manifest", "", false, "dataset manifest (enables panels)"},
                   {"out", "", true, "output directory"},
                   {"panel_tiles", "4", false, "test tiles to export panels for"},
                   {"seed", "", false, "seed whose checkpoints drive the panels (default: first)"}};
    t["gradcheck"] = {{"levels", "2", false, "UNet levels"},
                      {"base", "4", false, "UNet base channels"},
                      {"in", "4", false, "imagery channels"},
                      {"size", "8", false, "input height and width"},
                      {"batch", "1", false, "batch size"},
                      {"epsilon", "1e-5", false, "finite-difference step"},
                      {"tolerance", "1e-5", false, "max relative error"},
                      {"samples", "200", false, "coordinates per tensor"},
                      {"seed", "1", false, "seed"},
                      {"out", "", false, "optional output directory"}};
    return t;
  }();
  return table;
}

std::string normalize_key(std::string k) {
  std::replace(k.begin(), k.end(), '-', '_');
  return k;
}

}  // namespace

// --- RunConfig -----------------------------------------------------------------

RunConfig::RunConfig(std::string command) : command_(std::move(command)) {
  if (!key_table().count(command_)) fail(ErrorKind::usage, "unknown command '" + command_ + "'");
}

const std::vector<std::string>& RunConfig::commands() {
  static const std::vector<std::string> c = {"gen", "train", "infer", "eval", "benchmark", "ablate", "report", "gradcheck"};
  return c;
}

const std::vector<ConfigKey>& RunConfig::keys(const std::string& command) {
  auto it = key_table().find(command);
  if (it == key_table().end()) fail(ErrorKind::usage, "unknown command '" + command + "'");
  return it->second;
}

const ConfigKey* RunConfig::find(const std::string& key) const {
  for (const auto& k : keys(command_))
    if (k.name == key) return &k;
  return nullptr;
}

void RunConfig::set(const std::string& key_in, const std::string& value) {
  const auto key = normalize_key(key_in);
  if (!find(key)) fail(ErrorKind::usage, "unknown key '" + key_in + "' for " + command_);
  values_[key] = value;
}

void RunConfig::parse(const std::string& text, const std::string& where) {
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) fail(ErrorKind::usage, where + ":" + std::to_string(n) + ": expected key=value");
    set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
}

void RunConfig::load(const fs::path& path) { parse(read_text_file(path), path.string()); }

bool RunConfig::has(const std::string& key) const { return values_.count(normalize_key(key)) != 0; }

std::string RunConfig::get(const std::string& key_in) const {
  const auto key = normalize_key(key_in);
  const auto* k = find(key);
  if (!k) fail(ErrorKind::internal, "command " + command_ + " has no key " + key);
  if (auto it = values_.find(key); it != values_.end()) return it->second;
  if (k->required) fail(ErrorKind::usage, command_ + " requires " + key);
  return k->default_value;
}

int RunConfig::get_int(const std::string& key) const { return parse_int(get(key), key); }
double RunConfig::get_double(const std::string& key) const { return parse_double(get(key), key); }
unsigned long long RunConfig::get_uint(const std::string& key) const { return parse_uint(get(key), key); }

std::string RunConfig::resolved() const {
  std::ostringstream s;
  s << "# " << command_ << "\n";
  for (const auto& k : keys(command_)) {
    auto it = values_.find(k.name);
    if (it != values_.end()) s << k.name << "=" << it->second << "\n";
    else if (!k.required && !k.default_value.empty()) s << k.name << "=" << k.default_value << "\n";
  }
  return s.str();
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  for (const auto& part : split(text, ',')) {
    const auto p = trim(part);
    if (p.empty()) continue;
    const auto dash = p.find('-');
    if (dash != std::string::npos && dash > 0) {
      const auto a = parse_uint(p.substr(0, dash), "seeds");
      const auto b = parse_uint(p.substr(dash + 1), "seeds");
      require(a <= b && b - a < 1000, "bad seed range " + p);
      for (auto s = a; s <= b; ++s) out.push_back(s);
    } else {
      out.push_back(parse_uint(p, "seeds"));
    }
  }
  require(!out.empty(), "empty seed list");
  return out;
}

// --- commands ----------------------------------------------------------------------

namespace {

void prepare_out(const fs::path& dir, const RunConfig& cfg) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::io, "cannot create " + dir.string() + ": " + ec.message());
  write_text_file(dir / "resolved.cfg", cfg.resolved());
}

model::TrainConfig train_config(const RunConfig& c) {
  model::TrainConfig t;
  t.epochs = c.get_int("epochs");
  t.stage2_epochs = c.get_int("stage2_epochs");
  t.batch_size = c.get_int("batch");
  t.learning_rate = c.get_double("lr");
  t.lr_schedule = model::parse_lr_schedule(c.get("lr_schedule"));
  const auto opt = c.get("optimizer");
  t.optimizer = nn::parse_optim_kind(opt == "sgd" ? "sgd_momentum" : opt);
  t.weight_pos = c.get_double("weight_pos");
  t.schedule = model::parse_schedule(c.get("schedule"));
  t.levels = c.get_int("levels");
  t.base_channels = c.get_int("base");
  t.point_sigma = c.get_double("point_sigma");
  return t;
}

std::string cmd_gen(const RunConfig& c, const LogFn& log) {
  synth::DatasetOptions o;
  o.n_tiles = c.get_int("tiles");
  o.test_tiles = c.get_int("test_tiles");
  const int size = c.get_int("size");
  o.scene.width = o.scene.height = size;
  o.scene.channels = c.get_int("channels");
  o.scene.seed = c.get_uint("seed");
  o.scene.water_coverage_target = c.get_double("coverage");
  o.scene.blob_count = c.get_int("blob_count");
  o.scene.spectral_contrast = c.get_double("contrast");
  o.scene.noise_sigma = c.get_double("noise_sigma");
  o.scene.texture_amplitude = c.get_double("texture_amplitude");
  o.scene.confuser_count = c.get_int("confuser_count");
  o.scene.confuser_radius = c.get_double("confuser_radius");
  o.sigma = c.get_double("sigma");
  o.threshold = c.get_double("threshold");
  o.stamp = c.get_int("stamp");
  require(o.stamp == 1 || o.stamp == 3, "stamp must be 1 or 3");
  o.min_points = c.get_int("min_points");
  o.max_points = c.get_int("max_points");
  o.jobs = c.get_int("jobs");

  std::vector<Scenario> scenarios;
  const auto sc = c.get("scenario");
  if (sc == "all") scenarios = {Scenario::sm, Scenario::tdc};
  else scenarios = {parse_scenario(sc)};
  std::vector<synth::NoiseLevel> noises;
  const auto nz = c.get("noise");
  if (nz == "all") noises = {synth::NoiseLevel::low, synth::NoiseLevel::high};
  else noises = {synth::parse_noise_level(nz)};
  const auto shape = c.get("noise_shape");
  require(shape == "uniform" || shape == "gaussian", "noise_shape must be uniform or gaussian");
  for (auto s : scenarios)
    for (auto n : noises) {
      auto cfg = synth::ScenarioConfig::make(s, n);
      cfg.noise_shape = shape == "gaussian" ? synth::NoiseShape::gaussian : synth::NoiseShape::uniform;
      cfg.clusters = c.get_int("clusters");
      cfg.cluster_sigma_px = c.get_double("cluster_sigma_px");
      o.scenarios.push_back(cfg);
    }

  const fs::path out = c.get("out");
  prepare_out(out, c);
  if (log) log("generating " + std::to_string(o.n_tiles) + " tiles into " + out.string());
  const auto m = gen_dataset(o, out);

  double wmin = 1.0, wmax = 0.0, wsum = 0.0;
  int pmin = 1 << 30, pmax = 0;
  double psum = 0.0;
  for (const auto& t : m.tiles) {
    const double f = read_mask(m.resolve(t.fine)).water_fraction();
    wmin = std::min(wmin, f);
    wmax = std::max(wmax, f);
    wsum += f;
    pmin = std::min(pmin, t.n_points);
    pmax = std::max(pmax, t.n_points);
    psum += t.n_points;
  }
  const double n = static_cast<double>(m.tiles.size());
  std::ostringstream s;
  std::string tags;
  for (const auto& sc2 : m.scenarios) tags += (tags.empty() ? "" : ",") + sc2.tag;
  s << "manifest=" << (out / "manifest.tsv").string() << "\n"
    << "tiles=" << m.tiles.size() << "\ntrain=" << m.tiles.size() - static_cast<std::size_t>(m.test_tiles)
    << "\ntest=" << m.test_tiles << "\nscenarios=" << tags << "\n"
    << "water_fraction_min=" << format_double(wmin) << "\nwater_fraction_mean=" << format_double(wsum / n)
    << "\nwater_fraction_max=" << format_double(wmax) << "\n"
    << "points_min=" << pmin << "\npoints_mean=" << format_double(psum / n) << "\npoints_max=" << pmax << "\n";
  return s.str();
}

std::string cmd_train(const RunConfig& c, const LogFn& log) {
  const auto manifest = DatasetManifest::read(c.get("manifest"));
  auto t = train_config(c);
  t.seed = c.get_uint("seed");
  t.labels = model::parse_label_kind(c.get("labels"));
  const auto points = c.get("points");
  t.use_points = points != "none" && !points.empty();
  t.points_tag = t.use_points ? points : "";
  const auto kind = model::parse_model_kind(c.get("model"));
  if (kind == model::ModelKind::unet && t.use_points)
    fail(ErrorKind::usage, "the unet model takes no points; use --model refiner");
  const fs::path out = c.get("out");
  prepare_out(out, c);

  std::ostringstream metrics;
  metrics << "stage\tepoch\tloss\tval_acc\tval_miou\n";
  model::TrainHooks hooks;
  hooks.on_epoch = [&](const model::EpochMetrics& e) {
    if (log)
      log("stage " + std::to_string(e.stage) + " epoch " + std::to_string(e.epoch) + " loss=" + format_double(e.loss) +
          " val_miou=" + format_double(e.val_miou));
  };
  const auto m = model::train(manifest, kind, t, hooks);
  for (const auto& e : m.history)
    metrics << e.stage << "\t" << e.epoch << "\t" << format_double(e.loss) << "\t" << format_double(e.val_accuracy)
            << "\t" << format_double(e.val_miou) << "\n";
  m.save(out / "model.ckpt");
  write_text_file(out / "metrics.log", metrics.str());
  std::ostringstream s;
  s << "checkpoint=" << (out / "model.ckpt").string() << "\nmetrics=" << (out / "metrics.log").string() << "\n"
    << "steps=" << m.steps << "\n";
  if (!m.history.empty()) {
    const auto& e = m.history.back();
    s << "final_loss=" << format_double(e.loss) << "\nval_acc=" << format_double(e.val_accuracy)
      << "\nval_miou=" << format_double(e.val_miou) << "\n";
  }
  return s.str();
}

std::string cmd_infer(const RunConfig& c, const LogFn&) {
  const auto m = model::Model::load(c.get("ckpt"));
  double mpp = 10.0;
  auto raster = read_tile(c.get("tile"), &mpp);
  auto* tile = std::get_if<MultispectralTile>(&raster);
  if (!tile) fail(ErrorKind::format, c.get("tile") + ": expected a multispectral tile");
  std::optional<BinaryMask> pts;
  if (!c.get("points").empty()) pts = read_mask(c.get("points"));
  const auto pred = m.infer(*tile, pts ? &*pts : nullptr, c.get_double("threshold"));
  const fs::path out = c.get("out");
  prepare_out(out, c);
  const auto stem = fs::path(c.get("tile")).stem().string();
  const auto prob = out / (stem + "_prob.s2c");
  const auto mask = out / (stem + "_mask.s2c");
  write_tile(pred.probability, prob, mpp);
  write_tile(pred.mask, mask, mpp);
  export_image(pred.probability, out / (stem + "_prob.pgm"));
  export_image(pred.mask, out / (stem + "_mask.pgm"));
  std::ostringstream s;
  s << "probability=" << prob.string() << "\nmask=" << mask.string() << "\nwater_fraction="
    << format_double(pred.mask.water_fraction()) << "\n";
  return s.str();
}

std::string cmd_eval(const RunConfig& c, const LogFn&) {
  const auto m = model::Model::load(c.get("ckpt"));
  const auto manifest = DatasetManifest::read(c.get("manifest"));
  auto points = c.get("points");
  if (points == "auto") points = m.uses_points() ? m.config.points_tag : "";
  if (points == "none") points.clear();
  const auto r = eval::evaluate(m, manifest, c.get("split"), points, c.get_double("threshold"), c.get_int("jobs"));
  const auto text = "split=" + c.get("split") + "\n" + eval::format_report(r);
  if (c.has("out") && !c.get("out").empty()) {
    prepare_out(c.get("out"), c);
    write_text_file(fs::path(c.get("out")) / "eval.txt", text);
  }
  return text;
}

std::string cmd_grid(const RunConfig& c, const LogFn& log, bool ablation) {
  auto manifest = DatasetManifest::read(c.get("manifest"));
  const auto seeds = parse_seed_list(c.get("seeds"));
  const fs::path out = c.get("out");
  prepare_out(out, c);
  std::error_code ec;
  fs::create_directories(out / "checkpoints", ec);
  eval::ExperimentRunner runner(std::move(manifest), train_config(c), c.get_int("jobs"));
  runner.checkpoint_dir = out / "checkpoints";
  runner.log = log;
  const auto t = ablation ? eval::run_ablation(runner, seeds) : eval::run_benchmark(runner, seeds);
  write_text_file(out / (t.name + ".tsv"), eval::table_tsv(t));
  write_text_file(out / (t.name + "_median.tsv"), eval::median_tsv(t));
  write_text_file(out / (t.name + "_summary.txt"), eval::table_summary(t));
  return eval::format_comparison(t, ablation ? eval::kPublishedAblation : eval::kPublishedBenchmark);
}

std::string cmd_report(const RunConfig& c, const LogFn& log) {
  const fs::path results = c.get("results");
  const fs::path out = c.get("out");
  prepare_out(out, c);
  std::ostringstream s;
  std::optional<eval::Table> bench;
  bool any = false;
  for (const char* name : {"benchmark", "ablation"}) {
    const auto path = results / (std::string(name) + ".tsv");
    if (!fs::exists(path)) continue;
    const auto t = eval::parse_table_tsv(read_text_file(path), path.string());
    if (any) s << "\n";
    s << (t.name == "ablation" ? "Ablation: point dispersion / GPS noise (refiner, coarse labels)\n"
                               : "Benchmark: annotation granularity and crowdsourced points\n");
    s << eval::format_comparison(t, t.name == "ablation" ? eval::kPublishedAblation : eval::kPublishedBenchmark);
    if (t.name == "benchmark") bench = t;
    any = true;
  }
  if (!any) fail(ErrorKind::io, "no benchmark.tsv or ablation.tsv under " + results.string());

  if (c.has("manifest") && bench) {
    const auto manifest = DatasetManifest::read(c.get("manifest"));
    const auto seed = c.has("seed") ? c.get_uint("seed") : bench->seeds.front();
    auto ckpt = [&](const char* label) {
      return model::Model::load(results / "checkpoints" / (eval::slug(label) + "_seed" + std::to_string(seed) + ".ckpt"));
    };
    const auto unet = ckpt(eval::kPublishedBenchmark[0].label);
    const auto refiner = ckpt(eval::kPublishedBenchmark[1].label);
    const auto refiner_points = ckpt(eval::kPublishedBenchmark[2].label);
    const auto test = manifest.split("test");
    const int n = std::min<int>(c.get_int("panel_tiles"), static_cast<int>(test.size()));
    fs::create_directories(out / "panels");
    int files = 0;
    for (int i = 0; i < n; ++i)
      files += static_cast<int>(eval::export_panels(*test[static_cast<std::size_t>(i)], manifest, unet, refiner,
                                                    refiner_points, refiner_points.config.points_tag, out / "panels")
                                    .size());
    s << "\npanels=" << files << " files for " << n << " tiles under " << (out / "panels").string() << "\n";
    if (log) log("exported " + std::to_string(files) + " panels");
  } else if (c.has("manifest")) {
    s << "\npanels=skipped (panels use the benchmark checkpoints)\n";
  }
  write_text_file(out / "report.txt", s.str());
  return s.str();
}

std::string cmd_gradcheck(const RunConfig& c, const LogFn&) {
  GradcheckSpec spec;
  spec.levels = c.get_int("levels");
  spec.base_channels = c.get_int("base");
  spec.in_channels = c.get_int("in");
  spec.size = c.get_int("size");
  spec.batch = c.get_int("batch");
  spec.options.epsilon = c.get_double("epsilon");
  spec.options.tolerance = c.get_double("tolerance");
  spec.options.samples_per_tensor = c.get_int("samples");
  spec.options.seed = c.get_uint("seed");
  const auto cases = gradcheck_suite(spec);
  std::ostringstream s;
  bool ok = true;
  char buf[200];
  for (const auto& k : cases) {
    std::snprintf(buf, sizeof buf, "%-16s %s max_rel_err=%.3e checked=%zu skipped=%zu worst=%s\n", k.name.c_str(),
                  k.report.pass ? "pass" : "FAIL", k.report.max_rel_error, k.report.checked, k.report.skipped,
                  k.report.worst.c_str());
    s << buf;
    ok = ok && k.report.pass;
  }
  s << "result=" << (ok ? "pass" : "fail") << "\n";
  if (c.has("out") && !c.get("out").empty()) {
    prepare_out(c.get("out"), c);
    write_text_file(fs::path(c.get("out")) / "gradcheck.txt", s.str());
  }
  if (!ok) fail(ErrorKind::numeric, "gradient check failed\n" + s.str());
  return s.str();
}

}  // namespace

std::string run_command(const RunConfig& c, const LogFn& log) {
  const auto& cmd = c.command();
  if (cmd == "gen") return cmd_gen(c, log);
  if (cmd == "train") return cmd_train(c, log);
  if (cmd == "infer") return cmd_infer(c, log);
  if (cmd == "eval") return cmd_eval(c, log);
  if (cmd == "benchmark") return cmd_grid(c, log, false);
  if (cmd == "ablate") return cmd_grid(c, log, true);
  if (cmd == "report") return cmd_report(c, log);
  if (cmd == "gradcheck") return cmd_gradcheck(c, log);
  fail(ErrorKind::usage, "unknown command '" + cmd + "'");
}

}  // namespace s2c
