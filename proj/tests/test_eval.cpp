#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "s2c/dataset.hpp"
#include "s2c/error.hpp"
#include "s2c/eval.hpp"
#include "s2c/metrics.hpp"
#include "support.hpp"

using namespace s2c;

namespace {

// Per-pixel enumeration with the metric definitions written out directly.
struct Brute {
  double acc, miou;
};

Brute brute(const BinaryMask& p, const BinaryMask& t) {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (int y = 0; y < p.height(); ++y)
    for (int x = 0; x < p.width(); ++x) {
      const int a = p.at(y, x), b = t.at(y, x);
      if (a && b) ++tp;
      if (a && !b) ++fp;
      if (!a && !b) ++tn;
      if (!a && b) ++fn;
    }
  const double total = static_cast<double>(tp + fp + tn + fn);
  const double acc = 100.0 * static_cast<double>(tp + tn) / total;
  double sum = 0.0;
  int k = 0;
  if (tp + fp + fn > 0) {
    sum += 100.0 * static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
    ++k;
  }
  if (tn + fp + fn > 0) {
    sum += 100.0 * static_cast<double>(tn) / static_cast<double>(tn + fp + fn);
    ++k;
  }
  return {acc, k ? sum / k : 100.0};
}

BinaryMask negate(const BinaryMask& m) {
  BinaryMask n(m.width(), m.height());
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x) n.set(y, x, !m.at(y, x));
  return n;
}

struct Data {
  test::TempDir dir{"eval"};
  DatasetManifest manifest;
  Data() {
    synth::DatasetOptions opt;
    opt.n_tiles = 16;
    opt.test_tiles = 6;
    opt.scene.width = opt.scene.height = 16;
    opt.scene.seed = 8;
    opt.scene.confuser_radius = 3.0;
    opt.scene.blob_count = 2;
    opt.sigma = 3.0;
    opt.scenarios = synth::default_scenarios();
    gen_dataset(opt, dir.path());
    manifest = DatasetManifest::read(dir / "manifest.tsv");
  }
};

Data& data() {
  static Data d;
  return d;
}

// UNet weights that route imagery channel 0 straight to the logit:
// logit = 20 x0 - 10, through the level-0 skip connection.
model::Model passthrough_unet(int in_channels) {
  const model::ArchSpec spec{2, 4, in_channels, 3};
  auto m = model::Model::unet(spec, 1);
  auto& ps = m.stage1().params();
  for (auto& [name, e] : ps.entries())
    for (auto& v : e.value.data()) v = 0.0;
  ps.value("enc0.conv1.w").at(0, 0, 1, 1) = 1.0;
  ps.value("enc0.conv2.w").at(0, 0, 1, 1) = 1.0;
  ps.value("dec0.conv1.w").at(0, 2 * spec.base_channels, 1, 1) = 1.0;  // skip comes after the upsampled path
  ps.value("dec0.conv2.w").at(0, 0, 1, 1) = 1.0;
  ps.value("head.w")[0] = 20.0;
  ps.value("head.b")[0] = -10.0;
  return m;
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("metric hand examples") {
  auto truth = test::rect_mask(8, 8, 0, 0, 4, 8);
  auto c = confusion(truth, truth);
  CHECK(c == Confusion{32, 0, 32, 0});
  CHECK(pixel_accuracy(c) == 100.0);
  CHECK(mean_iou(c) == 100.0);

  c = confusion(negate(truth), truth);
  CHECK(c.tp == 0);
  CHECK(c.tn == 0);
  CHECK(pixel_accuracy(c) == 0.0);

  CHECK(pixel_accuracy({3, 1, 5, 1}) == 80.0);

  const auto all = test::rect_mask(8, 8, 0, 0, 8, 8);
  c = confusion(all, truth);
  CHECK(class_iou(c).water == 50.0);
  CHECK(class_iou(c).nonwater == 0.0);
  CHECK(mean_iou(c) == 25.0);

  const BinaryMask none(8, 8);
  c = confusion(none, none);
  CHECK_FALSE(class_iou(c).water_present);
  CHECK(mean_iou(c) == 100.0);

  CHECK_THROWS_AS(pixel_accuracy({}), Error);
  CHECK_THROWS_AS(mean_iou({}), Error);
  CHECK_THROWS_AS(confusion(BinaryMask(4, 4), BinaryMask(4, 5)), Error);
}

TEST_CASE("metrics equal brute-force enumeration") {
  std::mt19937_64 rng(12345);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const auto p = test::random_mask(8, 8, rng, u(rng));
    const auto t = test::random_mask(8, 8, rng, u(rng));
    const auto c = confusion(p, t);
    CHECK(c.total() == 64);
    const auto b = brute(p, t);
    CHECK(pixel_accuracy(c) == b.acc);
    CHECK(mean_iou(c) == b.miou);
    CHECK(mean_iou(c) >= 0.0);
    CHECK(mean_iou(c) <= 100.0);
    CHECK((mean_iou(c) == 100.0) == (c.fp == 0 && c.fn == 0));
  }
}

TEST_CASE("aggregation is order independent") {
  std::mt19937_64 rng(5);
  std::vector<Confusion> parts;
  for (int i = 0; i < 50; ++i) parts.push_back(confusion(test::random_mask(8, 8, rng), test::random_mask(8, 8, rng)));
  Confusion fwd, rev;
  for (const auto& p : parts) fwd += p;
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) rev += *it;
  std::shuffle(parts.begin(), parts.end(), rng);
  Confusion shuf;
  for (const auto& p : parts) shuf += p;
  CHECK(fwd == rev);
  CHECK(fwd == shuf);
  CHECK(mean_iou(fwd) == mean_iou(shuf));
}

TEST_CASE("evaluating a truth-passthrough model scores perfectly") {
  auto& d = data();
  // Replace every test tile's imagery with its fine mask in channel 0.
  test::TempDir dir;
  auto manifest = d.manifest;
  manifest.root = dir.path();
  for (const auto& e : std::filesystem::recursive_directory_iterator(d.manifest.root))
    if (e.is_regular_file()) {
      const auto rel = std::filesystem::relative(e.path(), d.manifest.root);
      std::filesystem::create_directories((dir.path() / rel).parent_path());
      std::filesystem::copy_file(e.path(), dir.path() / rel);
    }
  for (const auto& t : manifest.tiles) {
    const auto fine = read_mask(manifest.resolve(t.fine));
    const auto img = read_multispectral(manifest.resolve(t.imagery));
    std::vector<double> v(img.data().begin(), img.data().end());
    for (std::size_t i = 0; i < fine.data().size(); ++i) v[i] = fine.data()[i];
    write_tile(MultispectralTile(img.width(), img.height(), img.channels(), v), manifest.resolve(t.imagery));
  }
  const auto m = passthrough_unet(4);
  const auto r = eval::evaluate(m, manifest, "test", "");
  CHECK(r.accuracy == 100.0);
  CHECK(r.miou == 100.0);
  CHECK(r.tiles == 6);
}

TEST_CASE("constant one-half model predicts all water") {
  auto& d = data();
  auto m = model::Model::unet({2, 4, 4, 3}, 1);
  for (auto& [name, e] : m.stage1().params().entries())
    for (auto& v : e.value.data()) v = 0.0;
  const auto r = eval::evaluate(m, d.manifest, "test", "");
  std::uint64_t water = 0, total = 0;
  for (const auto* t : d.manifest.split("test")) {
    const auto fine = read_mask(d.manifest.resolve(t->fine));
    water += fine.count();
    total += fine.data().size();
  }
  const double frac = static_cast<double>(water) / static_cast<double>(total);
  CHECK(r.confusion.fn == 0);
  CHECK(r.confusion.tn == 0);
  CHECK(r.accuracy == doctest::Approx(100.0 * frac).epsilon(1e-12));
  CHECK(r.miou == doctest::Approx(100.0 * frac / 2.0).epsilon(1e-12));
  CHECK(eval::format_report(r) == eval::format_report(eval::evaluate(m, d.manifest, "test", "", 0.5, 3)));
  const auto text = eval::format_report(r);
  CHECK(text.find("acc=") != std::string::npos);
  CHECK(text.find("miou=") != std::string::npos);
  CHECK(text.find("aggregation=global") != std::string::npos);
}

TEST_CASE("published reference values") {
  const double bench[5][2] = {{95.2, 53.8}, {95.6, 56.5}, {97.2, 61.8}, {97.0, 62.4}, {98.1, 64.9}};
  const double abl[5][2] = {{95.6, 56.5}, {95.9, 59.6}, {96.9, 61.0}, {97.2, 61.8}, {97.0, 60.9}};
  for (int i = 0; i < 5; ++i) {
    CHECK(eval::kPublishedBenchmark[i].accuracy == bench[i][0]);
    CHECK(eval::kPublishedBenchmark[i].miou == bench[i][1]);
    CHECK(eval::kPublishedAblation[i].accuracy == abl[i][0]);
    CHECK(eval::kPublishedAblation[i].miou == abl[i][1]);
  }
  CHECK(std::string(eval::kPublishedBenchmark[4].label) == "Refiner / Fine");
  CHECK(std::string(eval::kPublishedAblation[2].label) == "Low / High");
}

TEST_CASE("median") {
  CHECK(eval::median({3, 1, 2}) == 2);
  CHECK(eval::median({4, 1, 2, 3}) == 2.5);
  CHECK_THROWS_AS(eval::median({}), Error);
}

TEST_CASE("grid cells") {
  auto& d = data();
  const auto b = eval::benchmark_cells(d.manifest);
  REQUIRE(b.size() == 5);
  CHECK(b[0].kind == model::ModelKind::unet);
  CHECK(b[2].points_tag == "tdc-low");
  CHECK(b[3].labels == model::LabelKind::fine);
  const auto a = eval::ablation_cells(d.manifest);
  REQUIRE(a.size() == 5);
  CHECK(a[0].points_tag.empty());
  CHECK(a[1].points_tag == "sm-low");
  CHECK(a[2].points_tag == "sm-high");
  CHECK(a[3].points_tag == "tdc-low");
  CHECK(a[4].points_tag == "tdc-high");
  CHECK(eval::slug("Refiner / Coarse+Points") == "refiner_coarse_points");
}

TEST_CASE("benchmark and ablation tables") {
  auto& d = data();
  model::TrainConfig base;
  base.epochs = 1;
  base.base_channels = 4;
  base.batch_size = 5;
  eval::ExperimentRunner runner(d.manifest, base);
  const auto bench = eval::run_benchmark(runner, {7});
  CHECK(bench.rows.size() == 5);
  CHECK(bench.cells.size() == 5);
  const auto abl = eval::run_ablation(runner, {7});
  CHECK(abl.rows.size() == 5);
  CHECK(eval::format_report(abl.at("No Points", 7)) == eval::format_report(bench.at("Refiner / Coarse", 7)));

  eval::ExperimentRunner again(d.manifest, base);
  const auto abl2 = eval::run_ablation(again, {7});
  CHECK(eval::table_tsv(abl2) == eval::table_tsv(abl));

  const auto parsed = eval::parse_table_tsv(eval::table_tsv(bench), "mem");
  CHECK(eval::table_tsv(parsed) == eval::table_tsv(bench));
  CHECK(parsed.median_miou("UNet / Fine") == bench.median_miou("UNet / Fine"));

  const auto text = eval::format_comparison(bench, eval::kPublishedBenchmark);
  CHECK(text.find(eval::kReportBanner) != std::string::npos);
  CHECK(text.find("97.2") != std::string::npos);
  CHECK(text.find("61.8") != std::string::npos);
  const auto atext = eval::format_comparison(abl, eval::kPublishedAblation);
  CHECK(atext.find("96.9") != std::string::npos);
  CHECK(atext.find("61.0") != std::string::npos);
  CHECK(eval::median_tsv(abl).find("High / Low") != std::string::npos);
  CHECK(eval::table_summary(abl).find("seed=7") != std::string::npos);
}

TEST_CASE("panels") {
  auto& d = data();
  const auto unet = model::Model::unet({2, 4, 4, 3}, 1);
  const auto ref = model::Model::refiner({2, 4, 4, 3}, {2, 4, 5, 3}, false, 1);
  const auto refp = model::Model::refiner({2, 4, 4, 3}, {2, 4, 6, 3}, true, 1);
  test::TempDir dir;
  const auto files =
      eval::export_panels(*d.manifest.split("test")[0], d.manifest, unet, ref, refp, "tdc-low", dir.path());
  CHECK(files.size() == static_cast<std::size_t>(eval::kPanelsPerTile));
  for (const auto& f : files) {
    CHECK(std::filesystem::exists(f));
    CHECK(test::slurp(f).rfind("P5 16 16 255\n", 0) == 0);
  }
}

}  // TEST_SUITE
