// Exercises the shared library through its C header only.
#include <cmath>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "s2c/s2c.h"
#include "support.hpp"

namespace {

std::string take(char* s) {
  std::string out = s ? s : "";
  s2c_string_free(s);
  return out;
}

}  // namespace

TEST_SUITE("capi") {

TEST_CASE("null handles and pointers are rejected") {
  s2c_raster* r = nullptr;
  CHECK(s2c_raster_read(nullptr, &r) == S2C_ERR_INVALID);
  CHECK(std::strlen(s2c_last_error()) > 0);
  CHECK(s2c_raster_write(nullptr, "x") == S2C_ERR_INVALID);
  CHECK(s2c_raster_info(nullptr, nullptr, nullptr, nullptr, nullptr, nullptr) == S2C_ERR_INVALID);
  CHECK(s2c_config_set(nullptr, "a", "b") == S2C_ERR_INVALID);
  CHECK(s2c_run(nullptr, nullptr, nullptr, nullptr) == S2C_ERR_INVALID);
  CHECK(s2c_model_infer(nullptr, nullptr, nullptr, 0.5, nullptr, nullptr) == S2C_ERR_INVALID);
  CHECK(std::isnan(s2c_mean_iou(nullptr)));
  const s2c_confusion empty{0, 0, 0, 0};
  CHECK(std::isnan(s2c_pixel_accuracy(&empty)));
  s2c_raster_destroy(nullptr);
  s2c_model_destroy(nullptr);
  s2c_config_destroy(nullptr);
  s2c_string_free(nullptr);
  CHECK(std::string(s2c_status_name(S2C_ERR_FORMAT)) == "format");
}

TEST_CASE("raster create, write, read") {
  s2c::test::TempDir dir("capi");
  const std::vector<double> v = {0.0, 0.25, 0.5, 1.0, 0.1, 0.2};
  s2c_raster* r = nullptr;
  REQUIRE(s2c_raster_create(S2C_MULTISPECTRAL, 3, 1, 2, v.data(), 10.0, &r) == S2C_OK);
  const auto path = (dir / "t.s2c").string();
  CHECK(s2c_raster_write(r, path.c_str()) == S2C_OK);
  s2c_raster* back = nullptr;
  REQUIRE(s2c_raster_read(path.c_str(), &back) == S2C_OK);
  s2c_raster_kind kind;
  int w, h, c;
  double mpp;
  CHECK(s2c_raster_info(back, &kind, &w, &h, &c, &mpp) == S2C_OK);
  CHECK(kind == S2C_MULTISPECTRAL);
  CHECK((w == 3 && h == 1 && c == 2 && mpp == 10.0));
  std::vector<double> out(6);
  CHECK(s2c_raster_copy_data(back, out.data(), out.size()) == S2C_OK);
  CHECK(out == v);
  CHECK(s2c_raster_copy_data(back, out.data(), 5) == S2C_ERR_USAGE);
  CHECK(s2c_raster_export_pgm(back, (dir / "t.pgm").string().c_str()) == S2C_ERR_USAGE);
  s2c_raster_destroy(r);
  s2c_raster_destroy(back);

  const std::vector<double> bad = {2.0};
  CHECK(s2c_raster_create(S2C_BINARY_MASK, 1, 1, 1, bad.data(), 10.0, &r) == S2C_ERR_USAGE);
  CHECK(r == nullptr);

  s2c::test::spit(dir / "junk.s2c", "nope");
  CHECK(s2c_raster_read((dir / "junk.s2c").string().c_str(), &r) == S2C_ERR_FORMAT);
  CHECK(s2c_raster_read((dir / "none.s2c").string().c_str(), &r) == S2C_ERR_IO);
}

TEST_CASE("confusion and metrics") {
  const std::vector<double> pred = {1, 1, 0, 0}, truth = {1, 0, 0, 1};
  s2c_raster *p = nullptr, *t = nullptr;
  REQUIRE(s2c_raster_create(S2C_BINARY_MASK, 2, 2, 1, pred.data(), 10.0, &p) == S2C_OK);
  REQUIRE(s2c_raster_create(S2C_BINARY_MASK, 2, 2, 1, truth.data(), 10.0, &t) == S2C_OK);
  s2c_confusion c{};
  REQUIRE(s2c_confusion_compute(p, t, &c) == S2C_OK);
  CHECK((c.tp == 1 && c.fp == 1 && c.tn == 1 && c.fn == 1));
  CHECK(s2c_pixel_accuracy(&c) == 50.0);
  CHECK(s2c_mean_iou(&c) == doctest::Approx(100.0 / 3.0));
  s2c_raster_destroy(p);
  s2c_raster_destroy(t);
}

TEST_CASE("command tables and config") {
  CHECK(s2c_command_count() == 8);
  CHECK(std::string(s2c_command_name(0)) == "gen");
  CHECK(s2c_command_name(99) == nullptr);
  std::size_t n = 0;
  REQUIRE(s2c_command_key_count("gen", &n) == S2C_OK);
  CHECK(n > 10);
  CHECK(s2c_command_key_count("fly", &n) == S2C_ERR_USAGE);

  s2c_config* cfg = nullptr;
  CHECK(s2c_config_create("fly", &cfg) == S2C_ERR_USAGE);
  REQUIRE(s2c_config_create("gen", &cfg) == S2C_OK);
  CHECK(s2c_config_set(cfg, "bogus", "1") == S2C_ERR_USAGE);
  CHECK(s2c_config_set(cfg, "tiles", "4") == S2C_OK);
  char* v = nullptr;
  REQUIRE(s2c_config_get(cfg, "tiles", &v) == S2C_OK);
  CHECK(take(v) == "4");
  // required key missing
  CHECK(s2c_run(cfg, nullptr, nullptr, nullptr) == S2C_ERR_USAGE);
  s2c_config_destroy(cfg);
}

TEST_CASE("run gen, then infer through the API") {
  s2c::test::TempDir dir("capi");
  s2c_config* cfg = nullptr;
  REQUIRE(s2c_config_create("gen", &cfg) == S2C_OK);
  const auto data = (dir / "data").string();
  s2c_config_set(cfg, "out", data.c_str());
  s2c_config_set(cfg, "tiles", "6");
  s2c_config_set(cfg, "test_tiles", "2");
  s2c_config_set(cfg, "size", "16");
  s2c_config_set(cfg, "confuser_radius", "3");
  int lines = 0;
  char* result = nullptr;
  REQUIRE(s2c_run(cfg, [](const char*, void* u) { ++*static_cast<int*>(u); }, &lines, &result) == S2C_OK);
  CHECK(take(result).find("tiles=6") != std::string::npos);
  CHECK(std::filesystem::exists(dir / "data/manifest.tsv"));
  CHECK(std::filesystem::exists(dir / "data/resolved.cfg"));
  char* text = nullptr;
  REQUIRE(s2c_config_resolved(cfg, &text) == S2C_OK);
  CHECK(take(text).find("tiles=6") != std::string::npos);
  s2c_config_destroy(cfg);

  REQUIRE(s2c_config_create("train", &cfg) == S2C_OK);
  const auto manifest = data + "/manifest.tsv", out = (dir / "m").string();
  s2c_config_set(cfg, "manifest", manifest.c_str());
  s2c_config_set(cfg, "out", out.c_str());
  s2c_config_set(cfg, "model", "unet");
  s2c_config_set(cfg, "epochs", "1");
  s2c_config_set(cfg, "base", "4");
  REQUIRE(s2c_run(cfg, nullptr, nullptr, nullptr) == S2C_OK);
  s2c_config_destroy(cfg);

  s2c_model* m = nullptr;
  REQUIRE(s2c_model_load((out + "/model.ckpt").c_str(), &m) == S2C_OK);
  int kind = -1, uses = -1, in = -1;
  CHECK(s2c_model_info(m, &kind, &uses, &in) == S2C_OK);
  CHECK((kind == 0 && uses == 0 && in == 4));
  s2c_raster* tile = nullptr;
  bool found = false;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir / "data"))
    if (e.path().string().find("imagery") != std::string::npos && e.path().extension() == ".s2c") {
      REQUIRE(s2c_raster_read(e.path().string().c_str(), &tile) == S2C_OK);
      found = true;
      break;
    }
  REQUIRE(found);
  s2c_raster *prob = nullptr, *mask = nullptr;
  REQUIRE(s2c_model_infer(m, tile, nullptr, 0.5, &prob, &mask) == S2C_OK);
  s2c_raster_kind k;
  int w, h, c;
  double mpp;
  s2c_raster_info(prob, &k, &w, &h, &c, &mpp);
  CHECK((k == S2C_PROBABILITY_MASK && w == 16 && h == 16 && c == 1));
  s2c_raster_info(mask, &k, &w, &h, &c, &mpp);
  CHECK(k == S2C_BINARY_MASK);
  CHECK(s2c_raster_export_pgm(mask, (dir / "m.pgm").string().c_str()) == S2C_OK);
  s2c_raster* none = nullptr;
  CHECK(s2c_model_infer(m, mask, nullptr, 0.5, &none, nullptr) == S2C_ERR_USAGE);
  CHECK(none == nullptr);
  s2c_raster_destroy(prob);
  s2c_raster_destroy(mask);
  s2c_raster_destroy(tile);
  s2c_model_destroy(m);
  CHECK(s2c_model_load((dir / "none.ckpt").string().c_str(), &m) == S2C_ERR_IO);
}

}  // TEST_SUITE
