// Drives the s2c binary as a subprocess: exit codes, config layering and
// reproducibility of the gen -> train -> eval chain.
#include <cstdlib>
#include <filesystem>
#include <map>
#include <string>
#include <sys/wait.h>

#include "doctest.h"
#include "support.hpp"

#ifndef S2C_CLI_PATH
#error "S2C_CLI_PATH must point at the s2c binary"
#endif

namespace fs = std::filesystem;

namespace {

int run(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(S2C_CLI_PATH) + " " + args + " >" + log.string() + " 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::string gen_args(const fs::path& out) {
  return "gen --out " + out.string() + " --tiles 8 --test-tiles 3 --size 16 --confuser-radius 3";
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("exit codes") {
  s2c::test::TempDir dir("cli");
  const auto log = dir / "log";
  CHECK(run("--version", log) == 0);
  CHECK(run("", log) == 2);
  CHECK(run("fly", log) == 2);
  CHECK(run("gen", log) == 2);                                      // --out missing
  CHECK(run("gen --out x --tiles zero", log) == 2);                  // bad value
  CHECK(run("train --manifest " + (dir / "none.tsv").string() + " --out " + (dir / "o").string(), log) == 3);
  s2c::test::spit(dir / "bad.tsv", "garbage\n");
  CHECK(run("train --manifest " + (dir / "bad.tsv").string() + " --out " + (dir / "o").string(), log) == 3);
  CHECK(run("gradcheck --tolerance 1e-30", log) == 4);
  CHECK(run("gradcheck", log) == 0);
  CHECK(s2c::test::slurp(log).find("pass") != std::string::npos);
}

TEST_CASE("config file with flag override") {
  s2c::test::TempDir dir("cli");
  s2c::test::spit(dir / "gen.cfg", "tiles = 5\ntest_tiles = 2\nsize = 16\nconfuser_radius = 3\nseed = 9\n");
  REQUIRE(run("gen --config " + (dir / "gen.cfg").string() + " --seed 11 --out " + (dir / "d").string(),
              dir / "log") == 0);
  const auto resolved = s2c::test::slurp(dir / "d/resolved.cfg");
  CHECK(resolved.find("tiles=5") != std::string::npos);
  CHECK(resolved.find("seed=11") != std::string::npos);
  CHECK(run("gen --config " + (dir / "missing.cfg").string() + " --out " + (dir / "e").string(), dir / "log") == 2);
}

TEST_CASE("gen, train and eval are reproducible") {
  s2c::test::TempDir dir("cli");
  // Same paths both times: resolved configs record them.
  const auto root = dir / "run";
  std::map<std::string, std::string> first[3];
  for (int pass = 0; pass < 2; ++pass) {
    fs::remove_all(root);
    REQUIRE(run(gen_args(root / "data"), dir / "log") == 0);
    const auto manifest = (root / "data/manifest.tsv").string();
    REQUIRE(run("train --manifest " + manifest + " --out " + (root / "m").string() +
                    " --points tdc-low --epochs 1 --base 4 --batch 4",
                dir / "log") == 0);
    REQUIRE(run("eval --ckpt " + (root / "m/model.ckpt").string() + " --manifest " + manifest + " --out " +
                    (root / "e").string(),
                dir / "log") == 0);
    const std::map<std::string, std::string> now[3] = {s2c::test::tree(root / "data"), s2c::test::tree(root / "m"),
                                                       s2c::test::tree(root / "e")};
    if (pass == 0) {
      for (int i = 0; i < 3; ++i) first[i] = now[i];
      CHECK_FALSE(now[2].empty());
    } else {
      for (int i = 0; i < 3; ++i) CHECK(now[i] == first[i]);
    }
  }
}

}  // TEST_SUITE
