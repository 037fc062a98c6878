#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <fstream>

#include "parsrec/config.hpp"
#include "parsrec/synth.hpp"

using namespace parsrec;

namespace {

std::string write_temp(const std::string& body) {
  const std::string path = "config_test.cfg";
  std::ofstream out(path);
  out << body;
  return path;
}

}  // namespace

TEST_CASE("empty file yields pure defaults") {
  const auto path = write_temp("");
  const auto cfg = load_config(path, {});
  CHECK(cfg == RunConfig{});
  CHECK(cfg.synth.n_users == 1024);
  CHECK(cfg.model.d_v == 32);
  CHECK(cfg.train.max_epochs == 30);
  CHECK(cfg.train.batch_size == 256);
  std::remove(path.c_str());
}

TEST_CASE("missing path argument means defaults without file IO") {
  const auto cfg = load_config("", {});
  CHECK(cfg == RunConfig{});
  CHECK_THROWS(load_config("no_such_file.cfg", {}));
}

TEST_CASE("file values override defaults, CLI overrides the file") {
  const auto path = write_temp(
      "seed 42\n"
      "[synth]\n"
      "n_users 64\n"
      "tau 1.5  # trailing comment\n"
      "[train]\n"
      "batch_size 32\n");
  const auto cfg = load_config(path, {{"seed", "99"}, {"train.lr", "0.01"}});
  CHECK(cfg.seed == 99);  // CLI wins over the file's 42
  CHECK(cfg.synth.seed == 99);
  CHECK(cfg.train.seed == 99);
  CHECK(cfg.synth.n_users == 64);
  CHECK(cfg.synth.tau == 1.5);
  CHECK(cfg.train.batch_size == 32);
  CHECK(cfg.train.adam.lr == 0.01);
  std::remove(path.c_str());
}

TEST_CASE("unknown keys and bad values are named in errors") {
  const auto path = write_temp("[synth]\nn_userz 5\n");
  try {
    load_config(path, {});
    FAIL("expected an error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("n_userz") != std::string::npos);
  }
  std::remove(path.c_str());

  CHECK_THROWS(load_config("", {{"synth.n_users", "many"}}));
  CHECK_THROWS(load_config("", {{"model.use_ln", "maybe"}}));
  CHECK_THROWS(load_config("", {{"nosection.key", "1"}}));
  const auto path2 = write_temp("[synth]\nn_users\n");  // value missing
  CHECK_THROWS(load_config(path2, {}));
  std::remove(path2.c_str());
}

TEST_CASE("plan blocks parse into usable covariance plans") {
  const auto path = write_temp(
      "[synth]\n"
      "n_categories 4\n"
      "plan 0;0,1;0:1=0.6\n"
      "plan 0;2,3;0:1=-0.4\n"
      "plan 1;0,1;\n");
  const auto cfg = load_config(path, {});
  REQUIRE(cfg.synth.plans.size() == 2);
  REQUIRE(cfg.synth.plans[0].blocks.size() == 2);
  CHECK(cfg.synth.plans[0].blocks[0].members == std::vector<int>{0, 1});
  CHECK(cfg.synth.plans[0].blocks[0].corr ==
        std::vector<double>{1, 0.6, 0.6, 1});
  CHECK(cfg.synth.plans[0].blocks[1].corr ==
        std::vector<double>{1, -0.4, -0.4, 1});
  CHECK(cfg.synth.plans[1].blocks[0].corr == std::vector<double>{1, 0, 0, 1});
  // The parsed plans build a valid covariance.
  CHECK_NOTHROW(build_group_sigma(cfg.synth.plans[0], 4));
  std::remove(path.c_str());

  CHECK_THROWS(load_config("", {{"synth.plan", "0;0,1"}}));
  CHECK_THROWS(load_config("", {{"synth.plan", "0;0,1;5:1=0.2"}}));
}

TEST_CASE("config echo round-trips through the parser") {
  const auto path = write_temp(
      "seed 7\n"
      "out_dir some_run\n"
      "dataset d.jsonl\n"
      "checkpoint m.ckpt\n"
      "[synth]\n"
      "n_users 128\n"
      "plan 0;0,1;0:1=0.6\n"
      "plan 1;0,1;\n"
      "[model]\n"
      "heads 4\n"
      "ffn_post_rnn true\n"
      "[train]\n"
      "max_epochs 5\n"
      "[analysis]\n"
      "removed_category 2\n");
  const auto cfg = load_config(path, {});
  const auto echoed = write_temp(config_echo(cfg));
  const auto back = load_config(echoed, {});
  CHECK(back == cfg);
  std::remove(path.c_str());
}
